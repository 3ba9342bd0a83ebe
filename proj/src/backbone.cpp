#include "l3doc/backbone.hpp"

#include <cmath>

#include "l3doc/errors.hpp"
#include "l3doc/ops.hpp"

namespace l3doc::backbone {

void BackboneConfig::validate() const {
    if (widths.size() < 2) throw ConfigError("backbone widths need at least an input and one layer");
    for (auto w : widths) {
        if (w == 0) throw ConfigError("backbone widths must be positive");
    }
    for (auto w : head_widths) {
        if (w == 0) throw ConfigError("head widths must be positive");
    }
}

std::size_t ClassifierHead::num_elements() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

ClassifierHead init_head(const BackboneConfig& config, std::size_t classes, std::mt19937_64& rng) {
    if (classes < 2) throw ConfigError("a classification head needs at least 2 classes");
    ClassifierHead head;
    std::size_t fan_in = config.widths.back();
    for (auto w : config.head_widths) {
        head.weights.push_back(Tensor::normal({fan_in, w}, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
        head.biases.emplace_back(Shape{w});
        fan_in = w;
    }
    // Zero output layer: a new head starts at uniform class probabilities even
    // on top of large inherited features, where a random layer would saturate
    // the softmax.
    head.weights.emplace_back(Shape{fan_in, classes});
    head.biases.emplace_back(Shape{classes});
    return head;
}

NetworkNodes add_head(ad::Graph& graph, const ClassifierHead& head, bool trainable) {
    NetworkNodes nodes;
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
        nodes.head_weights.push_back(trainable ? graph.parameter(head.weights[i]) : graph.constant(head.weights[i]));
        nodes.head_biases.push_back(trainable ? graph.parameter(head.biases[i]) : graph.constant(head.biases[i]));
    }
    return nodes;
}

Tensor make_batch(std::span<const Tensor* const> clouds) {
    if (clouds.empty()) throw DimensionError("make_batch: empty batch");
    const Shape& first = clouds.front()->shape();
    if (first.size() != 2) throw DimensionError("make_batch: clouds must be n_pts x d, got " + shape_to_string(first));
    std::vector<double> data;
    data.reserve(clouds.size() * clouds.front()->size());
    for (const Tensor* c : clouds) {
        if (c->shape() != first) {
            throw DimensionError("make_batch: cloud shape " + shape_to_string(c->shape()) + " differs from " +
                                 shape_to_string(first));
        }
        data.insert(data.end(), c->values().begin(), c->values().end());
    }
    return Tensor({clouds.size(), first[0], first[1]}, std::move(data));
}

ad::NodeId forward(ad::Graph& graph, ad::NodeId batch, const NetworkNodes& net) {
    const Shape bshape = graph.value(batch).shape();
    if (bshape.size() != 3) throw DimensionError("forward: batch must be b x n_pts x d, got " + shape_to_string(bshape));
    if (net.kernels.size() != net.biases.size() || net.kernels.empty()) {
        throw DimensionError("forward: need one bias per kernel and at least one layer");
    }
    const std::size_t points = bshape[1];
    std::size_t width = bshape[2];
    ad::NodeId h = graph.reshape(batch, {bshape[0] * points, width});
    for (std::size_t l = 0; l < net.kernels.size(); ++l) {
        const Shape ks = graph.value(net.kernels[l]).shape();
        if (ks.size() != 4 || ks[0] != 1 || ks[1] != 1 || ks[2] != width) {
            throw DimensionError("forward: layer " + std::to_string(l) + " kernel " + shape_to_string(ks) +
                                 " does not accept width " + std::to_string(width));
        }
        const ad::NodeId w = graph.reshape(net.kernels[l], {ks[2], ks[3]});
        h = graph.relu(graph.add(graph.matmul(h, w), net.biases[l]));
        width = ks[3];
    }
    h = graph.max_pool_points(h, points);
    if (net.head_weights.empty() || net.head_weights.size() != net.head_biases.size()) {
        throw DimensionError("forward: malformed classifier head");
    }
    for (std::size_t i = 0; i < net.head_weights.size(); ++i) {
        if (graph.value(net.head_weights[i]).dim(0) != width) {
            throw DimensionError("forward: head layer " + std::to_string(i) + " expects width " +
                                 std::to_string(graph.value(net.head_weights[i]).dim(0)) + ", got " +
                                 std::to_string(width));
        }
        h = graph.add(graph.matmul(h, net.head_weights[i]), net.head_biases[i]);
        if (i + 1 < net.head_weights.size()) h = graph.relu(h);
        width = graph.value(net.head_weights[i]).dim(1);
    }
    return h;
}

namespace {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor y({labels.size(), classes});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= classes) {
            throw DimensionError("label " + std::to_string(labels[r]) + " out of range for " + std::to_string(classes) +
                                 " classes");
        }
        y[r * classes + labels[r]] = 1.0;
    }
    return y;
}

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("logits " + shape_to_string(logits.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
}

}  // namespace

ad::NodeId classification_loss(ad::Graph& graph, ad::NodeId logits, std::span<const std::size_t> labels,
                               LossKind kind) {
    const Tensor& z = graph.value(logits);
    check_labels(z, labels);
    if (kind == LossKind::CrossEntropy) {
        for (auto l : labels) {
            if (l >= z.dim(1)) throw DimensionError("label out of range");
        }
        return graph.softmax_cross_entropy(logits, {labels.begin(), labels.end()});
    }
    const std::size_t classes = z.dim(1);
    const ad::NodeId target = graph.constant(one_hot(labels, classes));
    const ad::NodeId sse = graph.sq_l2_diff(graph.softmax(logits), target);
    return graph.scale(sse, 1.0 / static_cast<double>(labels.size()));
}

Tensor forward_values(const Tensor& batch, std::span<const Tensor> kernels, std::span<const Tensor> biases,
                      const ClassifierHead& head) {
    ad::Graph graph;
    NetworkNodes net = add_head(graph, head, false);
    for (const auto& k : kernels) net.kernels.push_back(graph.constant(k));
    for (const auto& b : biases) net.biases.push_back(graph.constant(b));
    const ad::NodeId out = forward(graph, graph.constant(batch), net);
    return graph.value(out);
}

double classification_loss_value(const Tensor& logits, std::span<const std::size_t> labels, LossKind kind) {
    ad::Graph graph;
    const ad::NodeId loss = classification_loss(graph, graph.constant(logits), labels, kind);
    return graph.value(loss).item();
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
    check_labels(logits, labels);
    const auto predicted = ops::argmax_rows(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace l3doc::backbone
