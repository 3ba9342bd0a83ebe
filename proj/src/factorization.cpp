#include "l3doc/factorization.hpp"

#include <cmath>

#include "l3doc/errors.hpp"
#include "l3doc/ops.hpp"

namespace l3doc::factor {

namespace {

std::size_t shrink(std::size_t w_out, std::size_t scale, const char* what) {
    if (scale == 0) throw ConfigError(std::string(what) + " shrinkage scale must be positive");
    if (w_out % scale != 0) {
        throw ConfigError(std::string(what) + " shrinkage scale " + std::to_string(scale) + " does not divide width " +
                          std::to_string(w_out));
    }
    return w_out / scale;
}

}  // namespace

std::size_t latent_channels(std::size_t w_out, std::size_t n_hat) { return shrink(w_out, n_hat, "n_hat"); }

std::size_t knowledge_channels(std::size_t w_out, std::size_t l_hat) { return shrink(w_out, l_hat, "l_hat"); }

FactorSpec::FactorSpec(std::size_t n_hat, std::size_t l_hat, std::size_t s, std::vector<std::size_t> widths)
    : n_hat_(n_hat), l_hat_(l_hat), s_(s), widths_(std::move(widths)) {
    if (s_ == 0) throw ConfigError("deconvolution spatial size s must be positive");
    if (widths_.size() < 2) throw ConfigError("widths need an input width and at least one layer");
    for (auto w : widths_) {
        if (w == 0) throw ConfigError("widths must be positive");
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const std::size_t w_out = widths_[l + 1];
        layers_.push_back({widths_[l], w_out, latent_channels(w_out, n_hat_), knowledge_channels(w_out, l_hat_)});
    }
}

Shape FactorSpec::knowledge_shape(std::size_t l) const {
    const auto& d = layer(l);
    return {d.n, d.w_in, d.l_out};
}

Shape FactorSpec::deconv_kernel_shape(std::size_t l) const {
    const auto& d = layer(l);
    return {s_, s_, d.w_out, d.l_out};
}

Shape FactorSpec::contraction_shape(std::size_t l) const { return {1, 1, layer(l).n}; }

KnowledgeBase::KnowledgeBase(std::vector<Tensor> layers) : layers_(std::move(layers)), snapshot_(layers_) {}

const std::vector<Tensor>& KnowledgeBase::snapshot() const {
    ++snapshot_reads_;
    return snapshot_;
}

void KnowledgeBase::take_snapshot() { snapshot_ = layers_; }

std::size_t KnowledgeBase::num_elements() const {
    std::size_t n = 0;
    for (const auto& t : layers_) n += t.size();
    return n;
}

double matched_stddev(const FactorSpec& spec, std::size_t layer) {
    const LayerDims& d = spec.layer(layer);
    const double terms = static_cast<double>(d.n * spec.s() * spec.s() * d.l_out);
    return std::pow(2.0 / (static_cast<double>(d.w_in) * terms), 1.0 / 6.0);
}

KnowledgeBase init_knowledge_base(const FactorSpec& spec, std::uint64_t seed, std::optional<double> stddev) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> layers;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const double sd = stddev.value_or(matched_stddev(spec, l));
        layers.push_back(Tensor::normal(spec.knowledge_shape(l), 0.0, sd, rng));
    }
    return KnowledgeBase(std::move(layers));
}

std::size_t TaskFactors::factor_elements() const {
    std::size_t n = 0;
    for (const auto& k : deconv_kernels) n += k.size();
    for (const auto& c : contractions) n += c.size();
    return n;
}

std::size_t TaskFactors::additional_elements() const {
    std::size_t n = head.num_elements();
    for (const auto& b : biases) n += b.size();
    return n;
}

TaskFactors init_or_inherit_factors(const TaskFactors* prev, const FactorSpec& spec,
                                    const backbone::BackboneConfig& backbone, std::size_t classes,
                                    std::size_t task_id, std::uint64_t seed, std::optional<double> stddev) {
    std::mt19937_64 rng(seed);
    TaskFactors f;
    f.task_id = task_id;
    if (prev) {
        if (prev->deconv_kernels.size() != spec.num_layers()) {
            throw DimensionError("inherited factors have " + std::to_string(prev->deconv_kernels.size()) +
                                 " layers, spec has " + std::to_string(spec.num_layers()));
        }
        f.deconv_kernels = prev->deconv_kernels;
        f.contractions = prev->contractions;
        f.biases = prev->biases;
    } else {
        for (std::size_t l = 0; l < spec.num_layers(); ++l) {
            const double sd = stddev.value_or(matched_stddev(spec, l));
            f.deconv_kernels.push_back(Tensor::normal(spec.deconv_kernel_shape(l), 0.0, sd, rng));
            f.contractions.push_back(Tensor::normal(spec.contraction_shape(l), 0.0, sd, rng));
            f.biases.emplace_back(Shape{spec.layer(l).w_out});
        }
    }
    f.head = backbone::init_head(backbone, classes, rng);
    return f;
}

Tensor reconstruct_kernel(const Tensor& knowledge, const Tensor& deconv_kernel, const Tensor& contraction) {
    ad::Graph graph;
    const ad::NodeId w = reconstruct_kernel(graph, graph.constant(knowledge), graph.constant(deconv_kernel),
                                            graph.constant(contraction));
    return graph.value(w);
}

ad::NodeId reconstruct_kernel(ad::Graph& graph, ad::NodeId knowledge, ad::NodeId deconv_kernel,
                              ad::NodeId contraction) {
    const Shape& ls = graph.value(knowledge).shape();
    const Shape& ks = graph.value(deconv_kernel).shape();
    const Shape& cs = graph.value(contraction).shape();
    if (ls.size() != 3 || ks.size() != 4 || cs.size() != 3 || ks[3] != ls[2] || cs[2] != ls[0]) {
        throw DimensionError("reconstruct_kernel: inconsistent shapes L" + shape_to_string(ls) + " K" +
                             shape_to_string(ks) + " C" + shape_to_string(cs));
    }
    // L is an n x w_in grid with l_out channels; deconvolution lifts it to w_out channels.
    const ad::NodeId d = graph.transposed_conv2d(knowledge, deconv_kernel);
    return graph.channel_contract(contraction, d);
}

std::vector<Tensor> reconstruct_all(const KnowledgeBase& kb, const TaskFactors& factors) {
    if (kb.num_layers() != factors.deconv_kernels.size()) {
        throw DimensionError("knowledge base and task factors disagree on layer count");
    }
    std::vector<Tensor> kernels;
    for (std::size_t l = 0; l < kb.num_layers(); ++l) {
        kernels.push_back(reconstruct_kernel(kb.layers()[l], factors.deconv_kernels[l], factors.contractions[l]));
    }
    return kernels;
}

std::uint64_t count_stl(std::span<const std::size_t> widths, std::uint64_t t_max) {
    std::uint64_t n_w = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n_w += std::uint64_t{widths[l]} * widths[l + 1];
    return n_w * t_max;
}

std::uint64_t count_dfcnn(std::span<const std::size_t> widths, std::uint64_t u, std::uint64_t v_h, std::uint64_t v_w,
                          std::uint64_t l_h, std::uint64_t l_w, std::uint64_t l_c, std::uint64_t t_max) {
    const std::uint64_t n_w = count_stl(widths, 1);
    return u * (n_w + v_h * v_w * l_h) * t_max + l_h * l_w * l_c;
}

std::vector<LayerCount> count_l3doc_layers(const FactorSpec& spec) {
    std::vector<LayerCount> out;
    const std::uint64_t s2 = std::uint64_t{spec.s()} * spec.s();
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& d = spec.layer(l);
        out.push_back({d.n + s2 * d.w_out * d.l_out, std::uint64_t{d.n} * d.w_in * d.l_out});
    }
    return out;
}

std::uint64_t count_l3doc(const FactorSpec& spec, std::uint64_t t_max) {
    std::uint64_t total = 0;
    for (const auto& c : count_l3doc_layers(spec)) total += c.per_task * t_max + c.shared;
    return total;
}

std::uint64_t parameter_census(const KnowledgeBase& kb, std::span<const TaskFactors> tasks) {
    std::uint64_t total = kb.num_elements();
    for (const auto& t : tasks) total += t.factor_elements();
    return total;
}

}  // namespace l3doc::factor
