#include "l3doc/graph.hpp"

#include <cmath>
#include <optional>

#include "l3doc/errors.hpp"
#include "l3doc/ops.hpp"

namespace l3doc::ad {

const char* op_name(OpTag tag) {
    switch (tag) {
        case OpTag::Constant: return "constant";
        case OpTag::Parameter: return "parameter";
        case OpTag::MatMul: return "matmul";
        case OpTag::Add: return "add";
        case OpTag::Scale: return "scale";
        case OpTag::Relu: return "relu";
        case OpTag::Mean: return "mean";
        case OpTag::Reshape: return "reshape";
        case OpTag::ChannelContract: return "channel_contract";
        case OpTag::TransposedConv2d: return "transposed_conv2d";
        case OpTag::MaxPoolPoints: return "max_pool_points";
        case OpTag::SqL2Diff: return "sq_l2_diff";
        case OpTag::Softmax: return "softmax";
        case OpTag::Stack: return "stack";
        case OpTag::Dot: return "dot";
        case OpTag::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    }
    return "?";
}

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

void Graph::check(NodeId id) const {
    if (id >= nodes_.size()) throw std::out_of_range("graph node id " + std::to_string(id) + " does not exist");
}

NodeId Graph::constant(Tensor value) { return push({OpTag::Constant, {}, std::move(value)}); }

NodeId Graph::parameter(Tensor value) {
    const NodeId id = push({OpTag::Parameter, {}, std::move(value)});
    parameters_.push_back(id);
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    check(a), check(b);
    return push({OpTag::MatMul, {a, b}, ops::matmul(value(a), value(b))});
}

NodeId Graph::add(NodeId a, NodeId b) {
    check(a), check(b);
    return push({OpTag::Add, {a, b}, ops::add(value(a), value(b))});
}

NodeId Graph::scale(NodeId a, double factor) {
    check(a);
    Node n{OpTag::Scale, {a}, ops::scale(value(a), factor)};
    n.factor = factor;
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    check(a);
    return push({OpTag::Relu, {a}, ops::relu(value(a))});
}

NodeId Graph::mean(NodeId a) {
    check(a);
    return push({OpTag::Mean, {a}, Tensor::scalar(ops::mean(value(a)))});
}

NodeId Graph::reshape(NodeId a, Shape shape) {
    check(a);
    return push({OpTag::Reshape, {a}, value(a).reshaped(std::move(shape))});
}

NodeId Graph::channel_contract(NodeId c, NodeId d) {
    check(c), check(d);
    return push({OpTag::ChannelContract, {c, d}, ops::channel_contract(value(c), value(d))});
}

NodeId Graph::transposed_conv2d(NodeId input, NodeId kernel) {
    check(input), check(kernel);
    return push({OpTag::TransposedConv2d, {input, kernel}, ops::transposed_conv2d(value(input), value(kernel))});
}

NodeId Graph::max_pool_points(NodeId features, std::size_t points_per_object) {
    check(features);
    Node n{OpTag::MaxPoolPoints, {features}, Tensor{}};
    n.value = ops::max_pool_groups(value(features), points_per_object, &n.index);
    n.group = points_per_object;
    return push(std::move(n));
}

NodeId Graph::sq_l2_diff(NodeId a, NodeId b) {
    check(a), check(b);
    return push({OpTag::SqL2Diff, {a, b}, Tensor::scalar(ops::sq_l2_diff(value(a), value(b)))});
}

NodeId Graph::softmax(NodeId v) {
    check(v);
    return push({OpTag::Softmax, {v}, ops::softmax(value(v))});
}

NodeId Graph::stack(std::span<const NodeId> scalars) {
    if (scalars.empty()) throw DimensionError("stack: no inputs");
    Tensor out({scalars.size()});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        check(scalars[i]);
        out[i] = value(scalars[i]).item();
    }
    return push({OpTag::Stack, {scalars.begin(), scalars.end()}, std::move(out)});
}

NodeId Graph::dot(NodeId a, NodeId b) {
    check(a), check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.shape() != vb.shape()) {
        throw DimensionError("dot: incompatible shapes " + shape_to_string(va.shape()) + " and " +
                             shape_to_string(vb.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
    return push({OpTag::Dot, {a, b}, Tensor::scalar(s)});
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
    check(logits);
    const Tensor& z = value(logits);
    if (z.rank() != 2 || z.dim(0) != labels.size()) {
        throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(z.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const Tensor p = ops::softmax(z);
    const std::size_t c = z.dim(1);
    double s = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= c) throw DimensionError("softmax_cross_entropy: label out of range");
        s -= std::log(p[r * c + labels[r]]);
    }
    Node n{OpTag::SoftmaxCrossEntropy, {logits}, Tensor::scalar(s / static_cast<double>(labels.size()))};
    n.index = std::move(labels);
    return push(std::move(n));
}

namespace {

void accumulate(std::optional<Tensor>& slot, Tensor g) {
    if (!slot) {
        slot = std::move(g);
        return;
    }
    for (std::size_t i = 0; i < slot->size(); ++i) (*slot)[i] += g[i];
}

}  // namespace

std::map<NodeId, Tensor> backward(const Graph& graph, NodeId loss) {
    graph.check(loss);
    if (!graph.value(loss).is_scalar()) {
        throw DimensionError("backward: loss must be scalar, got " + shape_to_string(graph.value(loss).shape()));
    }
    const auto& nodes = graph.nodes_;
    std::vector<std::optional<Tensor>> grads(loss + 1);
    grads[loss] = Tensor::scalar(1.0);

    for (NodeId id = loss + 1; id-- > 0;) {
        if (!grads[id]) continue;
        const auto& node = nodes[id];
        const Tensor& g = *grads[id];
        const auto& in = node.inputs;
        switch (node.tag) {
            case OpTag::Constant:
            case OpTag::Parameter:
                break;
            case OpTag::MatMul: {
                const Tensor& a = nodes[in[0]].value;
                const Tensor& b = nodes[in[1]].value;
                const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
                Tensor da({m, k});
                Tensor db({k, n});
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g.data().data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = b.data().data() + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + p] = acc;
                        const double av = a[i * k + p];
                        double* dbrow = db.data().data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
                accumulate(grads[in[0]], std::move(da));
                accumulate(grads[in[1]], std::move(db));
                break;
            }
            case OpTag::Add: {
                const Tensor& b = nodes[in[1]].value;
                accumulate(grads[in[0]], g);
                if (b.shape() == g.shape()) {
                    accumulate(grads[in[1]], g);
                } else {
                    Tensor db(b.shape());
                    const std::size_t n = b.size();
                    for (std::size_t i = 0; i < g.size(); ++i) db[i % n] += g[i];
                    accumulate(grads[in[1]], std::move(db));
                }
                break;
            }
            case OpTag::Scale:
                accumulate(grads[in[0]], ops::scale(g, node.factor));
                break;
            case OpTag::Relu: {
                const Tensor& x = nodes[in[0]].value;
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(grads[in[0]], std::move(dx));
                break;
            }
            case OpTag::Mean: {
                const Tensor& x = nodes[in[0]].value;
                accumulate(grads[in[0]], Tensor(x.shape(), g.item() / static_cast<double>(x.size())));
                break;
            }
            case OpTag::Reshape:
                accumulate(grads[in[0]], g.reshaped(nodes[in[0]].value.shape()));
                break;
            case OpTag::ChannelContract: {
                const Tensor& c = nodes[in[0]].value;
                const Tensor& d = nodes[in[1]].value;
                const std::size_t n = c.dim(2);
                const std::size_t plane = d.dim(1) * d.dim(2);
                Tensor dc(c.shape());
                Tensor dd(d.shape());
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < plane; ++j) {
                        acc += g[j] * d[k * plane + j];
                        dd[k * plane + j] = c[k] * g[j];
                    }
                    dc[k] = acc;
                }
                accumulate(grads[in[0]], std::move(dc));
                accumulate(grads[in[1]], std::move(dd));
                break;
            }
            case OpTag::TransposedConv2d: {
                const Tensor& x = nodes[in[0]].value;
                const Tensor& k = nodes[in[1]].value;
                const std::size_t h = x.dim(0), w = x.dim(1), c_in = x.dim(2);
                const std::size_t s = k.dim(0), c_out = k.dim(2);
                Tensor dx(x.shape());
                Tensor dk(k.shape());
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const double* xin = x.data().data() + (y * w + xx) * c_in;
                        double* dxin = dx.data().data() + (y * w + xx) * c_in;
                        for (std::size_t dy = 0; dy < s && y + dy < h; ++dy) {
                            for (std::size_t dxo = 0; dxo < s && xx + dxo < w; ++dxo) {
                                const double* go = g.data().data() + ((y + dy) * w + (xx + dxo)) * c_out;
                                const std::size_t kbase = (dy * s + dxo) * c_out * c_in;
                                for (std::size_t oc = 0; oc < c_out; ++oc) {
                                    const double gv = go[oc];
                                    const double* krow = k.data().data() + kbase + oc * c_in;
                                    double* dkrow = dk.data().data() + kbase + oc * c_in;
                                    for (std::size_t ic = 0; ic < c_in; ++ic) {
                                        dxin[ic] += gv * krow[ic];
                                        dkrow[ic] += gv * xin[ic];
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(grads[in[0]], std::move(dx));
                accumulate(grads[in[1]], std::move(dk));
                break;
            }
            case OpTag::MaxPoolPoints: {
                const Tensor& x = nodes[in[0]].value;
                const std::size_t f = x.dim(1);
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < node.index.size(); ++i) dx[node.index[i] * f + i % f] += g[i];
                accumulate(grads[in[0]], std::move(dx));
                break;
            }
            case OpTag::SqL2Diff: {
                const Tensor& a = nodes[in[0]].value;
                const Tensor& b = nodes[in[1]].value;
                Tensor da(a.shape());
                Tensor db(b.shape());
                const double gv = g.item();
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double d = 2.0 * gv * (a[i] - b[i]);
                    da[i] = d;
                    db[i] = -d;
                }
                accumulate(grads[in[0]], std::move(da));
                accumulate(grads[in[1]], std::move(db));
                break;
            }
            case OpTag::Softmax: {
                const Tensor& p = node.value;
                const std::size_t n = p.shape().back();
                Tensor dx(p.shape());
                for (std::size_t r = 0; r < p.size() / n; ++r) {
                    double inner = 0.0;
                    for (std::size_t j = 0; j < n; ++j) inner += g[r * n + j] * p[r * n + j];
                    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] = p[r * n + j] * (g[r * n + j] - inner);
                }
                accumulate(grads[in[0]], std::move(dx));
                break;
            }
            case OpTag::Stack:
                for (std::size_t i = 0; i < in.size(); ++i) accumulate(grads[in[i]], Tensor::scalar(g[i]));
                break;
            case OpTag::Dot: {
                const double gv = g.item();
                accumulate(grads[in[0]], ops::scale(nodes[in[1]].value, gv));
                accumulate(grads[in[1]], ops::scale(nodes[in[0]].value, gv));
                break;
            }
            case OpTag::SoftmaxCrossEntropy: {
                const Tensor& z = nodes[in[0]].value;
                Tensor dz = ops::softmax(z);
                const std::size_t c = z.dim(1);
                const double rows = static_cast<double>(node.index.size());
                for (std::size_t r = 0; r < node.index.size(); ++r) dz[r * c + node.index[r]] -= 1.0;
                accumulate(grads[in[0]], ops::scale(dz, g.item() / rows));
                break;
            }
        }
    }

    std::map<NodeId, Tensor> out;
    for (NodeId p : graph.parameters_) {
        if (p <= loss && grads[p]) {
            out.emplace(p, std::move(*grads[p]));
        } else {
            out.emplace(p, Tensor(nodes[p].value.shape()));
        }
    }
    return out;
}

}  // namespace l3doc::ad
