#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "l3doc/tensor.hpp"

namespace l3doc::ad {

using NodeId = std::size_t;

enum class OpTag {
    Constant,
    Parameter,
    MatMul,
    Add,
    Scale,
    Relu,
    Mean,
    Reshape,
    ChannelContract,
    TransposedConv2d,
    MaxPoolPoints,
    SqL2Diff,
    Softmax,
    Stack,
    Dot,
    SoftmaxCrossEntropy,
};

const char* op_name(OpTag tag);

/// Append-only computation graph for reverse-mode differentiation.
///
/// Nodes are created by the op methods below; each node's inputs always have
/// smaller ids, so the graph is acyclic by construction. Values are computed
/// eagerly and never mutated afterwards.
class Graph {
public:
    NodeId constant(Tensor value);
    /// Leaf that receives a gradient from backward().
    NodeId parameter(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId relu(NodeId a);
    NodeId mean(NodeId a);
    NodeId reshape(NodeId a, Shape shape);
    NodeId channel_contract(NodeId c, NodeId d);
    NodeId transposed_conv2d(NodeId input, NodeId kernel);
    /// (b * points_per_object) x f -> b x f
    NodeId max_pool_points(NodeId features, std::size_t points_per_object);
    NodeId sq_l2_diff(NodeId a, NodeId b);
    NodeId softmax(NodeId v);
    /// Scalars -> vector, in argument order.
    NodeId stack(std::span<const NodeId> scalars);
    NodeId dot(NodeId a, NodeId b);
    /// Mean negative log-likelihood of `labels` under softmax(logits).
    NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels);

    [[nodiscard]] const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    [[nodiscard]] OpTag tag(NodeId id) const { return nodes_.at(id).tag; }
    [[nodiscard]] const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const std::vector<NodeId>& parameters() const noexcept { return parameters_; }
    [[nodiscard]] bool is_parameter(NodeId id) const { return nodes_.at(id).tag == OpTag::Parameter; }

private:
    friend std::map<NodeId, Tensor> backward(const Graph& graph, NodeId loss);

    struct Node {
        OpTag tag;
        std::vector<NodeId> inputs;
        Tensor value;
        double factor = 0.0;
        std::size_t group = 0;
        std::vector<std::size_t> index;  // max-pool argmax rows or class labels
    };

    NodeId push(Node node);
    void check(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;
};

/// Gradients of a scalar node with respect to every parameter of the graph.
/// Parameters the loss does not depend on get a zero tensor.
std::map<NodeId, Tensor> backward(const Graph& graph, NodeId loss);

}  // namespace l3doc::ad
