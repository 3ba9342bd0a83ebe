#pragma once

// Simplified PointNet classifier: a shared per-point MLP of 1x1 kernels,
// a global max-pool over points and a per-task dense head.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "l3doc/graph.hpp"
#include "l3doc/tensor.hpp"

namespace l3doc::backbone {

enum class LossKind { SquaredError, CrossEntropy };

struct BackboneConfig {
    std::vector<std::size_t> widths{3, 64, 64, 64, 128, 1024};
    std::vector<std::size_t> head_widths{256};
    LossKind loss = LossKind::SquaredError;

    [[nodiscard]] std::size_t point_dim() const { return widths.front(); }
    [[nodiscard]] std::size_t num_layers() const { return widths.size() - 1; }
    void validate() const;
};

/// Per-task dense classifier: widths.back() -> head_widths... -> classes.
struct ClassifierHead {
    std::vector<Tensor> weights;  // fan_in x fan_out
    std::vector<Tensor> biases;   // fan_out

    [[nodiscard]] std::size_t num_classes() const { return biases.back().size(); }
    [[nodiscard]] std::size_t num_elements() const;
    friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

/// He-scaled normal hidden layers, zero output layer, zero biases.
ClassifierHead init_head(const BackboneConfig& config, std::size_t classes, std::mt19937_64& rng);

/// Graph handles of every parameter used by one forward pass.
struct NetworkNodes {
    std::vector<ad::NodeId> kernels;  // 1 x 1 x w_in x w_out
    std::vector<ad::NodeId> biases;   // w_out
    std::vector<ad::NodeId> head_weights;
    std::vector<ad::NodeId> head_biases;
};

NetworkNodes add_head(ad::Graph& graph, const ClassifierHead& head, bool trainable);

/// Stacks clouds (all n_pts x d) into a b x n_pts x d batch.
Tensor make_batch(std::span<const Tensor* const> clouds);

/// batch: b x n_pts x d node. Returns b x classes logits.
ad::NodeId forward(ad::Graph& graph, ad::NodeId batch, const NetworkNodes& net);

/// Mean over the batch of the loss between logits and integer labels.
/// SquaredError compares softmax probabilities against one-hot targets.
ad::NodeId classification_loss(ad::Graph& graph, ad::NodeId logits, std::span<const std::size_t> labels,
                               LossKind kind = LossKind::SquaredError);

/// Value-level forward without retaining a graph.
Tensor forward_values(const Tensor& batch, std::span<const Tensor> kernels, std::span<const Tensor> biases,
                      const ClassifierHead& head);

double classification_loss_value(const Tensor& logits, std::span<const std::size_t> labels,
                                 LossKind kind = LossKind::SquaredError);

/// Argmax match rate; ties resolve to the lowest class index.
double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace l3doc::backbone
