#pragma once

// Layer-wise point-knowledge factorization.
//
// Every 1x1 kernel W (1 x 1 x w_in x w_out) of the shared point MLP is rebuilt
// per task as W = C . D with D = deconv(L; K):
//   L  n x w_in x l_out         shared knowledge base (one per layer)
//   K  s x s x w_out x l_out    task-specific deconvolution kernel
//   C  1 x 1 x n                task-specific contraction vector
// where n = w_out / n_hat and l_out = w_out / l_hat.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "l3doc/backbone.hpp"
#include "l3doc/graph.hpp"
#include "l3doc/tensor.hpp"

namespace l3doc::factor {

std::size_t latent_channels(std::size_t w_out, std::size_t n_hat);
std::size_t knowledge_channels(std::size_t w_out, std::size_t l_hat);

struct LayerDims {
    std::size_t w_in;
    std::size_t w_out;
    std::size_t n;      // latent channels
    std::size_t l_out;  // knowledge channels
};

class FactorSpec {
public:
    /// Throws ConfigError unless n_hat and l_hat divide every layer's output width.
    FactorSpec(std::size_t n_hat, std::size_t l_hat, std::size_t s, std::vector<std::size_t> widths);

    static FactorSpec group1(std::vector<std::size_t> widths) { return {16, 32, 2, std::move(widths)}; }
    static FactorSpec group2(std::vector<std::size_t> widths) { return {32, 32, 2, std::move(widths)}; }

    [[nodiscard]] std::size_t n_hat() const noexcept { return n_hat_; }
    [[nodiscard]] std::size_t l_hat() const noexcept { return l_hat_; }
    [[nodiscard]] std::size_t s() const noexcept { return s_; }
    [[nodiscard]] const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    [[nodiscard]] std::size_t num_layers() const noexcept { return layers_.size(); }
    [[nodiscard]] const LayerDims& layer(std::size_t l) const { return layers_.at(l); }

    [[nodiscard]] Shape knowledge_shape(std::size_t l) const;
    [[nodiscard]] Shape deconv_kernel_shape(std::size_t l) const;
    [[nodiscard]] Shape contraction_shape(std::size_t l) const;

private:
    std::size_t n_hat_;
    std::size_t l_hat_;
    std::size_t s_;
    std::vector<std::size_t> widths_;
    std::vector<LayerDims> layers_;
};

/// Per-layer stddev for L, K and C such that the reconstructed kernel starts
/// with variance 2 / w_in: sigma^6 * n * s^2 * l_out = 2 / w_in.
double matched_stddev(const FactorSpec& spec, std::size_t layer);

/// Shared knowledge tensors plus the frozen copy taken at the last task boundary.
class KnowledgeBase {
public:
    KnowledgeBase() = default;
    KnowledgeBase(std::vector<Tensor> layers);

    [[nodiscard]] std::size_t num_layers() const noexcept { return layers_.size(); }
    [[nodiscard]] const std::vector<Tensor>& layers() const noexcept { return layers_; }
    [[nodiscard]] std::vector<Tensor>& layers() noexcept { return layers_; }

    /// Frozen end-of-previous-task values. Every call is counted.
    [[nodiscard]] const std::vector<Tensor>& snapshot() const;
    [[nodiscard]] std::size_t snapshot_reads() const noexcept { return snapshot_reads_; }

    /// Freezes the current live values as the new snapshot.
    void take_snapshot();

    [[nodiscard]] std::size_t num_elements() const;

private:
    std::vector<Tensor> layers_;
    std::vector<Tensor> snapshot_;
    mutable std::size_t snapshot_reads_ = 0;
};

/// Normal(0, stddev) entries; matched_stddev per layer when stddev is unset.
KnowledgeBase init_knowledge_base(const FactorSpec& spec, std::uint64_t seed,
                                  std::optional<double> stddev = std::nullopt);

struct TaskFactors {
    std::size_t task_id = 0;
    std::vector<Tensor> deconv_kernels;  // K per layer
    std::vector<Tensor> contractions;    // C per layer
    std::vector<Tensor> biases;          // per-layer bias of the point MLP
    backbone::ClassifierHead head;

    /// Elements of K and C only.
    [[nodiscard]] std::size_t factor_elements() const;
    /// Biases and head, the parameters outside the factorization.
    [[nodiscard]] std::size_t additional_elements() const;
    friend bool operator==(const TaskFactors&, const TaskFactors&) = default;
};

/// Fresh random factors when `prev` is empty; otherwise a deep copy of the
/// previous task's K, C and layer biases. The head is always freshly drawn
/// because the class count may change between tasks.
TaskFactors init_or_inherit_factors(const TaskFactors* prev, const FactorSpec& spec,
                                    const backbone::BackboneConfig& backbone, std::size_t classes,
                                    std::size_t task_id, std::uint64_t seed,
                                    std::optional<double> stddev = std::nullopt);

/// Value-level W = C . deconv(L; K), shape 1 x 1 x w_in x w_out.
Tensor reconstruct_kernel(const Tensor& knowledge, const Tensor& deconv_kernel, const Tensor& contraction);

/// Differentiable reconstruction; gradients flow to all three inputs.
ad::NodeId reconstruct_kernel(ad::Graph& graph, ad::NodeId knowledge, ad::NodeId deconv_kernel,
                              ad::NodeId contraction);

/// Rebuilds every layer's kernel from `kb` and `factors`.
std::vector<Tensor> reconstruct_all(const KnowledgeBase& kb, const TaskFactors& factors);

// Parameter accounting -----------------------------------------------------

/// Sum over layers of w_in * w_out, times t_max.
std::uint64_t count_stl(std::span<const std::size_t> widths, std::uint64_t t_max);

std::uint64_t count_dfcnn(std::span<const std::size_t> widths, std::uint64_t u, std::uint64_t v_h, std::uint64_t v_w,
                          std::uint64_t l_h, std::uint64_t l_w, std::uint64_t l_c, std::uint64_t t_max);

struct LayerCount {
    std::uint64_t per_task;  // n + s^2 * w_out * l_out
    std::uint64_t shared;    // n * w_in * l_out
};

std::vector<LayerCount> count_l3doc_layers(const FactorSpec& spec);
/// Sum over layers of per_task * t_max + shared.
std::uint64_t count_l3doc(const FactorSpec& spec, std::uint64_t t_max);

/// Elements actually allocated for L, K and C (heads and biases excluded).
std::uint64_t parameter_census(const KnowledgeBase& kb, std::span<const TaskFactors> tasks);

}  // namespace l3doc::factor
