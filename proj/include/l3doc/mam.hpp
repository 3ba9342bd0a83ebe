#pragma once

// Memory attention mechanism: knowledge-gap and factor-gap regularizers
// weighted by softmax attention over past tasks.

#include <cstddef>
#include <span>
#include <vector>

#include "l3doc/factorization.hpp"
#include "l3doc/graph.hpp"

namespace l3doc::mam {

struct MamConfig {
    double lambda = 1.0;
    bool detach_attention = true;

    void validate() const;
};

struct AttentionScores {
    std::vector<double> k;  // one per past task
    std::vector<double> c;
};

/// Softmax over each gap list, divided by l_max. Throws on empty input.
AttentionScores attention_scores(std::span<const double> k_gaps, std::span<const double> c_gaps, std::size_t l_max);

/// Graph handles of the trainable factors of the task being learned.
struct CurrentNodes {
    std::vector<ad::NodeId> knowledge;  // live L per layer
    std::vector<ad::NodeId> deconv_kernels;
    std::vector<ad::NodeId> contractions;
};

/// Sum over layers of ||L_snapshot - L||^2, differentiable in the live L only.
ad::NodeId knowledge_gap_loss(ad::Graph& graph, std::span<const ad::NodeId> live, const factor::KnowledgeBase& kb);
double knowledge_gap_value(const factor::KnowledgeBase& kb);

struct GapNodes {
    std::vector<ad::NodeId> k;  // per archived task, summed over layers
    std::vector<ad::NodeId> c;
};

/// Per archived task i: (sum_l ||K_i - K_t||^2, sum_l ||C_i - C_t||^2).
/// Archived factors enter the graph as constants.
GapNodes factor_gap_losses(ad::Graph& graph, const CurrentNodes& current, std::span<const factor::TaskFactors> archive);

struct FactorGap {
    double k;
    double c;
};
std::vector<FactorGap> factor_gap_values(const factor::TaskFactors& current,
                                         std::span<const factor::TaskFactors> archive);

struct TotalLoss {
    ad::NodeId total;
    AttentionScores scores;  // empty for the first task
    double knowledge_gap = 0.0;
};

/// lc alone when the archive is empty (first task); otherwise
/// lc + lambda * L_L + sum_i a_Ki * L_Ki + sum_i a_Ci * L_Ci.
TotalLoss total_loss(ad::Graph& graph, ad::NodeId lc, const factor::KnowledgeBase& kb, const CurrentNodes& current,
                     std::span<const factor::TaskFactors> archive, const MamConfig& config);

}  // namespace l3doc::mam
