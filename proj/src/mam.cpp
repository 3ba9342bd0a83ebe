#include "l3doc/mam.hpp"

#include <cmath>

#include "l3doc/errors.hpp"
#include "l3doc/ops.hpp"

namespace l3doc::mam {

void MamConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("mam lambda must be a finite value >= 0");
}

namespace {

std::vector<double> scaled_softmax(std::span<const double> gaps, std::size_t l_max) {
    const Tensor p = ops::softmax(Tensor({gaps.size()}, std::vector<double>(gaps.begin(), gaps.end())));
    std::vector<double> out(p.values());
    for (auto& v : out) v /= static_cast<double>(l_max);
    return out;
}

}  // namespace

AttentionScores attention_scores(std::span<const double> k_gaps, std::span<const double> c_gaps, std::size_t l_max) {
    if (k_gaps.empty() || c_gaps.empty()) throw DimensionError("attention_scores: no past tasks");
    if (k_gaps.size() != c_gaps.size()) throw DimensionError("attention_scores: K and C gap counts differ");
    if (l_max == 0) throw ConfigError("attention_scores: l_max must be positive");
    return {scaled_softmax(k_gaps, l_max), scaled_softmax(c_gaps, l_max)};
}

ad::NodeId knowledge_gap_loss(ad::Graph& graph, std::span<const ad::NodeId> live, const factor::KnowledgeBase& kb) {
    const auto& frozen = kb.snapshot();
    if (live.size() != frozen.size() || live.empty()) {
        throw DimensionError("knowledge_gap_loss: layer count mismatch");
    }
    ad::NodeId sum = graph.sq_l2_diff(graph.constant(frozen[0]), live[0]);
    for (std::size_t l = 1; l < live.size(); ++l) {
        sum = graph.add(sum, graph.sq_l2_diff(graph.constant(frozen[l]), live[l]));
    }
    return sum;
}

double knowledge_gap_value(const factor::KnowledgeBase& kb) {
    const auto& frozen = kb.snapshot();
    double sum = 0.0;
    for (std::size_t l = 0; l < kb.num_layers(); ++l) sum += ops::sq_l2_diff(frozen[l], kb.layers()[l]);
    return sum;
}

namespace {

ad::NodeId layer_sum(ad::Graph& graph, std::span<const Tensor> archived, std::span<const ad::NodeId> current) {
    if (archived.size() != current.size() || current.empty()) {
        throw DimensionError("factor_gap_losses: archived factors have a different layer count");
    }
    ad::NodeId sum = graph.sq_l2_diff(graph.constant(archived[0]), current[0]);
    for (std::size_t l = 1; l < current.size(); ++l) {
        sum = graph.add(sum, graph.sq_l2_diff(graph.constant(archived[l]), current[l]));
    }
    return sum;
}

}  // namespace

GapNodes factor_gap_losses(ad::Graph& graph, const CurrentNodes& current, std::span<const factor::TaskFactors> archive) {
    GapNodes gaps;
    for (const auto& past : archive) {
        gaps.k.push_back(layer_sum(graph, past.deconv_kernels, current.deconv_kernels));
        gaps.c.push_back(layer_sum(graph, past.contractions, current.contractions));
    }
    return gaps;
}

std::vector<FactorGap> factor_gap_values(const factor::TaskFactors& current,
                                         std::span<const factor::TaskFactors> archive) {
    std::vector<FactorGap> out;
    for (const auto& past : archive) {
        if (past.deconv_kernels.size() != current.deconv_kernels.size()) {
            throw DimensionError("factor_gap_values: archived factors have a different layer count");
        }
        FactorGap g{0.0, 0.0};
        for (std::size_t l = 0; l < current.deconv_kernels.size(); ++l) {
            g.k += ops::sq_l2_diff(past.deconv_kernels[l], current.deconv_kernels[l]);
            g.c += ops::sq_l2_diff(past.contractions[l], current.contractions[l]);
        }
        out.push_back(g);
    }
    return out;
}

namespace {

ad::NodeId attention_term(ad::Graph& graph, const std::vector<ad::NodeId>& gap_nodes, const std::vector<double>& weights,
                          std::size_t l_max, bool detach) {
    const ad::NodeId gaps = graph.stack(gap_nodes);
    ad::NodeId w;
    if (detach) {
        w = graph.constant(Tensor({weights.size()}, weights));
    } else {
        w = graph.scale(graph.softmax(gaps), 1.0 / static_cast<double>(l_max));
    }
    return graph.dot(w, gaps);
}

}  // namespace

TotalLoss total_loss(ad::Graph& graph, ad::NodeId lc, const factor::KnowledgeBase& kb, const CurrentNodes& current,
                     std::span<const factor::TaskFactors> archive, const MamConfig& config) {
    if (archive.empty()) return {lc, {}, 0.0};
    config.validate();
    const std::size_t l_max = current.deconv_kernels.size();

    const ad::NodeId knowledge = knowledge_gap_loss(graph, current.knowledge, kb);
    const GapNodes gaps = factor_gap_losses(graph, current, archive);
    std::vector<double> k_vals, c_vals;
    for (auto id : gaps.k) k_vals.push_back(graph.value(id).item());
    for (auto id : gaps.c) c_vals.push_back(graph.value(id).item());
    AttentionScores scores = attention_scores(k_vals, c_vals, l_max);

    ad::NodeId total = graph.add(lc, graph.scale(knowledge, config.lambda));
    total = graph.add(total, attention_term(graph, gaps.k, scores.k, l_max, config.detach_attention));
    total = graph.add(total, attention_term(graph, gaps.c, scores.c, l_max, config.detach_attention));
    return {total, std::move(scores), graph.value(knowledge).item()};
}

}  // namespace l3doc::mam
