#include <gtest/gtest.h>

#include <random>

#include "l3doc/errors.hpp"
#include "l3doc/factorization.hpp"
#include "l3doc/graph.hpp"
#include "oracles.hpp"

using l3doc::Shape;
using l3doc::Tensor;
namespace factor = l3doc::factor;

namespace {

const std::vector<std::size_t> kReferenceWidths{3, 64, 64, 64, 128, 1024};
const std::vector<std::size_t> kMicroWidths{3, 8, 8};

l3doc::backbone::BackboneConfig micro_backbone() {
    l3doc::backbone::BackboneConfig b;
    b.widths = kMicroWidths;
    b.head_widths = {4};
    return b;
}

}  // namespace

TEST(Channels, LatentAndKnowledge) {
    EXPECT_EQ(factor::latent_channels(64, 16), 4u);
    EXPECT_EQ(factor::latent_channels(1024, 32), 32u);
    EXPECT_EQ(factor::latent_channels(128, 16), 8u);
    EXPECT_EQ(factor::knowledge_channels(64, 32), 2u);
    EXPECT_EQ(factor::knowledge_channels(1024, 32), 32u);
    EXPECT_EQ(factor::knowledge_channels(128, 32), 4u);
    EXPECT_THROW(factor::latent_channels(64, 10), l3doc::ConfigError);
    EXPECT_THROW(factor::knowledge_channels(64, 0), l3doc::ConfigError);
}

TEST(FactorSpec, Group1Shapes) {
    const auto spec = factor::FactorSpec::group1(kReferenceWidths);
    EXPECT_EQ(spec.num_layers(), 5u);
    EXPECT_EQ(spec.knowledge_shape(0), (Shape{4, 3, 2}));
    EXPECT_EQ(spec.knowledge_shape(4), (Shape{64, 128, 32}));
    EXPECT_EQ(spec.deconv_kernel_shape(0), (Shape{2, 2, 64, 2}));
    EXPECT_EQ(spec.contraction_shape(4), (Shape{1, 1, 64}));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& d = spec.layer(l);
        EXPECT_EQ(d.n * 16, d.w_out);
        EXPECT_EQ(d.l_out * 32, d.w_out);
    }
    EXPECT_THROW(factor::FactorSpec(16, 32, 2, {3, 48}), l3doc::ConfigError);
}

TEST(Reconstruct, IdentityAndZero) {
    // n = 1, s = 1: W[i, o] = sum_c L[0, i, c] K[0, 0, o, c]
    std::mt19937_64 rng(1);
    const auto l = oracle::random_tensor({1, 3, 2}, rng);
    const auto k = oracle::random_tensor({1, 1, 4, 2}, rng);
    const auto w = factor::reconstruct_kernel(l, k, Tensor({1, 1, 1}, {1.0}));
    ASSERT_EQ(w.shape(), (Shape{1, 1, 3, 4}));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t o = 0; o < 4; ++o) {
            const double ref = l.at({0, i, 0}) * k.at({0, 0, o, 0}) + l.at({0, i, 1}) * k.at({0, 0, o, 1});
            EXPECT_NEAR(w.at({0, 0, i, o}), ref, 1e-15);
        }
    const auto l4 = oracle::random_tensor({4, 3, 2}, rng);
    const auto k4 = oracle::random_tensor({2, 2, 8, 2}, rng);
    EXPECT_EQ(factor::reconstruct_kernel(l4, k4, Tensor({1, 1, 4})), Tensor({1, 1, 3, 8}));
}

TEST(Reconstruct, MatchesComposedOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto l = oracle::random_tensor({4, 3, 2}, rng);
        const auto k = oracle::random_tensor({2, 2, 8, 2}, rng);
        const auto c = oracle::random_tensor({1, 1, 4}, rng);
        EXPECT_LE(l3doc::max_abs_diff(factor::reconstruct_kernel(l, k, c), oracle::reconstruct_kernel(l, k, c)), 1e-12);
    }
    EXPECT_THROW(factor::reconstruct_kernel(oracle::random_tensor({4, 3, 2}, rng), oracle::random_tensor({2, 2, 8, 3}, rng),
                                            oracle::random_tensor({1, 1, 4}, rng)),
                 l3doc::DimensionError);
}

TEST(Reconstruct, GradientsReachAllFactors) {
    std::mt19937_64 rng(3);
    auto l = oracle::random_tensor({2, 3, 2}, rng);
    auto k = oracle::random_tensor({2, 2, 4, 2}, rng);
    auto c = oracle::random_tensor({1, 1, 2}, rng);
    const auto target = oracle::random_tensor({1, 1, 3, 4}, rng);
    auto loss_of = [&](l3doc::ad::Graph& g, l3doc::ad::NodeId ln, l3doc::ad::NodeId kn, l3doc::ad::NodeId cn) {
        return g.sq_l2_diff(factor::reconstruct_kernel(g, ln, kn, cn), g.constant(target));
    };
    l3doc::ad::Graph g;
    const auto ln = g.parameter(l), kn = g.parameter(k), cn = g.parameter(c);
    const auto grads = l3doc::ad::backward(g, loss_of(g, ln, kn, cn));
    auto eval = [&] {
        l3doc::ad::Graph h;
        return h.value(loss_of(h, h.constant(l), h.constant(k), h.constant(c))).item();
    };
    EXPECT_LE(oracle::max_relative_error(grads.at(ln), oracle::finite_difference(eval, l), 1e-4), 1e-3);
    EXPECT_LE(oracle::max_relative_error(grads.at(kn), oracle::finite_difference(eval, k), 1e-4), 1e-3);
    EXPECT_LE(oracle::max_relative_error(grads.at(cn), oracle::finite_difference(eval, c), 1e-4), 1e-3);
    for (const auto id : {ln, kn, cn}) {
        double norm = 0.0;
        for (double v : grads.at(id).values()) norm += v * v;
        EXPECT_GT(norm, 0.0);
    }
}

TEST(KnowledgeBase, InitShapesAndSeeding) {
    const auto spec = factor::FactorSpec::group1(kReferenceWidths);
    const auto a = factor::init_knowledge_base(spec, 5);
    const auto b = factor::init_knowledge_base(spec, 5);
    const auto c = factor::init_knowledge_base(spec, 6);
    ASSERT_EQ(a.num_layers(), 5u);
    EXPECT_EQ(a.layers()[0].shape(), (Shape{4, 3, 2}));
    EXPECT_EQ(a.layers()[4].shape(), (Shape{64, 128, 32}));
    EXPECT_EQ(a.layers(), b.layers());
    EXPECT_NE(a.layers(), c.layers());
    EXPECT_EQ(a.snapshot(), a.layers());
    EXPECT_EQ(a.snapshot_reads(), 1u);
}

TEST(KnowledgeBase, FixedStddevIsUsed) {
    const factor::FactorSpec spec(4, 4, 2, {3, 64});
    const auto kb = factor::init_knowledge_base(spec, 1, 0.05);
    double sq = 0.0;
    for (double v : kb.layers()[0].values()) sq += v * v;
    const double sd = std::sqrt(sq / static_cast<double>(kb.layers()[0].size()));
    EXPECT_NEAR(sd, 0.05, 0.01);
}

TEST(KnowledgeBase, MatchedStddevGivesHeVariance) {
    const factor::FactorSpec spec(4, 4, 2, {3, 32, 64});
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& d = spec.layer(l);
        const double sd = factor::matched_stddev(spec, l);
        EXPECT_NEAR(std::pow(sd, 6) * static_cast<double>(d.n * 4 * d.l_out), 2.0 / static_cast<double>(d.w_in),
                    1e-12);
    }
}

TEST(KnowledgeBase, SnapshotFreezesValues) {
    factor::KnowledgeBase kb({Tensor({2}, {1, 2})});
    kb.layers()[0][0] = 9.0;
    EXPECT_EQ(kb.snapshot()[0], Tensor({2}, {1, 2}));
    kb.take_snapshot();
    EXPECT_EQ(kb.snapshot()[0], Tensor({2}, {9, 2}));
    EXPECT_EQ(kb.num_elements(), 2u);
}

TEST(TaskFactors, InitIsSeededAndInheritanceCopies) {
    const factor::FactorSpec spec(4, 4, 2, kMicroWidths);
    const auto bb = micro_backbone();
    const auto t1 = factor::init_or_inherit_factors(nullptr, spec, bb, 3, 1, 11);
    EXPECT_EQ(t1, factor::init_or_inherit_factors(nullptr, spec, bb, 3, 1, 11));
    EXPECT_EQ(t1.deconv_kernels[1].shape(), spec.deconv_kernel_shape(1));
    EXPECT_EQ(t1.head.num_classes(), 3u);

    const auto archived = t1;
    auto t2 = factor::init_or_inherit_factors(&t1, spec, bb, 2, 2, 12);
    EXPECT_EQ(t2.task_id, 2u);
    EXPECT_EQ(t2.deconv_kernels, t1.deconv_kernels);
    EXPECT_EQ(t2.contractions, t1.contractions);
    EXPECT_EQ(t2.biases, t1.biases);
    EXPECT_EQ(t2.head.num_classes(), 2u);
    t2.deconv_kernels[0][0] += 1.0;
    t2.contractions[1][0] -= 1.0;
    EXPECT_EQ(t1, archived);
}

TEST(Counting, StlIsLayerProductSum) {
    std::uint64_t manual = 0;
    for (std::size_t l = 0; l + 1 < kReferenceWidths.size(); ++l) manual += kReferenceWidths[l] * kReferenceWidths[l + 1];
    EXPECT_EQ(manual, 147648u);
    EXPECT_EQ(factor::count_stl(kReferenceWidths, 1), manual);
    EXPECT_EQ(factor::count_stl(kReferenceWidths, 10), 10 * manual);
    const std::vector<std::size_t> tiny{2, 3};
    EXPECT_EQ(factor::count_stl(tiny, 1), 6u);
}

TEST(Counting, Dfcnn) {
    const auto nw = factor::count_stl(kReferenceWidths, 1);
    EXPECT_EQ(factor::count_dfcnn(kReferenceWidths, 1, 1, 1, 1, 1, 1, 1), nw + 2);
    std::uint64_t prev = 0;
    for (std::uint64_t t = 1; t <= 6; ++t) {
        const auto v = factor::count_dfcnn(kReferenceWidths, 1, 2, 2, 3, 3, 3, t);
        EXPECT_GT(v, prev);
        EXPECT_GT(v, factor::count_stl(kReferenceWidths, t));
        prev = v;
    }
}

TEST(Counting, L3docTermByTerm) {
    const auto single = factor::FactorSpec::group1({3, 64});
    EXPECT_EQ(factor::count_l3doc(single, 10), (4u + 2 * 2 * 64 * 2) * 10 + 4 * 3 * 2);
    EXPECT_EQ(factor::count_l3doc(single, 10), 5184u);

    for (const auto& spec : {factor::FactorSpec::group1(kReferenceWidths), factor::FactorSpec::group2(kReferenceWidths)}) {
        std::uint64_t shared = 0, per_task = 0;
        for (std::size_t l = 0; l + 1 < kReferenceWidths.size(); ++l) {
            const std::uint64_t w_in = kReferenceWidths[l], w_out = kReferenceWidths[l + 1];
            const std::uint64_t n = w_out / spec.n_hat(), lo = w_out / spec.l_hat();
            shared += n * w_in * lo;
            per_task += n + spec.s() * spec.s() * w_out * lo;
        }
        EXPECT_EQ(factor::count_l3doc(spec, 0), shared);
        EXPECT_EQ(factor::count_l3doc(spec, 10), per_task * 10 + shared);
    }
    EXPECT_EQ(factor::count_l3doc(factor::FactorSpec::group1(kReferenceWidths), 10), 1612640u);
}

TEST(Counting, CensusMatchesFormula) {
    const factor::FactorSpec spec(4, 4, 2, kMicroWidths);
    const auto bb = micro_backbone();
    const auto kb = factor::init_knowledge_base(spec, 1);
    // layer 1: L 2x3x2, K 2x2x8x2, C 2; layer 2: L 2x8x2, K 2x2x8x2, C 2
    EXPECT_EQ(factor::parameter_census(kb, {}), 12u + 32u);
    std::vector<factor::TaskFactors> tasks;
    for (std::size_t t = 0; t <= 5; ++t) {
        EXPECT_EQ(factor::parameter_census(kb, tasks), factor::count_l3doc(spec, t));
        tasks.push_back(factor::init_or_inherit_factors(tasks.empty() ? nullptr : &tasks.back(), spec, bb, 2, t + 1, t));
    }
    EXPECT_EQ(factor::parameter_census(kb, std::span(tasks).first(1)), 44u + 64 + 2 + 64 + 2);
}
