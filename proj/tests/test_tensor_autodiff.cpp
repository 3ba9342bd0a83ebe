#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "l3doc/errors.hpp"
#include "l3doc/graph.hpp"
#include "l3doc/ops.hpp"
#include "oracles.hpp"

using l3doc::Shape;
using l3doc::Tensor;
namespace ops = l3doc::ops;
namespace ad = l3doc::ad;

TEST(Tensor, ShapeAndIndexing) {
    Tensor t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    t.at({1, 2}) = 5.0;
    EXPECT_EQ(t[5], 5.0);
    EXPECT_THROW(Tensor({2, 0}), l3doc::DimensionError);
    EXPECT_THROW(Tensor({2}, std::vector<double>{1, 2, 3}), l3doc::DimensionError);
    EXPECT_THROW((void)t.at({2, 0}), l3doc::DimensionError);
    EXPECT_EQ(t.reshaped({3, 2}).values(), t.values());
    EXPECT_THROW((void)t.reshaped({4, 2}), l3doc::DimensionError);
}

TEST(Tensor, NormalIsSeeded) {
    std::mt19937_64 a(7), b(7), c(8);
    EXPECT_EQ(Tensor::normal({4, 4}, 0, 1, a), Tensor::normal({4, 4}, 0, 1, b));
    std::mt19937_64 a2(7);
    EXPECT_NE(Tensor::normal({4, 4}, 0, 1, a2), Tensor::normal({4, 4}, 0, 1, c));
}

TEST(Ops, MatmulExamples) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(ops::matmul(a, eye), a);
    EXPECT_EQ(ops::matmul(a, Tensor({2, 2})), Tensor({2, 2}));
    std::mt19937_64 rng(1);
    const auto x = oracle::random_tensor({5, 7}, rng);
    const auto y = oracle::random_tensor({7, 3}, rng);
    EXPECT_LE(l3doc::max_abs_diff(ops::matmul(x, y), oracle::matmul(x, y)), 1e-12);
    EXPECT_THROW(ops::matmul(x, x), l3doc::DimensionError);
}

TEST(Ops, AddScaleReluMean) {
    std::mt19937_64 rng(2);
    const auto a = oracle::random_tensor({3, 4}, rng);
    const auto b = oracle::random_tensor({3, 4}, rng);
    const auto bias = oracle::random_tensor({4}, rng);
    EXPECT_EQ(ops::add(a, Tensor({3, 4})), a);
    EXPECT_EQ(ops::scale(a, 1.0), a);
    EXPECT_EQ(ops::scale(a, 0.0), Tensor({3, 4}));
    const auto sum = ops::add(a, b);
    const auto row = ops::add(a, bias);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(sum.at({i, j}), a.at({i, j}) + b.at({i, j}));
            EXPECT_EQ(row.at({i, j}), a.at({i, j}) + bias[j]);
        }
    const auto r = ops::relu(a);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(r[i], a[i] > 0 ? a[i] : 0.0);
    EXPECT_EQ(ops::relu(Tensor({2})), Tensor({2}));
    EXPECT_NEAR(ops::mean(a), std::accumulate(a.values().begin(), a.values().end(), 0.0) / 12.0, 1e-15);
    EXPECT_EQ(ops::mean(Tensor({3}, 2.5)), 2.5);
}

TEST(Ops, ChannelContractExamples) {
    const Tensor d({1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(ops::channel_contract(Tensor({1, 1, 1}, {1.0}), d).values(), d.values());
    std::mt19937_64 rng(3);
    EXPECT_EQ(ops::channel_contract(Tensor({1, 1, 2}), oracle::random_tensor({2, 3, 4}, rng)), Tensor({1, 1, 3, 4}));
    const auto c = oracle::random_tensor({1, 1, 3}, rng);
    const auto dd = oracle::random_tensor({3, 4, 5}, rng);
    EXPECT_LE(l3doc::max_abs_diff(ops::channel_contract(c, dd), oracle::channel_contract(c, dd)), 1e-12);
    try {
        (void)ops::channel_contract(Tensor({1, 1, 2}), dd);
        FAIL() << "expected DimensionError";
    } catch (const l3doc::DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1x1x2]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3x4x5]"), std::string::npos) << msg;
    }
}

TEST(Ops, TransposedConvExamples) {
    EXPECT_EQ(ops::transposed_conv2d(Tensor({1, 1, 1}, {3.0}), Tensor({1, 1, 1, 1}, {4.0})).item(), 12.0);

    std::mt19937_64 rng(4);
    const auto input = oracle::random_tensor({3, 4, 2}, rng);
    Tensor delta({2, 2, 2, 2});
    delta.at({0, 0, 0, 0}) = 1.0;
    delta.at({0, 0, 1, 1}) = 1.0;
    EXPECT_EQ(ops::transposed_conv2d(input, delta), input);

    const auto x = oracle::random_tensor({2, 3, 2}, rng);
    const auto k = oracle::random_tensor({2, 2, 3, 2}, rng);
    EXPECT_LE(l3doc::max_abs_diff(ops::transposed_conv2d(x, k), oracle::transposed_conv2d(x, k)), 1e-12);
    EXPECT_THROW(ops::transposed_conv2d(x, oracle::random_tensor({2, 2, 3, 5}, rng)), l3doc::DimensionError);
}

TEST(Ops, LargeShapesMatchOracles) {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_tensor({8, 8, 8}, rng);
    const auto k = oracle::random_tensor({3, 3, 8, 8}, rng);
    EXPECT_LE(l3doc::max_abs_diff(ops::transposed_conv2d(x, k), oracle::transposed_conv2d(x, k)), 1e-12);
    const auto c = oracle::random_tensor({1, 1, 8}, rng);
    EXPECT_LE(l3doc::max_abs_diff(ops::channel_contract(c, x), oracle::channel_contract(c, x)), 1e-12);
}

TEST(Ops, MaxPoolExamples) {
    EXPECT_EQ(ops::max_pool_points(Tensor({2, 2}, {1, 5, 3, 2})), Tensor({2}, {3, 5}));
    EXPECT_EQ(ops::max_pool_points(Tensor({1, 2}, {-1, 7})), Tensor({2}, {-1, 7}));

    std::mt19937_64 rng(6);
    const auto f = oracle::random_tensor({9, 4}, rng);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor g({9, 4});
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t c = 0; c < 4; ++c) g.at({r, c}) = f.at({perm[r], c});
    EXPECT_EQ(ops::max_pool_points(f), ops::max_pool_points(g));

    std::vector<std::size_t> argmax;
    const auto pooled = ops::max_pool_groups(Tensor({4, 1}, {2, 2, 1, 3}), 2, &argmax);
    EXPECT_EQ(pooled, Tensor({2, 1}, {2, 3}));
    EXPECT_EQ(argmax, (std::vector<std::size_t>{0, 3}));
}

TEST(Ops, SqL2DiffExamples) {
    EXPECT_EQ(ops::sq_l2_diff(Tensor::vector({1, 2}), Tensor::vector({1, 2})), 0.0);
    EXPECT_EQ(ops::sq_l2_diff(Tensor::vector({1, 2}), Tensor({2})), 5.0);
    std::mt19937_64 rng(7);
    const auto a = oracle::random_tensor({3, 5}, rng);
    const auto b = oracle::random_tensor({3, 5}, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(ops::sq_l2_diff(a, b), s, 1e-12);
    EXPECT_THROW(ops::sq_l2_diff(a, Tensor({5, 3})), l3doc::DimensionError);
}

TEST(Ops, SoftmaxExamples) {
    EXPECT_EQ(ops::softmax(Tensor::vector({3, 3})), Tensor::vector({0.5, 0.5}));
    EXPECT_EQ(ops::softmax(Tensor::vector({-4})).item(), 1.0);
    const auto p = ops::softmax(Tensor::vector({0, 0, std::log(2.0)}));
    EXPECT_NEAR(p[0], 0.25, 1e-15);
    EXPECT_NEAR(p[1], 0.25, 1e-15);
    EXPECT_NEAR(p[2], 0.5, 1e-15);

    std::mt19937_64 rng(8);
    const auto v = oracle::random_tensor({6}, rng, -5, 5);
    const auto q = ops::softmax(v);
    const auto ref = oracle::softmax(v.values());
    double total = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(q[i], ref[i], 1e-12);
        EXPECT_GT(q[i], 0.0);
        total += q[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    Tensor shifted = v;
    for (auto& x : shifted.data()) x += 123.0;
    EXPECT_LE(l3doc::max_abs_diff(ops::softmax(shifted), q), 1e-12);
    // large logits overflow a naive exp but not the shifted form
    const auto big = ops::softmax(Tensor::vector({1000, 1000}));
    EXPECT_EQ(big, Tensor::vector({0.5, 0.5}));
}

TEST(Ops, ArgmaxTiesGoLow) {
    EXPECT_EQ(ops::argmax_rows(Tensor({2, 3}, {1, 3, 3, 0, 0, 0})), (std::vector<std::size_t>{1, 0}));
}

TEST(Autodiff, SquareGradient) {
    ad::Graph g;
    const auto x = g.parameter(Tensor::vector({3}));
    const auto loss = g.sq_l2_diff(x, g.constant(Tensor({1})));
    const auto grads = ad::backward(g, loss);
    EXPECT_EQ(grads.at(x).item(), 6.0);
}

TEST(Autodiff, UnusedParameterGetsZero) {
    ad::Graph g;
    const auto x = g.parameter(Tensor::vector({3}));
    const auto p = g.parameter(Tensor({2, 2}, 1.0));
    const auto loss = g.mean(x);
    const auto grads = ad::backward(g, loss);
    EXPECT_EQ(grads.at(p), Tensor({2, 2}));
}

TEST(Autodiff, NonScalarLossThrows) {
    ad::Graph g;
    const auto x = g.parameter(Tensor::vector({1, 2}));
    EXPECT_THROW(ad::backward(g, g.relu(x)), l3doc::DimensionError);
}

namespace {

// Rebuilds a graph from parameter values via `build` and compares backward()
// with central differences for every parameter.
void check_gradients(const std::function<ad::NodeId(ad::Graph&, std::vector<ad::NodeId>&)>& build,
                     std::vector<Tensor> params, double tol = 1e-3) {
    auto eval = [&] {
        ad::Graph g;
        std::vector<ad::NodeId> ids;
        for (const auto& p : params) ids.push_back(g.parameter(p));
        return g.value(build(g, ids)).item();
    };
    ad::Graph g;
    std::vector<ad::NodeId> ids;
    for (const auto& p : params) ids.push_back(g.parameter(p));
    const auto grads = ad::backward(g, build(g, ids));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor fd = oracle::finite_difference(eval, params[i]);
        EXPECT_LE(oracle::max_relative_error(grads.at(ids[i]), fd, 1e-4), tol) << "parameter " << i;
    }
}

}  // namespace

TEST(Autodiff, EachOpMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    const auto a = oracle::random_tensor({3, 4}, rng);
    const auto b = oracle::random_tensor({4, 2}, rng);
    const auto bias = oracle::random_tensor({2}, rng);
    check_gradients(
        [](ad::Graph& g, std::vector<ad::NodeId>& p) {
            auto h = g.relu(g.add(g.matmul(p[0], p[1]), p[2]));
            return g.mean(g.scale(h, 1.7));
        },
        {a, b, bias});

    const auto c = oracle::random_tensor({1, 1, 3}, rng);
    const auto l = oracle::random_tensor({3, 4, 2}, rng);
    const auto k = oracle::random_tensor({2, 2, 5, 2}, rng);
    check_gradients(
        [](ad::Graph& g, std::vector<ad::NodeId>& p) {
            const auto d = g.transposed_conv2d(p[1], p[2]);
            const auto w = g.channel_contract(p[0], d);
            return g.sq_l2_diff(w, g.constant(Tensor({1, 1, 4, 5}, 0.3)));
        },
        {c, l, k});

    const auto feats = oracle::random_tensor({6, 3}, rng);
    const auto v = oracle::random_tensor({4}, rng);
    const auto s1 = oracle::random_tensor({1}, rng);
    const auto s2 = oracle::random_tensor({1}, rng);
    check_gradients(
        [](ad::Graph& g, std::vector<ad::NodeId>& p) {
            const auto pooled = g.max_pool_points(p[0], 3);
            const auto flat = g.reshape(pooled, {6});
            const std::vector<ad::NodeId> parts{p[2], p[3], g.mean(flat), g.mean(p[1])};
            const auto stacked = g.stack(parts);
            return g.dot(g.softmax(stacked), p[1]);
        },
        {feats, v, s1, s2});

    const auto logits = oracle::random_tensor({3, 4}, rng);
    check_gradients(
        [](ad::Graph& g, std::vector<ad::NodeId>& p) {
            return g.add(g.softmax_cross_entropy(p[0], {0, 3, 1}),
                         g.sq_l2_diff(g.softmax(p[0]), g.constant(Tensor({3, 4}, 0.25))));
        },
        {logits});
}
