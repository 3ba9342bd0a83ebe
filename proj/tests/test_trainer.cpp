#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "l3doc/errors.hpp"
#include "l3doc/trainer.hpp"

using l3doc::Tensor;
namespace data = l3doc::data;
namespace factor = l3doc::factor;
namespace train = l3doc::train;

namespace {

train::ExperimentConfig micro_config(train::Mode mode = train::Mode::L3doc) {
    train::ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.backbone.widths = {3, 8, 8};
    cfg.backbone.head_widths = {8};
    cfg.spec = factor::FactorSpec(4, 4, 2, cfg.backbone.widths);
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 17;
    return cfg;
}

data::TaskDataset micro_task(const std::vector<std::string>& classes, std::size_t per_class, std::size_t points,
                             std::uint64_t seed) {
    auto ds = data::gen_synthetic(classes, per_class, points, 0.01, seed);
    for (auto* split : {&ds.train, &ds.test})
        for (auto& s : *split) s.cloud = data::normalize_unit_sphere(s.cloud);
    return ds;
}

std::vector<data::TaskDataset> micro_sequence(std::size_t n) {
    const std::vector<std::vector<std::string>> pairs{{"sphere", "cube"}, {"cone", "torus"}, {"plane", "cylinder"}};
    std::vector<data::TaskDataset> tasks;
    for (std::size_t t = 0; t < n; ++t) {
        tasks.push_back(micro_task(pairs[t % pairs.size()], 5, 16, 100 + t));
        tasks.back().task_id = t + 1;
    }
    return tasks;
}

}  // namespace

TEST(Mode, ParseAndPrint) {
    for (auto m : {train::Mode::L3doc, train::Mode::Stl, train::Mode::Finetune}) {
        EXPECT_EQ(train::parse_mode(train::to_string(m)), m);
    }
    EXPECT_THROW(train::parse_mode("ewc"), l3doc::ConfigError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Tensor p = Tensor::vector({1.0, -2.0});
    const Tensor before = p;
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor({2})};
    train::OptimizerState state;
    train::adam_step(params, grads, state, {});
    EXPECT_EQ(p, before);
}

TEST(Adam, SingleStepByHand) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::scalar(0.5)};
    train::OptimizerState state;
    train::OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    train::adam_step(params, grads, state, cfg);
    // m = 0.05, v = 0.00025; bias-corrected m = 0.5, v = 0.25
    const double expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    EXPECT_NEAR(p.item(), expected, 1e-15);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, RepeatedGradientMovesMonotonically) {
    Tensor p = Tensor::scalar(0.0);
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::scalar(-3.0)};
    train::OptimizerState state;
    train::adam_step(params, grads, state, {});
    const double first = p.item();
    train::adam_step(params, grads, state, {});
    EXPECT_GT(first, 0.0);
    EXPECT_GT(p.item(), first);
}

TEST(Adam, SgdOption) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::scalar(2.0)};
    train::OptimizerState state;
    train::OptimizerConfig cfg;
    cfg.kind = train::OptimizerKind::Sgd;
    cfg.learning_rate = 0.25;
    train::adam_step(params, grads, state, cfg);
    EXPECT_EQ(p.item(), 0.5);
}

TEST(TrainTask, OneBatchOneEpochIsOneStep) {
    auto cfg = micro_config();
    cfg.epochs = 1;
    cfg.batch_size = 100;
    const auto ds = micro_task({"sphere", "cube"}, 5, 8, 1);
    auto kb = factor::init_knowledge_base(cfg.spec, 1);
    auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 2);
    const auto r = train::train_task(0, ds, kb, f, {}, cfg);
    EXPECT_EQ(r.steps, 1u);
    EXPECT_EQ(r.log.epochs.size(), 1u);
    cfg.batch_size = 3;  // 8 train objects -> 3 batches
    const auto r3 = train::train_task(0, ds, kb, f, {}, cfg);
    EXPECT_EQ(r3.steps, 3u);
}

TEST(TrainTask, ZeroLearningRateKeepsEverything) {
    auto cfg = micro_config();
    cfg.optimizer.learning_rate = 0.0;
    const auto ds = micro_task({"sphere", "cube"}, 5, 8, 1);
    auto kb = factor::init_knowledge_base(cfg.spec, 1);
    const auto kb_before = kb.layers();
    const auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 2);
    const auto r = train::train_task(0, ds, kb, f, {}, cfg);
    EXPECT_EQ(kb.layers(), kb_before);
    EXPECT_EQ(r.factors, f);
}

TEST(TrainTask, LossDecreasesOnMicroTask) {
    auto cfg = micro_config();
    cfg.epochs = 50;
    cfg.batch_size = 8;
    const auto ds = micro_task({"sphere", "plane"}, 20, 32, 3);
    ASSERT_EQ(ds.train.size(), 32u);
    auto kb = factor::init_knowledge_base(cfg.spec, 4);
    const auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 5);
    const auto r = train::train_task(0, ds, kb, f, {}, cfg);
    EXPECT_LT(r.log.epochs.back().loss, r.log.epochs.front().loss);
}

TEST(TrainTask, EveryFactorMoves) {
    auto cfg = micro_config();
    // the zero output layer blocks gradients below the head on the first step
    cfg.epochs = 2;
    const auto ds = micro_task({"sphere", "cube"}, 5, 8, 1);
    auto kb = factor::init_knowledge_base(cfg.spec, 1);
    const auto before = kb.layers();
    const auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 2);
    const auto r = train::train_task(0, ds, kb, f, {}, cfg);
    for (std::size_t l = 0; l < cfg.spec.num_layers(); ++l) {
        EXPECT_NE(kb.layers()[l], before[l]);
        EXPECT_NE(r.factors.deconv_kernels[l], f.deconv_kernels[l]);
        EXPECT_NE(r.factors.contractions[l], f.contractions[l]);
    }
}

TEST(TrainTask, NonFiniteLossAborts) {
    auto cfg = micro_config();
    const auto ds = micro_task({"sphere", "cube"}, 5, 8, 1);
    auto kb = factor::init_knowledge_base(cfg.spec, 1);
    auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 2);
    f.head.biases.back()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(train::train_task(0, ds, kb, f, {}, cfg), l3doc::NumericError);
}

TEST(TrainTask, DimensionMismatch) {
    auto cfg = micro_config();
    const auto ds = micro_task({"sphere", "cube", "cone"}, 5, 8, 1);
    auto kb = factor::init_knowledge_base(cfg.spec, 1);
    const auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, 2);
    EXPECT_THROW(train::train_task(0, ds, kb, f, {}, cfg), l3doc::DimensionError);
}

TEST(RunSequence, SingleTaskMatchesTrainTask) {
    const auto cfg = micro_config();
    const auto tasks = micro_sequence(1);
    const auto run = train::run_sequence(cfg, tasks);
    auto kb = factor::init_knowledge_base(cfg.spec, train::derive_seed(cfg.seed, 1, 0));
    const auto f = factor::init_or_inherit_factors(nullptr, cfg.spec, cfg.backbone, 2, 1, train::derive_seed(cfg.seed, 2, 0));
    const auto alone = train::train_task(0, tasks[0], kb, f, {}, cfg);
    EXPECT_EQ(run.log.tasks[0].epochs, alone.log.epochs);
    EXPECT_EQ(run.archive.factors(0), alone.factors);
    EXPECT_EQ(run.log.tasks[0].seen_accuracies.back(), alone.log.epochs.back().test_acc);
}

TEST(RunSequence, DeterministicAndArchiveFrozen) {
    const auto cfg = micro_config();
    const auto tasks = micro_sequence(3);
    const auto a = train::run_sequence(cfg, tasks);
    const auto b = train::run_sequence(cfg, tasks);
    EXPECT_EQ(a.log, b.log);
    EXPECT_EQ(a.knowledge.layers(), b.knowledge.layers());

    const auto prefix = train::run_sequence(cfg, std::span(tasks).first(1));
    EXPECT_EQ(a.archive.factors(0), prefix.archive.factors(0));
    ASSERT_EQ(a.log.tasks.size(), 3u);
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_EQ(a.log.tasks[t].seen_accuracies.size(), t + 1);
        EXPECT_EQ(a.log.tasks[t].seen_accuracies.back(), a.log.tasks[t].epochs.back().test_acc);
    }
}

TEST(RunSequence, ParallelEvaluationMatchesSerial) {
    const auto cfg = micro_config();
    const auto tasks = micro_sequence(3);
    const auto run = train::run_sequence(cfg, tasks);
    EXPECT_EQ(train::evaluate_archive(run.knowledge, run.archive, 1),
              train::evaluate_archive(run.knowledge, run.archive, 4));
    EXPECT_TRUE(train::evaluate_archive(run.knowledge, train::TaskArchive{}, 2).empty());
    EXPECT_EQ(train::evaluate_archive(run.knowledge, run.archive, 1), run.log.tasks.back().seen_accuracies);
}

TEST(RunSequence, StlNeverReadsSharedState) {
    const auto tasks = micro_sequence(3);
    const auto stl = train::run_sequence(micro_config(train::Mode::Stl), tasks);
    EXPECT_EQ(stl.archive.regularizer_reads(), 0u);
    EXPECT_EQ(stl.knowledge.snapshot_reads(), 0u);
    for (std::size_t i = 0; i < stl.archive.size(); ++i) {
        ASSERT_TRUE(stl.archive.entry(i).own_knowledge.has_value());
        EXPECT_EQ(stl.archive.entry(i).own_knowledge->snapshot_reads(), 0u);
    }
    // stl tasks never forget: each keeps its own knowledge base
    for (const auto& t : stl.log.tasks)
        for (std::size_t i = 0; i < t.seen_accuracies.size(); ++i) {
            EXPECT_EQ(t.seen_accuracies[i], stl.log.tasks[i].epochs.back().test_acc);
        }

    const auto l3 = train::run_sequence(micro_config(train::Mode::L3doc), tasks);
    EXPECT_GT(l3.archive.regularizer_reads(), 0u);
    EXPECT_GT(l3.knowledge.snapshot_reads(), 0u);
    const auto ft = train::run_sequence(micro_config(train::Mode::Finetune), tasks);
    EXPECT_EQ(ft.archive.regularizer_reads(), 0u);
}

TEST(RunSequence, FirstTaskIdenticalAcrossL3docAndFinetune) {
    const auto tasks = micro_sequence(1);
    const auto l3 = train::run_sequence(micro_config(train::Mode::L3doc), tasks);
    const auto ft = train::run_sequence(micro_config(train::Mode::Finetune), tasks);
    EXPECT_EQ(l3.archive.factors(0), ft.archive.factors(0));
    EXPECT_EQ(l3.knowledge.layers(), ft.knowledge.layers());
}

TEST(RunSequence, RegularizerProtectsRepeatedTask) {
    auto cfg = micro_config();
    cfg.epochs = 20;
    auto task = micro_task({"sphere", "cube"}, 10, 16, 7);
    std::vector<data::TaskDataset> tasks{task, task};
    tasks[1].task_id = 2;
    cfg.mode = train::Mode::L3doc;
    const auto l3 = train::run_sequence(cfg, tasks);
    cfg.mode = train::Mode::Finetune;
    const auto ft = train::run_sequence(cfg, tasks);
    EXPECT_GE(l3.log.tasks[1].seen_accuracies[0], ft.log.tasks[1].seen_accuracies[0]);
}

TEST(Config, Validation) {
    auto cfg = micro_config();
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), l3doc::ConfigError);
    cfg = micro_config();
    cfg.backbone.widths = {3, 8, 16};
    EXPECT_THROW(cfg.validate(), l3doc::ConfigError);
    cfg = micro_config();
    cfg.init_stddev = -1.0;
    EXPECT_THROW(cfg.validate(), l3doc::ConfigError);
}
