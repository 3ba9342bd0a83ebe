#pragma once

// Sequential lifelong training: factor inheritance, knowledge-base snapshots,
// task archival and evaluation of every seen task. Also hosts the
// single-task (stl) and fine-tuning baselines.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l3doc/backbone.hpp"
#include "l3doc/datasets.hpp"
#include "l3doc/factorization.hpp"
#include "l3doc/mam.hpp"
#include "l3doc/metrics.hpp"

namespace l3doc::train {

enum class Mode { L3doc, Stl, Finetune };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;
};

/// One adaptive-moment update (or plain SGD) of `params` in place. Moments
/// are allocated on the first call.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state,
               const OptimizerConfig& config);

struct ExperimentConfig {
    Mode mode = Mode::L3doc;
    backbone::BackboneConfig backbone{};
    factor::FactorSpec spec = factor::FactorSpec::group1({3, 64, 64, 64, 128, 1024});
    mam::MamConfig mam{};
    OptimizerConfig optimizer{};
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::optional<double> init_stddev;  // unset: factor::matched_stddev per layer
    std::size_t eval_threads = 1;

    void validate() const;
};

struct ArchiveEntry {
    std::size_t task_id;
    double peak_accuracy;
    const data::TaskDataset* dataset;
    /// Set only in stl mode, where every task owns an independent knowledge base.
    std::optional<factor::KnowledgeBase> own_knowledge;
};

/// Append-only record of finished tasks.
class TaskArchive {
public:
    void append(factor::TaskFactors factors, ArchiveEntry entry);

    [[nodiscard]] std::size_t size() const noexcept { return factors_.size(); }
    [[nodiscard]] bool empty() const noexcept { return factors_.empty(); }
    [[nodiscard]] const factor::TaskFactors& factors(std::size_t i) const { return factors_.at(i); }
    [[nodiscard]] const ArchiveEntry& entry(std::size_t i) const { return entries_.at(i); }

    /// All archived factors, as read by the cross-task regularizers. Counted.
    [[nodiscard]] std::span<const factor::TaskFactors> regularizer_view() const;
    [[nodiscard]] std::size_t regularizer_reads() const noexcept { return regularizer_reads_; }

private:
    std::vector<factor::TaskFactors> factors_;
    std::vector<ArchiveEntry> entries_;
    mutable std::size_t regularizer_reads_ = 0;
};

struct TaskResult {
    factor::TaskFactors factors;
    metrics::TaskLog log;
    std::uint64_t steps = 0;
};

using EpochCallback = std::function<void(const metrics::EpochRecord&)>;

/// Trains task `task_index` (0-based) starting from `factors`, updating `kb`
/// in place. In l3doc mode the loss adds the memory-attention regularizers
/// whenever the archive is non-empty.
TaskResult train_task(std::size_t task_index, const data::TaskDataset& dataset, factor::KnowledgeBase& kb,
                      factor::TaskFactors factors, const TaskArchive& archive, const ExperimentConfig& config,
                      const EpochCallback& on_epoch = {});

/// Test accuracy of a single task's model.
double evaluate_task(const factor::KnowledgeBase& kb, const factor::TaskFactors& factors,
                     const data::TaskDataset& dataset);

/// Accuracy of every archived task rebuilt from the live `kb` (or the task's
/// own knowledge base in stl mode) and its frozen factors.
std::vector<double> evaluate_archive(const factor::KnowledgeBase& kb, const TaskArchive& archive,
                                     std::size_t threads = 1);

struct RunResult {
    TaskArchive archive;
    metrics::RunLog log;
    factor::KnowledgeBase knowledge;
    std::uint64_t total_steps = 0;
};

RunResult run_sequence(const ExperimentConfig& config, std::span<const data::TaskDataset> tasks,
                       const EpochCallback& on_epoch = {});

/// Stream seed for a (purpose, index) pair of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index);

}  // namespace l3doc::train
