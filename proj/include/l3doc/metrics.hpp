#pragma once

// Lifelong-learning metrics over run logs, plus the metrics.jsonl /
// summary.csv / timing.csv exports.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace l3doc::metrics {

struct EpochRecord {
    std::size_t task = 0;   // 1-based
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean training loss over the epoch's steps
    double test_acc = 0.0;
    double wall_ms = 0.0;   // optimizer steps only, evaluation excluded
};

struct TaskLog {
    std::size_t task = 0;
    std::vector<EpochRecord> epochs;
    /// Accuracy of tasks 1..task under the model right after this task finished.
    std::vector<double> seen_accuracies;

    [[nodiscard]] std::vector<double> accuracy_trace() const;
};

struct RunLog {
    std::vector<TaskLog> tasks;
    friend bool operator==(const RunLog&, const RunLog&);
};

bool operator==(const EpochRecord& a, const EpochRecord& b);
bool operator==(const TaskLog& a, const TaskLog& b);

enum class PeakAggregator { TopFivePercentMean, Max };

/// Mean of the best ceil(5% of E) epoch accuracies (or the single max).
double ppa(std::span<const double> trace, PeakAggregator aggregator = PeakAggregator::TopFivePercentMean);

/// Mean accuracy over all seen tasks.
double apa(std::span<const double> seen_task_accuracies);

/// Mean of current/peak over seen tasks. Tasks with a zero peak are skipped
/// (counted in `skipped`); returns 0 when every task is skipped.
double cfr(std::span<const double> current, std::span<const double> peaks, std::size_t* skipped = nullptr);

/// First 1-based epoch reaching 98% of the trace maximum.
std::size_t sc(std::span<const double> trace);

/// Summed training wall-clock of a task, in milliseconds.
double tt_ms(const TaskLog& task);

struct TaskSummary {
    std::size_t task;
    double ppa;
    double apa;  // after this task finished
    double cfr;  // after this task finished
    std::size_t sc;
};

std::vector<TaskSummary> summarize(const RunLog& run, PeakAggregator aggregator = PeakAggregator::TopFivePercentMean);

std::string metrics_jsonl(const RunLog& run);
RunLog parse_metrics_jsonl(std::string_view text);

/// Deterministic per-task metric table: task,ppa,apa,cfr,sc.
std::string summary_csv(const RunLog& run);
std::vector<TaskSummary> parse_summary_csv(std::string_view text);

/// Wall-clock table: task,tt_ms. Not reproducible across runs.
std::string timing_csv(const RunLog& run);

/// Writes metrics.jsonl, summary.csv and timing.csv into `dir`.
void export_run(const RunLog& run, const std::filesystem::path& dir);

}  // namespace l3doc::metrics
