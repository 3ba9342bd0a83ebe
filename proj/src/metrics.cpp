#include "l3doc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "l3doc/errors.hpp"

namespace l3doc::metrics {

std::vector<double> TaskLog::accuracy_trace() const {
    std::vector<double> trace;
    trace.reserve(epochs.size());
    for (const auto& e : epochs) trace.push_back(e.test_acc);
    return trace;
}

bool operator==(const EpochRecord& a, const EpochRecord& b) {
    return a.task == b.task && a.epoch == b.epoch && a.loss == b.loss && a.test_acc == b.test_acc;
}

bool operator==(const TaskLog& a, const TaskLog& b) {
    return a.task == b.task && a.epochs == b.epochs && a.seen_accuracies == b.seen_accuracies;
}

// Wall-clock fields are deliberately ignored: two runs are equal when every
// deterministic quantity matches.
bool operator==(const RunLog& a, const RunLog& b) { return a.tasks == b.tasks; }

namespace {

// Extended-precision accumulation keeps short sums of accuracies exact, so the
// mean is the correctly rounded mean of the inputs.
double mean_of(std::span<const double> values) {
    long double sum = 0.0L;
    for (double v : values) sum += v;
    return static_cast<double>(sum / static_cast<long double>(values.size()));
}

}  // namespace

double ppa(std::span<const double> trace, PeakAggregator aggregator) {
    if (trace.empty()) throw DataError("ppa: empty accuracy trace");
    if (aggregator == PeakAggregator::Max) return *std::max_element(trace.begin(), trace.end());
    std::vector<double> sorted(trace.begin(), trace.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto top = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(sorted.size())));
    return mean_of(std::span(sorted).first(top));
}

double apa(std::span<const double> seen_task_accuracies) {
    if (seen_task_accuracies.empty()) throw DataError("apa: no seen tasks");
    return mean_of(seen_task_accuracies);
}

double cfr(std::span<const double> current, std::span<const double> peaks, std::size_t* skipped) {
    if (current.size() != peaks.size()) throw DimensionError("cfr: current and peak lists differ in length");
    std::vector<double> ratios;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < current.size(); ++i) {
        if (peaks[i] == 0.0) {
            std::cerr << "warning: cfr skips task " << i + 1 << " with zero peak accuracy\n";
            ++dropped;
            continue;
        }
        ratios.push_back(current[i] / peaks[i]);
    }
    if (skipped) *skipped = dropped;
    return ratios.empty() ? 0.0 : mean_of(ratios);
}

std::size_t sc(std::span<const double> trace) {
    if (trace.empty()) throw DataError("sc: empty accuracy trace");
    const double threshold = 0.98 * *std::max_element(trace.begin(), trace.end());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (trace[i] >= threshold) return i + 1;
    }
    return trace.size();
}

double tt_ms(const TaskLog& task) {
    double sum = 0.0;
    for (const auto& e : task.epochs) sum += e.wall_ms;
    return sum;
}

std::vector<TaskSummary> summarize(const RunLog& run, PeakAggregator aggregator) {
    std::vector<TaskSummary> out;
    std::vector<double> peaks;
    for (const auto& task : run.tasks) {
        const auto trace = task.accuracy_trace();
        peaks.push_back(ppa(trace, aggregator));
        if (task.seen_accuracies.size() != peaks.size()) {
            throw DataError("task " + std::to_string(task.task) + " reports " +
                            std::to_string(task.seen_accuracies.size()) + " seen-task accuracies, expected " +
                            std::to_string(peaks.size()));
        }
        out.push_back({task.task, peaks.back(), apa(task.seen_accuracies), cfr(task.seen_accuracies, peaks),
                       sc(trace)});
    }
    return out;
}

// Serialization -------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, ptr};
}

double parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad number '" + std::string(s) + "'", 0);
    return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

}  // namespace

std::string metrics_jsonl(const RunLog& run) {
    std::string out;
    for (const auto& task : run.tasks) {
        for (const auto& e : task.epochs) {
            nlohmann::ordered_json j;
            j["type"] = "epoch";
            j["task"] = e.task;
            j["epoch"] = e.epoch;
            j["loss"] = e.loss;
            j["test_acc"] = e.test_acc;
            j["wall_ms"] = e.wall_ms;
            out += j.dump() + '\n';
        }
        nlohmann::ordered_json b;
        b["type"] = "boundary";
        b["task"] = task.task;
        b["accuracies"] = task.seen_accuracies;
        out += b.dump() + '\n';
    }
    return out;
}

RunLog parse_metrics_jsonl(std::string_view text) {
    RunLog run;
    std::size_t line_no = 0;
    for (auto line : split_lines(text)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const std::string type = j.at("type");
            const std::size_t task = j.at("task");
            if (run.tasks.empty() || run.tasks.back().task != task) {
                if (!run.tasks.empty() && run.tasks.back().seen_accuracies.empty()) {
                    throw ParseError("task " + std::to_string(run.tasks.back().task) + " has no boundary record", line_no);
                }
                run.tasks.push_back({task, {}, {}});
            }
            auto& current = run.tasks.back();
            if (type == "epoch") {
                current.epochs.push_back({task, j.at("epoch"), j.at("loss"), j.at("test_acc"), j.at("wall_ms")});
            } else if (type == "boundary") {
                current.seen_accuracies = j.at("accuracies").get<std::vector<double>>();
            } else {
                throw ParseError("unknown record type '" + type + "'", line_no);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("metrics.jsonl: ") + e.what(), line_no);
        }
    }
    return run;
}

std::string summary_csv(const RunLog& run) {
    std::string out = "task,ppa,apa,cfr,sc\n";
    for (const auto& s : summarize(run)) {
        out += std::to_string(s.task) + ',' + format_double(s.ppa) + ',' + format_double(s.apa) + ',' +
               format_double(s.cfr) + ',' + std::to_string(s.sc) + '\n';
    }
    return out;
}

std::vector<TaskSummary> parse_summary_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines.front() != "task,ppa,apa,cfr,sc") throw ParseError("summary.csv: bad header", 1);
    std::vector<TaskSummary> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = lines[i].find(',', start);
            cells.push_back(lines[i].substr(start, comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 5) throw ParseError("summary.csv: expected 5 columns", i + 1);
        out.push_back({static_cast<std::size_t>(parse_double(cells[0])), parse_double(cells[1]),
                       parse_double(cells[2]), parse_double(cells[3]), static_cast<std::size_t>(parse_double(cells[4]))});
    }
    return out;
}

std::string timing_csv(const RunLog& run) {
    std::string out = "task,tt_ms\n";
    for (const auto& task : run.tasks) out += std::to_string(task.task) + ',' + format_double(tt_ms(task)) + '\n';
    return out;
}

void export_run(const RunLog& run, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir / name).string());
        out << content;
    };
    write("metrics.jsonl", metrics_jsonl(run));
    write("summary.csv", summary_csv(run));
    write("timing.csv", timing_csv(run));
}

}  // namespace l3doc::metrics
