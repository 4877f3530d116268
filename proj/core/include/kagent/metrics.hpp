#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kagent/executor.hpp"

namespace kagent {

/// Mean over tests of reference latency / candidate latency. Throws
/// NotExecOk unless every test passed.
double kernel_speedup(const ExecutionReport& report);

/// Unbiased pass@k: 1 - C(n-c, k) / C(n, k), evaluated as a running product.
/// Throws DomainError unless 0 <= c <= n and 1 <= k <= n.
double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k);

// ---------------------------------------------------------------------------
// Run logs: one JSON object per line. The first line is the header.

struct TaskInfo {
    std::string id;
    int difficulty = 3;

    bool operator==(const TaskInfo&) const = default;
};

struct LogHeader {
    std::string benchmark;
    std::size_t replica_index = 0;
    /// Every task of the benchmark, in manifest order. Tasks without records
    /// still count in accuracy denominators.
    std::vector<TaskInfo> tasks;
    /// Run manifest snapshot (configs, engine version, timestamps).
    nlohmann::json run_manifest = nlohmann::json::object();
};

struct LogRecord {
    std::string task_id;
    std::size_t replica = 0;
    int iteration = 0;
    std::string phase;
    int strategy_id = 0;
    bool call_ok = false;
    std::size_t tests_passed = 0;
    std::size_t tests_total = 0;
    bool timed_out = false;
    std::optional<double> speedup;
    std::string trace_digest;
    std::string prompt_fingerprint;

    bool exec_ok() const { return call_ok && tests_total > 0 && tests_passed == tests_total; }

    bool operator==(const LogRecord&) const = default;
};

/// Written once per task when its run ends.
struct TaskEnd {
    std::string task_id;
    std::size_t replica = 0;
    std::string status;
    std::string message;

    bool operator==(const TaskEnd&) const = default;
};

struct RunLog {
    LogHeader header;
    std::vector<LogRecord> records;
    std::vector<TaskEnd> task_ends;

    /// Orders records by (task_id, replica, iteration).
    void sort_records();
    bool failed() const;
};

std::string digest_text(std::string_view text);

nlohmann::json to_json(const LogHeader& header);
nlohmann::json to_json(const LogRecord& record);
nlohmann::json to_json(const TaskEnd& end);

/// Appends lines to a log file, flushing after each one so a crash loses at
/// most the record being written. Thread-safe.
class LogWriter {
public:
    LogWriter(const std::filesystem::path& path, const LogHeader& header);

    void append(const LogRecord& record);
    void end_task(const TaskEnd& end);

private:
    void write_line(const nlohmann::json& line);

    std::mutex mutex_;
    std::ofstream out_;
};

RunLog parse_run_log(std::istream& in, const std::string& origin);
RunLog read_run_log(const std::filesystem::path& path);
/// Every *.jsonl file in `dir`, sorted by file name.
std::vector<RunLog> read_log_dir(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Metrics

/// Chooses one attempt per (task, replica).
struct Selector {
    enum class Kind {
        /// Fastest exec-ok attempt, else first call-ok, else first attempt.
        Best,
        Last,
    };
    Kind kind = Kind::Best;
    /// Only attempts with iteration < this count are eligible.
    std::optional<int> iteration_budget;
};

struct Outcome {
    std::string task_id;
    int difficulty = 3;
    std::size_t replica = 0;
    bool call_ok = false;
    bool exec_ok = false;
    std::optional<double> speedup;
};

/// One outcome per (task, replica) unit, in header task order. Tasks with
/// no eligible attempts count as failed.
std::vector<Outcome> select_outcomes(const RunLog& log, const Selector& selector = {});

/// Denominator for execution accuracy: the whole benchmark (default) or only
/// the call-ok kernels.
enum class ExecDenominator { Benchmark, CallOk };

double call_accuracy(const RunLog& log, const Selector& selector = {});
double exec_accuracy(const RunLog& log, const Selector& selector = {},
                     ExecDenominator denominator = ExecDenominator::Benchmark);

struct GroupMetrics {
    std::string label;
    std::size_t n_tasks = 0;
    std::size_t n_call_ok = 0;
    std::size_t n_exec_ok = 0;
    double call_accuracy = 0.0;
    double exec_accuracy = 0.0;
    /// Mean kernel speedup over exec-ok units; empty when there are none.
    std::optional<double> mean_speedup;
};

enum class Grouping { None, Difficulty };

struct MetricsSummary {
    GroupMetrics overall;
    std::vector<GroupMetrics> groups;
    ExecDenominator denominator = ExecDenominator::Benchmark;
};

MetricsSummary summarize(std::span<const Outcome> outcomes, Grouping grouping,
                         ExecDenominator denominator = ExecDenominator::Benchmark);

/// Throws EmptyLog when no log contributes a unit.
MetricsSummary report(std::span<const RunLog> logs, Grouping grouping, const Selector& selector = {},
                      ExecDenominator denominator = ExecDenominator::Benchmark);

std::string render_table(const MetricsSummary& summary);
nlohmann::json to_json(const MetricsSummary& summary);

struct ScalingPoint {
    int k = 1;
    double call_pass_at_k = 0.0;
    double exec_pass_at_k = 0.0;
};

/// pass@1..max_k averaged over tasks, treating each replica as one sample.
/// Throws MismatchedReplicas when replicas disagree on benchmark, tasks or
/// agent config, or when fewer than max_k replicas exist.
std::vector<ScalingPoint> scaling_table(std::span<const RunLog> logs, int max_k,
                                        const Selector& selector = {});

std::string render_scaling_table(std::span<const ScalingPoint> points);
std::string scaling_csv(std::span<const ScalingPoint> points);

struct SequentialPoint {
    int iterations = 0;
    double call_accuracy = 0.0;
    double exec_accuracy = 0.0;
    std::optional<double> mean_speedup;
};

/// Accuracy when each task stops after 1..max_iterations attempts.
std::vector<SequentialPoint> sequential_table(std::span<const RunLog> logs, int max_iterations);
std::string render_sequential_table(std::span<const SequentialPoint> points);

}  // namespace kagent
