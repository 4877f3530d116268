#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kagent/task.hpp"

namespace kagent {

inline constexpr int kProtocolVersion = 1;

struct TimingConfig {
    int warmup_runs = 10;
    int timed_runs = 100;

    bool operator==(const TimingConfig&) const = default;
};

struct ExecutionRequest {
    std::string candidate_code;
    std::string reference_code;
    std::string entry_point;
    std::vector<TestCase> tests;
    TimingConfig timing;
    std::chrono::milliseconds timeout{60'000};
};

struct TestResult {
    std::string test_id;
    bool passed = false;
    /// +inf when the outputs could not be compared (shape mismatch, NaN).
    double max_abs_err = 0.0;
    /// Medians over timed runs; only present for passed tests.
    std::optional<double> candidate_latency_ms;
    std::optional<double> reference_latency_ms;

    bool operator==(const TestResult&) const = default;
};

struct ExecutionReport {
    bool call_ok = false;
    std::string error_trace;
    std::vector<TestResult> test_results;
    bool timed_out = false;

    /// call_ok, at least one test, and every test passed.
    bool all_passed() const;
    std::size_t passed_count() const;

    bool operator==(const ExecutionReport&) const = default;
};

/// A report with call_ok=false and the given trace.
ExecutionReport call_failure(std::string trace, bool timed_out = false);

/// Protocol invariant violations in `report` (empty when valid).
std::vector<std::string> validate_report(const ExecutionReport& report);

nlohmann::json to_json(const ExecutionRequest& request);
ExecutionRequest request_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExecutionReport& report);
/// Throws ParseError when a field is missing or has the wrong type.
ExecutionReport report_from_json(const nlohmann::json& doc);

struct NumericArray {
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

struct Comparison {
    bool passed = false;
    double max_abs_err = std::numeric_limits<double>::infinity();
};

/// Passes iff shapes match and |c - r| <= atol + rtol * |r| elementwise.
Comparison compare_outputs(const NumericArray& candidate, const NumericArray& reference,
                           double rtol, double atol);

ExecutionRequest make_request(const KernelTask& task, std::string candidate_code,
                              const TimingConfig& timing, std::chrono::milliseconds timeout);

/// Runs a candidate against a task's tests. Implementations are thread-safe.
class Executor {
public:
    virtual ~Executor() = default;

    /// Throws ExecutorUnavailable when the runner cannot be started at all.
    /// Every other failure is reported through the returned report.
    virtual ExecutionReport execute(const ExecutionRequest& request) = 0;
    virtual std::string identity() const = 0;
};

/// Caps the number of concurrent holders.
class WorkerGate {
public:
    explicit WorkerGate(std::size_t capacity);

    void acquire();
    void release();

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t available_;
};

/// Spawns the runner command once per request, writes the request document to
/// its stdin and reads one report document from its stdout. Timeouts kill the
/// runner's whole process group.
class SubprocessExecutor final : public Executor {
public:
    explicit SubprocessExecutor(std::vector<std::string> command, std::size_t max_workers = 1,
                                std::chrono::milliseconds grace = std::chrono::milliseconds(2000));

    ExecutionReport execute(const ExecutionRequest& request) override;
    std::string identity() const override;

private:
    std::vector<std::string> command_;
    std::chrono::milliseconds grace_;
    WorkerGate gate_;
};

/// One-shot subprocess execution with an uncapped gate.
ExecutionReport execute(const ExecutionRequest& request, const std::vector<std::string>& runner_command);

/// In-process stand-in for a kernel runner. The outcome is read from an
/// `@mock` directive line in the candidate source:
///
///   @mock pass [cand_ms=2.0[,3.0...]] [ref_ms=4.0[,...]]
///   @mock fail [tests=2,3] [err=0.5]
///   @mock call_error [msg=text]
///   @mock timeout
///   @mock unavailable
///
/// Latency lists are indexed per test and cycle when shorter than the test
/// list. Sources without a directive fail to "compile".
class MockExecutor final : public Executor {
public:
    ExecutionReport execute(const ExecutionRequest& request) override;
    std::string identity() const override { return "mock-executor"; }
};

}  // namespace kagent
