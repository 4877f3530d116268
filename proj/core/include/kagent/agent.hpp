#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kagent/executor.hpp"
#include "kagent/llm.hpp"
#include "kagent/memory.hpp"
#include "kagent/retrieval.hpp"
#include "kagent/task.hpp"

namespace kagent {

enum class Phase { Generate, Reflect, Optimize };

const char* to_string(Phase phase);
std::optional<Phase> phase_from_string(std::string_view text);

struct AgentConfig {
    /// Sequential budget: attempts per task.
    int max_iterations = 10;
    /// Consecutive failures tolerated under one strategy before it is dropped.
    int max_perf_debug_num = 3;
    int reflection_window = static_cast<int>(kDefaultReflectionWindow);
    bool optimizer_enabled = true;
    bool one_shot_enabled = true;
    bool knowledge_enabled = true;
    /// Regenerate from scratch after a success instead of optimizing.
    bool fresh_generation_after_success = false;

    bool operator==(const AgentConfig&) const = default;
};

std::vector<std::string> validate_agent_config(const AgentConfig& config);
AgentConfig agent_config_from_json(const nlohmann::json& node);
nlohmann::json to_json(const AgentConfig& config);

struct CandidateAttempt {
    std::string attempt_id;
    std::string task_id;
    std::size_t replica_index = 0;
    int iteration_index = 0;
    Phase phase = Phase::Generate;
    int strategy_id = 0;
    std::string code;
    /// Absent only when the response had no extractable code.
    std::optional<ExecutionReport> report;
    std::string prompt_fingerprint;
    /// Set for attempts that passed every test.
    std::optional<double> speedup;
    /// Feedback handed to the reflector; empty for successes.
    std::string trace;

    bool call_ok() const { return report && report->call_ok; }
    bool exec_ok() const { return report && report->all_passed(); }
};

enum class TaskStatus { Completed, BackendExhausted, ExecutorUnavailable };

const char* to_string(TaskStatus status);

struct AttemptLog {
    std::string task_id;
    std::size_t replica_index = 0;
    std::vector<CandidateAttempt> attempts;
    AgentMemory memory;
    TaskStatus status = TaskStatus::Completed;
    std::string status_message;
};

using AttemptSink = std::function<void(const CandidateAttempt&)>;

/// Everything a task run needs besides the task and config. One environment
/// may be shared by tasks run sequentially; the backend and executor may be
/// shared across threads.
struct AgentEnvironment {
    ChatBackend* backend = nullptr;
    BackendConfig backend_config;
    Executor* executor = nullptr;
    const Corpus* corpus = nullptr;
    std::optional<KnowledgeBlock> knowledge;
    /// Ids the exemplar retriever must never return (the benchmark's tasks).
    std::set<std::string> excluded_exemplars;
    TimingConfig timing;
    std::chrono::milliseconds execution_timeout{60'000};
    std::size_t replica_index = 0;
    /// Called after every attempt, in order.
    AttemptSink on_attempt;
};

/// True once the consecutive-failure count reaches max_perf_debug_num.
bool should_reset_strategy(int consecutive_debug_failures, const AgentConfig& config);

/// Runs the candidate through the executor and enforces the cascade: a
/// call failure carries no test results, and latencies are kept only for
/// passed tests. Throws ExecutorUnavailable.
ExecutionReport evaluate_cascaded(const std::string& code, const KernelTask& task, Executor& executor,
                                  const TimingConfig& timing = {},
                                  std::chrono::milliseconds timeout = std::chrono::milliseconds(60'000));

/// Reflector feedback for a failed report.
std::string failure_trace(const ExecutionReport& report);

/// Generate / evaluate / reflect / optimize loop for one task. Backend and
/// executor failures end the run early; the log keeps every attempt made so
/// far and records why it stopped.
AttemptLog run_task(const KernelTask& task, const AgentConfig& config, const AgentEnvironment& env);

}  // namespace kagent
