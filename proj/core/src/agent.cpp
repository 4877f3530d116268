#include "kagent/agent.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "kagent/errors.hpp"
#include "kagent/metrics.hpp"

namespace kagent {

using nlohmann::json;

namespace {

constexpr std::string_view kFreshStrategyDirective =
    "Earlier approaches to this task kept failing and have been discarded. Design a new "
    "strategy and write fresh code rather than repairing previous attempts.";

constexpr std::string_view kNoCodeTrace = "no code block in response";

}  // namespace

const char* to_string(Phase phase) {
    switch (phase) {
        case Phase::Generate: return "generate";
        case Phase::Reflect: return "reflect";
        case Phase::Optimize: return "optimize";
    }
    return "unknown";
}

std::optional<Phase> phase_from_string(std::string_view text) {
    if (text == "generate") return Phase::Generate;
    if (text == "reflect") return Phase::Reflect;
    if (text == "optimize") return Phase::Optimize;
    return std::nullopt;
}

const char* to_string(TaskStatus status) {
    switch (status) {
        case TaskStatus::Completed: return "completed";
        case TaskStatus::BackendExhausted: return "backend_exhausted";
        case TaskStatus::ExecutorUnavailable: return "executor_unavailable";
    }
    return "unknown";
}

std::vector<std::string> validate_agent_config(const AgentConfig& config) {
    std::vector<std::string> problems;
    if (config.max_iterations < 1) {
        problems.push_back("agent.max_iterations must be >= 1");
    }
    if (config.max_perf_debug_num < 1) {
        problems.push_back("agent.max_perf_debug_num must be >= 1");
    }
    if (config.reflection_window < 1) {
        problems.push_back("agent.reflection_window must be >= 1");
    }
    return problems;
}

AgentConfig agent_config_from_json(const json& node) {
    AgentConfig config;
    try {
        config.max_iterations = node.value("max_iterations", config.max_iterations);
        config.max_perf_debug_num = node.value("max_perf_debug_num", config.max_perf_debug_num);
        config.reflection_window = node.value("reflection_window", config.reflection_window);
        config.optimizer_enabled = node.value("optimizer_enabled", config.optimizer_enabled);
        config.one_shot_enabled = node.value("one_shot_enabled", config.one_shot_enabled);
        config.knowledge_enabled = node.value("knowledge_enabled", config.knowledge_enabled);
        config.fresh_generation_after_success =
            node.value("fresh_generation_after_success", config.fresh_generation_after_success);
    } catch (const json::exception& e) {
        throw ParseError(std::string("agent config: ") + e.what());
    }
    return config;
}

json to_json(const AgentConfig& config) {
    return {{"max_iterations", config.max_iterations},
            {"max_perf_debug_num", config.max_perf_debug_num},
            {"reflection_window", config.reflection_window},
            {"optimizer_enabled", config.optimizer_enabled},
            {"one_shot_enabled", config.one_shot_enabled},
            {"knowledge_enabled", config.knowledge_enabled},
            {"fresh_generation_after_success", config.fresh_generation_after_success}};
}

bool should_reset_strategy(int consecutive_debug_failures, const AgentConfig& config) {
    return consecutive_debug_failures >= config.max_perf_debug_num;
}

ExecutionReport evaluate_cascaded(const std::string& code, const KernelTask& task, Executor& executor,
                                  const TimingConfig& timing, std::chrono::milliseconds timeout) {
    if (code.empty()) {
        throw std::invalid_argument("evaluate_cascaded: candidate code is empty");
    }
    ExecutionReport report = executor.execute(make_request(task, code, timing, timeout));
    if (!report.call_ok) {
        report.test_results.clear();
        return report;
    }
    for (auto& test : report.test_results) {
        if (!test.passed) {
            test.candidate_latency_ms.reset();
            test.reference_latency_ms.reset();
        }
    }
    if (report.all_passed()) {
        const bool timed = std::all_of(report.test_results.begin(), report.test_results.end(),
                                       [](const TestResult& t) {
                                           return t.candidate_latency_ms && t.reference_latency_ms;
                                       });
        if (!timed) {
            return call_failure("ProtocolError: runner reported passing tests without latencies");
        }
    }
    return report;
}

std::string failure_trace(const ExecutionReport& report) {
    if (!report.call_ok) {
        return report.error_trace.empty() ? std::string("kernel failed to compile or run")
                                          : report.error_trace;
    }
    std::string trace;
    for (const auto& test : report.test_results) {
        if (!test.passed) {
            trace += fmt::format("test '{}' failed: max_abs_err={}\n", test.test_id, test.max_abs_err);
        }
    }
    if (report.test_results.empty()) {
        trace = "runner returned no test results\n";
    }
    if (!report.error_trace.empty()) {
        trace += report.error_trace;
    }
    return trace;
}

AttemptLog run_task(const KernelTask& task, const AgentConfig& config, const AgentEnvironment& env) {
    if (const auto problems = validate_agent_config(config); !problems.empty()) {
        throw ValidationError(task.id, problems.front());
    }
    if (env.backend == nullptr || env.executor == nullptr) {
        throw std::invalid_argument("run_task: backend and executor are required");
    }

    AttemptLog log;
    log.task_id = task.id;
    log.replica_index = env.replica_index;
    AgentMemory& memory = log.memory;

    std::optional<CorpusEntry> exemplar;
    if (config.one_shot_enabled && env.corpus != nullptr && !env.corpus->empty()) {
        auto exclude = env.excluded_exemplars;
        exclude.insert(task.id);
        if (auto hit = retrieve_top1(retrieval_query(task), *env.corpus, exclude)) {
            spdlog::debug("task '{}': exemplar '{}' (similarity {:.3f})", task.id, hit->entry.id,
                          hit->score);
            exemplar = std::move(hit->entry);
        }
    }
    const std::optional<KnowledgeBlock> knowledge =
        config.knowledge_enabled ? env.knowledge : std::nullopt;

    Phase next_phase = Phase::Generate;
    int strategy_id = 0;
    int consecutive_failures = 0;

    for (int iteration = 0; iteration < config.max_iterations; ++iteration) {
        const Phase phase = next_phase;

        PromptBundle bundle;
        switch (phase) {
            case Phase::Generate:
                bundle = assemble_generation_prompt(task, exemplar, knowledge);
                if (strategy_id > 0) {
                    bundle.segments.push_back(
                        {SegmentKind::StrategyDirective, std::string(kFreshStrategyDirective)});
                }
                break;
            case Phase::Reflect: {
                // The newest reflection is the failure being repaired.
                const auto& current = memory.reflections.back();
                const std::span<const ReflectionRound> earlier(memory.reflections.data(),
                                                               memory.reflections.size() - 1);
                bundle = assemble_reflection_prompt(task, current.code, current.error_trace, earlier,
                                                    static_cast<std::size_t>(config.reflection_window));
                break;
            }
            case Phase::Optimize:
                bundle = assemble_optimization_prompt(task, memory.perf_history, knowledge);
                break;
        }

        LLMResponse response;
        try {
            response = env.backend->complete(bundle, env.backend_config);
        } catch (const BackendError& e) {
            log.status = TaskStatus::BackendExhausted;
            log.status_message = e.what();
            break;
        }

        CandidateAttempt attempt;
        attempt.task_id = task.id;
        attempt.replica_index = env.replica_index;
        attempt.iteration_index = iteration;
        attempt.attempt_id = fmt::format("{}/r{}/i{}", task.id, env.replica_index, iteration);
        attempt.phase = phase;
        attempt.strategy_id = strategy_id;
        attempt.prompt_fingerprint = bundle.fingerprint();

        bool success = false;
        if (!response.extracted_code || response.extracted_code->empty()) {
            attempt.trace = std::string(kNoCodeTrace);
        } else {
            attempt.code = *response.extracted_code;
            try {
                attempt.report = evaluate_cascaded(attempt.code, task, *env.executor, env.timing,
                                                   env.execution_timeout);
            } catch (const ExecutorUnavailable& e) {
                log.status = TaskStatus::ExecutorUnavailable;
                log.status_message = e.what();
                break;
            }
            if (attempt.report->all_passed()) {
                success = true;
                attempt.speedup = kernel_speedup(*attempt.report);
            } else {
                attempt.trace = failure_trace(*attempt.report);
            }
        }

        if (success) {
            PerfEntry entry{attempt.code, *attempt.speedup, true};
            if (!memory.best_correct || entry.speedup > memory.best_correct->speedup) {
                memory.best_correct = entry;
            }
            memory.perf_history.insert(std::move(entry));
            memory.reflections.clear();
            consecutive_failures = 0;
            next_phase = (config.optimizer_enabled && !config.fresh_generation_after_success)
                             ? Phase::Optimize
                             : Phase::Generate;
        } else {
            memory.reflections.push_back({attempt.code, attempt.trace});
            ++consecutive_failures;
            if (should_reset_strategy(consecutive_failures, config)) {
                spdlog::debug("task '{}': debugging trap after {} failures, strategy {} -> {}",
                              task.id, consecutive_failures, strategy_id, strategy_id + 1);
                memory.reflections.clear();
                ++strategy_id;
                consecutive_failures = 0;
                next_phase = Phase::Generate;
            } else {
                next_phase = Phase::Reflect;
            }
        }

        if (env.on_attempt) {
            env.on_attempt(attempt);
        }
        log.attempts.push_back(std::move(attempt));
    }
    return log;
}

}  // namespace kagent
