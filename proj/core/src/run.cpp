#include "kagent/run.hpp"

#include <atomic>
#include <ctime>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "kagent/errors.hpp"

namespace kagent {

using nlohmann::json;

nlohmann::json RunManifest::to_json() const {
    return {{"agent", kagent::to_json(agent)},
            {"backend", kagent::to_json(backend)},
            {"timing", {{"warmup_runs", timing.warmup_runs}, {"timed_runs", timing.timed_runs}}},
            {"executor", executor},
            {"benchmark", benchmark},
            {"replicas", replicas},
            {"started_at", started_at},
            {"engine_version", engine_version}};
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    ::gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

LogRecord to_record(const CandidateAttempt& attempt) {
    LogRecord record;
    record.task_id = attempt.task_id;
    record.replica = attempt.replica_index;
    record.iteration = attempt.iteration_index;
    record.phase = to_string(attempt.phase);
    record.strategy_id = attempt.strategy_id;
    if (attempt.report) {
        record.call_ok = attempt.report->call_ok;
        record.tests_passed = attempt.report->passed_count();
        record.tests_total = attempt.report->test_results.size();
        record.timed_out = attempt.report->timed_out;
    }
    record.speedup = attempt.speedup;
    record.trace_digest = digest_text(attempt.trace);
    record.prompt_fingerprint = attempt.prompt_fingerprint;
    return record;
}

std::filesystem::path replica_log_path(const std::filesystem::path& dir, std::size_t replica) {
    return dir / fmt::format("replica_{:03d}.jsonl", replica);
}

ReplicaResult run_sweep(const RunPlan& plan, std::size_t replica_index) {
    if (plan.benchmark == nullptr || plan.executor == nullptr || !plan.make_backend) {
        throw std::invalid_argument("run_sweep: benchmark, executor and backend factory are required");
    }
    ReplicaResult result;
    result.replica_index = replica_index;

    LogHeader header;
    header.benchmark = plan.benchmark->name;
    header.replica_index = replica_index;
    for (const auto& task : plan.benchmark->tasks) {
        header.tasks.push_back({task.id, task.difficulty});
    }
    header.run_manifest = plan.run_manifest;
    result.log.header = header;

    std::unique_ptr<LogWriter> writer;
    if (plan.log_dir) {
        writer = std::make_unique<LogWriter>(replica_log_path(*plan.log_dir, replica_index), header);
    }

    std::unique_ptr<ChatBackend> backend = plan.make_backend(replica_index);

    AgentEnvironment env;
    env.backend = backend.get();
    env.backend_config = plan.backend;
    env.executor = plan.executor;
    env.corpus = plan.corpus;
    env.knowledge = plan.knowledge;
    for (const auto& task : plan.benchmark->tasks) {
        env.excluded_exemplars.insert(task.id);
    }
    env.timing = plan.timing;
    env.execution_timeout = plan.execution_timeout;
    env.replica_index = replica_index;
    env.on_attempt = [&](const CandidateAttempt& attempt) {
        auto record = to_record(attempt);
        if (writer) {
            writer->append(record);
        }
        result.log.records.push_back(std::move(record));
    };

    for (const auto& task : plan.benchmark->tasks) {
        AttemptLog task_log = run_task(task, plan.agent, env);
        TaskEnd end{task.id, replica_index, to_string(task_log.status), task_log.status_message};
        if (writer) {
            writer->end_task(end);
        }
        result.log.task_ends.push_back(end);
        const bool stopped = task_log.status != TaskStatus::Completed;
        result.tasks.push_back(std::move(task_log));
        if (stopped) {
            result.failed = true;
            result.failure = fmt::format("task '{}': {}", task.id, end.message);
            spdlog::warn("replica {} stopped: {}", replica_index, result.failure);
            break;
        }
    }
    result.log.sort_records();
    return result;
}

std::vector<ReplicaResult> run_parallel(const RunPlan& plan, std::size_t replicas) {
    if (replicas == 0) {
        throw std::invalid_argument("run_parallel: replicas must be positive");
    }
    std::vector<ReplicaResult> results(replicas);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < replicas; i = next++) {
            try {
                results[i] = run_sweep(plan, i);
            } catch (const std::exception& e) {
                results[i].replica_index = i;
                results[i].failed = true;
                results[i].failure = e.what();
                spdlog::error("replica {} failed: {}", i, e.what());
            }
        }
    };
    const std::size_t threads =
        plan.max_concurrent_replicas == 0 ? replicas : std::min(replicas, plan.max_concurrent_replicas);
    if (threads <= 1) {
        worker();
        return results;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    pool.clear();
    return results;
}

}  // namespace kagent
