#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kagent/agent.hpp"
#include "kagent/metrics.hpp"

namespace kagent {

inline constexpr const char* kEngineVersion = "0.1.0";

/// Snapshot written before the first attempt and never modified.
struct RunManifest {
    AgentConfig agent;
    BackendConfig backend;
    TimingConfig timing;
    std::string executor;
    std::string benchmark;
    std::size_t replicas = 1;
    std::string started_at;
    std::string engine_version = kEngineVersion;

    nlohmann::json to_json() const;
};

std::string utc_timestamp();

LogRecord to_record(const CandidateAttempt& attempt);

using BackendFactory = std::function<std::unique_ptr<ChatBackend>(std::size_t replica)>;

/// Everything shared by the replicas of one run.
struct RunPlan {
    const BenchmarkManifest* benchmark = nullptr;
    const Corpus* corpus = nullptr;
    AgentConfig agent;
    BackendConfig backend;
    TimingConfig timing;
    std::chrono::milliseconds execution_timeout{60'000};
    std::optional<KnowledgeBlock> knowledge;
    /// Shared by all replicas; must be thread-safe.
    Executor* executor = nullptr;
    BackendFactory make_backend;
    /// When set, replica i streams its log to <log_dir>/replica_<iii>.jsonl.
    std::optional<std::filesystem::path> log_dir;
    nlohmann::json run_manifest = nlohmann::json::object();
    /// Replicas running at once; 0 means all of them.
    std::size_t max_concurrent_replicas = 0;
};

struct ReplicaResult {
    std::size_t replica_index = 0;
    RunLog log;
    std::vector<AttemptLog> tasks;
    bool failed = false;
    std::string failure;
};

std::filesystem::path replica_log_path(const std::filesystem::path& dir, std::size_t replica);

/// Runs every benchmark task once, sequentially, as replica `replica_index`.
/// Stops at the first backend or executor failure and marks the result failed.
ReplicaResult run_sweep(const RunPlan& plan, std::size_t replica_index);

/// Independent sweeps, one per replica, with no shared mutable state besides
/// the executor. A failing replica never cancels its siblings.
std::vector<ReplicaResult> run_parallel(const RunPlan& plan, std::size_t replicas);

}  // namespace kagent
