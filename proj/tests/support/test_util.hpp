#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kagent/metrics.hpp"
#include "kagent/task.hpp"

namespace kagent::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string pattern = (std::filesystem::temp_directory_path() / "kagent-test-XXXXXX").string();
        if (::mkdtemp(pattern.data()) == nullptr) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = pattern;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline KernelTask make_task(const std::string& id, int difficulty = 3, std::size_t tests = 3) {
    KernelTask task;
    task.id = id;
    task.instruction = "Implement " + id + " as a Triton kernel.";
    task.code_path = "kernels/" + id + ".py";
    task.reference_code = "import triton\n\ndef " + id + "(x):\n    return x\n";
    task.difficulty = difficulty;
    for (std::size_t i = 0; i < tests; ++i) {
        task.tests.push_back({"t" + std::to_string(i + 1), 1000 + i});
    }
    return task;
}

/// Benchmark with `counts[d-1]` tasks of difficulty d.
inline BenchmarkManifest make_benchmark(const std::string& name, const std::vector<std::size_t>& counts) {
    BenchmarkManifest manifest;
    manifest.name = name;
    for (std::size_t level = 0; level < counts.size(); ++level) {
        for (std::size_t i = 0; i < counts[level]; ++i) {
            manifest.tasks.push_back(make_task(
                "k_d" + std::to_string(level + 1) + "_" + std::to_string(i), static_cast<int>(level + 1)));
        }
    }
    return manifest;
}

struct UnitOutcome {
    bool call_ok = false;
    bool exec_ok = false;
    double speedup = 1.0;
};

/// One-replica log with a single attempt per task carrying `outcomes[i]`.
inline RunLog make_log(const std::string& benchmark, const std::vector<TaskInfo>& tasks,
                       const std::vector<UnitOutcome>& outcomes, std::size_t replica = 0) {
    RunLog log;
    log.header.benchmark = benchmark;
    log.header.replica_index = replica;
    log.header.tasks = tasks;
    for (std::size_t i = 0; i < tasks.size() && i < outcomes.size(); ++i) {
        LogRecord record;
        record.task_id = tasks[i].id;
        record.replica = replica;
        record.iteration = 0;
        record.phase = "generate";
        record.call_ok = outcomes[i].call_ok || outcomes[i].exec_ok;
        record.tests_total = record.call_ok ? 3 : 0;
        record.tests_passed = outcomes[i].exec_ok ? 3 : (record.call_ok ? 1 : 0);
        if (outcomes[i].exec_ok) {
            record.speedup = outcomes[i].speedup;
        }
        log.records.push_back(record);
    }
    log.sort_records();
    return log;
}

/// Tasks named t000.. with the given difficulty counts.
inline std::vector<TaskInfo> tasks_with_difficulties(const std::vector<std::size_t>& counts) {
    std::vector<TaskInfo> tasks;
    for (std::size_t level = 0; level < counts.size(); ++level) {
        for (std::size_t i = 0; i < counts[level]; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "t%03zu", tasks.size());
            tasks.push_back({id, static_cast<int>(level + 1)});
        }
    }
    return tasks;
}

inline std::string read_file(const std::filesystem::path& path) { return read_text_file(path); }

}  // namespace kagent::testing

namespace kagent::testing {

/// Log whose level d has `totals[d-1]` tasks, of which the first
/// `call_ok[d-1]` are call-ok and the first `exec_ok[d-1]` exec-ok.
inline RunLog counted_log(const std::string& benchmark, const std::vector<std::size_t>& totals,
                          const std::vector<std::size_t>& call_ok, const std::vector<std::size_t>& exec_ok) {
    const auto tasks = tasks_with_difficulties(totals);
    std::vector<UnitOutcome> outcomes;
    for (std::size_t level = 0; level < totals.size(); ++level) {
        for (std::size_t i = 0; i < totals[level]; ++i) {
            outcomes.push_back({i < call_ok[level], i < exec_ok[level], 2.0});
        }
    }
    return make_log(benchmark, tasks, outcomes);
}

}  // namespace kagent::testing
