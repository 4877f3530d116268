#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"
#include "kagent/run.hpp"
#include "support/test_util.hpp"

using namespace kagent;

namespace {

std::string fenced(const std::string& body) { return "```python\n" + body + "\n```"; }

const std::string kGood = fenced("# @mock pass cand_ms=1 ref_ms=2");
const std::string kBad = fenced("# @mock fail tests=1");

struct Fixture {
    BenchmarkManifest benchmark = kagent::testing::make_benchmark("mini", {1, 1});
    MockExecutor executor;
    RunPlan plan;

    explicit Fixture(std::vector<std::vector<std::string>> scripts) {
        plan.benchmark = &benchmark;
        plan.executor = &executor;
        plan.agent.max_iterations = 2;
        plan.run_manifest = {{"agent", to_json(plan.agent)}};
        auto shared = std::make_shared<std::vector<std::vector<std::string>>>(std::move(scripts));
        plan.make_backend = [shared](std::size_t replica) -> std::unique_ptr<ChatBackend> {
            return std::make_unique<ScriptedBackend>(shared->at(replica % shared->size()));
        };
    }
};

std::string records_text(const RunLog& log) {
    std::string out;
    for (const auto& r : log.records) {
        out += to_json(r).dump() + "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("one replica equals a single sweep") {
    Fixture f({{kBad, kGood, kGood, kGood}});
    const auto sweep = run_sweep(f.plan, 0);
    const auto parallel = run_parallel(f.plan, 1);
    REQUIRE(parallel.size() == 1);
    CHECK_FALSE(sweep.failed);
    CHECK(records_text(sweep.log) == records_text(parallel[0].log));
    CHECK(sweep.log.records.size() == 4);
    CHECK(sweep.tasks.size() == 2);
}

TEST_CASE("replicas replay their own transcripts") {
    Fixture f({{kGood, kGood, kGood, kGood}, {kBad, kBad, kBad, kBad}, {kGood, kBad, kBad, kGood}});
    const auto results = run_parallel(f.plan, 3);
    REQUIRE(results.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(results[i].replica_index == i);
        CHECK_FALSE(results[i].failed);
        for (const auto& r : results[i].log.records) {
            CHECK(r.replica == i);
        }
    }
    CHECK(exec_accuracy(results[0].log) == 1.0);
    CHECK(exec_accuracy(results[1].log) == 0.0);
    CHECK(records_text(results[0].log) != records_text(results[2].log));
}

TEST_CASE("a failing replica does not stop its siblings") {
    Fixture f({{kGood, kGood, kGood, kGood}, {kBad}});
    const auto results = run_parallel(f.plan, 4);
    REQUIRE(results.size() == 4);
    CHECK_FALSE(results[0].failed);
    CHECK(results[1].failed);
    CHECK(results[1].failure.find("exhausted") != std::string::npos);
    CHECK_FALSE(results[2].failed);
    CHECK(results[3].failed);
    CHECK(results[0].log.records.size() == 4);
}

TEST_CASE("concurrency cap") {
    Fixture f({{kGood, kGood, kGood, kGood}});
    f.plan.max_concurrent_replicas = 2;
    const auto results = run_parallel(f.plan, 5);
    CHECK(results.size() == 5);
    for (const auto& r : results) {
        CHECK_FALSE(r.failed);
    }
}

TEST_CASE("replica logs are streamed to disk") {
    kagent::testing::TempDir dir;
    Fixture f({{kGood, kGood, kGood, kGood}, {kBad}});
    f.plan.log_dir = dir.path();
    const auto results = run_parallel(f.plan, 2);
    CHECK(std::filesystem::exists(replica_log_path(dir.path(), 0)));
    CHECK(replica_log_path(dir.path(), 1).filename() == "replica_001.jsonl");
    const auto logs = read_log_dir(dir.path());
    REQUIRE(logs.size() == 2);
    CHECK(records_text(logs[0]) == records_text(results[0].log));
    CHECK(logs[0].header.tasks.size() == 2);
    CHECK(logs[0].header.run_manifest.at("agent") == to_json(f.plan.agent));
    CHECK(logs[1].failed());
}

TEST_CASE("run manifest snapshot") {
    RunManifest manifest;
    manifest.benchmark = "mini";
    manifest.replicas = 3;
    manifest.agent.optimizer_enabled = false;
    manifest.started_at = "2026-01-01T00:00:00Z";
    const auto doc = manifest.to_json();
    CHECK(doc.at("agent").at("optimizer_enabled") == false);
    CHECK(doc.at("replicas") == 3);
    CHECK(doc.at("engine_version") == kEngineVersion);
    CHECK(utc_timestamp().size() == 20);
}
