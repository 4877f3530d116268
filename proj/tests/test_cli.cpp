#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "kagent/metrics.hpp"
#include "kagent/run.hpp"
#include "support/test_util.hpp"

using namespace kagent;
using kagent::testing::read_file;
using kagent::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = KAGENT_GOLDEN_DIR;

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "kagent");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    const int code = kagent::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

/// Every line but the header, which carries timestamps.
std::string body_lines(const fs::path& log) {
    std::istringstream in(read_file(log));
    std::string line;
    std::getline(in, line);
    std::string out;
    while (std::getline(in, line)) {
        out += line + "\n";
    }
    return out;
}

/// Compares against a stored golden file; KAGENT_UPDATE_GOLDEN=1 rewrites it.
void check_golden(const std::string& actual, const std::string& name) {
    const auto path = kFixtures / "mini" / name;
    if (std::getenv("KAGENT_UPDATE_GOLDEN") != nullptr) {
        write_text_file(path, actual);
    }
    REQUIRE(fs::exists(path));
    CHECK(actual == read_file(path));
}

std::string mini(const std::string& name) { return (kFixtures / "mini" / name).string(); }

}  // namespace

TEST_CASE("run with the mock backend matches the golden log") {
    TempDir dir;
    const auto out_dir = (dir / "run").string();
    const auto result = invoke({"run", "--config", mini("config.json"), "--benchmark", mini("manifest.json"),
                             "--replicas", "1", "--out", out_dir});
    INFO(result.err);
    REQUIRE(result.code == 0);
    CHECK(result.out.find("overall") != std::string::npos);
    CHECK(fs::exists(fs::path(out_dir) / "run_manifest.json"));
    CHECK(fs::exists(fs::path(out_dir) / "run_summary.json"));
    check_golden(body_lines(fs::path(out_dir) / "replica_000.jsonl"), "expected_replica_000.jsonl");

    const auto header = json::parse(read_file(fs::path(out_dir) / "replica_000.jsonl").substr(
        0, read_file(fs::path(out_dir) / "replica_000.jsonl").find('\n')));
    CHECK(header.at("type") == "header");
    CHECK(header.at("benchmark") == "mini");
    CHECK(header.at("tasks").size() == 2);

    SUBCASE("rerunning is deterministic") {
        const auto again = (dir / "again").string();
        REQUIRE(invoke({"--config", mini("config.json"), "run", "--benchmark", mini("manifest.json"), "--out",
                     again})
                    .code == 0);
        CHECK(body_lines(fs::path(again) / "replica_000.jsonl") ==
              body_lines(fs::path(out_dir) / "replica_000.jsonl"));
    }
    SUBCASE("report over the run") {
        const auto summary_path = (dir / "summary.json").string();
        const auto first = invoke({"report", out_dir, "--out", summary_path});
        REQUIRE(first.code == 0);
        check_golden(first.out, "expected_report.txt");
        const auto summary_bytes = read_file(summary_path);
        const auto second = invoke({"report", out_dir, "--out", summary_path});
        CHECK(second.out == first.out);
        CHECK(read_file(summary_path) == summary_bytes);

        const auto overall = invoke({"report", out_dir, "--group", "none", "--out", summary_path});
        std::istringstream rows(overall.out);
        std::string line;
        std::vector<std::string> lines;
        while (std::getline(rows, line)) {
            lines.push_back(line);
        }
        REQUIRE(lines.size() == 2);
        CHECK(lines[1].rfind("overall", 0) == 0);
    }
    SUBCASE("sequential report") {
        const auto result = invoke({"report", out_dir, "--sequential", "4", "--out", (dir / "s.json").string()});
        REQUIRE(result.code == 0);
        CHECK(result.out.find("iterations") != std::string::npos);
        CHECK(json::parse(read_file(dir / "s.json")).at("sequential").size() == 4);
    }
    SUBCASE("scaling needs enough replicas") {
        const auto result = invoke({"scaling", out_dir, "--max-k", "2"});
        CHECK(result.code != 0);
        CHECK_FALSE(result.err.empty());
    }
}

TEST_CASE("parallel run and scaling table") {
    TempDir dir;
    const auto out_dir = (dir / "run").string();
    REQUIRE(invoke({"run", "--config", mini("config.json"), "--benchmark", mini("manifest.json"), "--replicas", "3",
                 "--workers", "2", "--out", out_dir})
                .code == 0);
    CHECK(fs::exists(fs::path(out_dir) / "replica_002.jsonl"));
    const auto data = (dir / "scaling.csv").string();
    const auto first = invoke({"scaling", out_dir, "--max-k", "3", "--out", data});
    REQUIRE(first.code == 0);
    const auto bytes = read_file(data);
    CHECK(bytes.rfind("k,call_pass_at_k,exec_pass_at_k\n", 0) == 0);
    // Identical transcripts for every replica: the table is flat.
    std::istringstream rows(bytes);
    std::string line;
    std::vector<std::string> values;
    std::getline(rows, line);
    while (std::getline(rows, line)) {
        values.push_back(line.substr(line.find(',')));
    }
    REQUIRE(values.size() == 3);
    CHECK(values[0] == values[1]);
    CHECK(values[1] == values[2]);
    CHECK(invoke({"scaling", out_dir, "--max-k", "3", "--out", data}).out == first.out);
    CHECK(read_file(data) == bytes);
}

TEST_CASE("ablation flags reach the run manifest") {
    TempDir dir;
    const auto out_dir = (dir / "run").string();
    const auto result = invoke({"run", "--config", mini("config.json"), "--benchmark", mini("manifest.json"), "--ablate",
                             "no-optimizer", "--ablate", "no-knowledge", "--out", out_dir});
    REQUIRE(result.code == 0);
    const auto manifest = json::parse(read_file(fs::path(out_dir) / "run_manifest.json"));
    CHECK(manifest.at("agent").at("optimizer_enabled") == false);
    CHECK(manifest.at("agent").at("knowledge_enabled") == false);
    CHECK(manifest.at("agent").at("one_shot_enabled") == true);
    for (const auto& log : read_log_dir(out_dir)) {
        for (const auto& record : log.records) {
            CHECK(record.phase != "optimize");
        }
    }
}

TEST_CASE("run failures") {
    TempDir dir;
    SUBCASE("missing config") {
        const auto result = invoke({"run", "--config", (dir / "nope.json").string(), "--benchmark",
                                 mini("manifest.json"), "--out", (dir / "o").string()});
        CHECK(result.code != 0);
        CHECK(result.err.find("not found") != std::string::npos);
    }
    SUBCASE("no config at all") {
        CHECK(invoke({"run", "--benchmark", mini("manifest.json")}).code != 0);
    }
    SUBCASE("invalid config lists every problem") {
        write_text_file(dir / "bad.json",
                        R"({"backend": {"kind": "mock"}, "agent": {"max_iterations": 0}, "timing": {"timed_runs": 0}})");
        const auto result = invoke({"run", "--config", (dir / "bad.json").string(), "--benchmark",
                                 mini("manifest.json"), "--out", (dir / "o").string()});
        CHECK(result.code != 0);
        CHECK(result.err.find("max_iterations") != std::string::npos);
        CHECK(result.err.find("timed_runs") != std::string::npos);
        CHECK(result.err.find("transcript") != std::string::npos);
    }
    SUBCASE("exhausted transcript marks the run incomplete") {
        write_text_file(dir / "t.json", R"(["```\n# @mock pass\n```"])");
        write_text_file(dir / "c.json", json{{"backend", {{"kind", "mock"}, {"transcript", "t.json"}}},
                                             {"agent", {{"max_iterations", 2}}}}
                                            .dump());
        const auto result = invoke({"run", "--config", (dir / "c.json").string(), "--benchmark",
                                 mini("manifest.json"), "--out", (dir / "o").string()});
        CHECK(result.code == kagent::cli::kRunIncomplete);
        CHECK(result.err.find("replica 0 failed") != std::string::npos);
        const auto logs = read_log_dir(dir / "o");
        REQUIRE(logs.size() == 1);
        CHECK(logs[0].failed());
    }
    SUBCASE("unknown ablation") {
        CHECK(invoke({"run", "--config", mini("config.json"), "--benchmark", mini("manifest.json"), "--ablate",
                   "no-brain"})
                  .code == kagent::cli::kUsage);
    }
}

TEST_CASE("report failures") {
    TempDir dir;
    fs::create_directories(dir / "empty");
    const auto result = invoke({"report", (dir / "empty").string()});
    CHECK(result.code != 0);
    CHECK_FALSE(result.err.empty());
}

TEST_CASE("retrieve") {
    TempDir dir;
    write_text_file(dir / "q.py", read_file(kFixtures / "mini" / "corpus" / "layer_norm_fwd.py"));
    const auto result = invoke({"retrieve", "--query-file", (dir / "q.py").string(), "--corpus",
                             mini("corpus/corpus.json")});
    REQUIRE(result.code == 0);
    CHECK(result.out == "layer_norm_fwd 1.000000\n");
}

TEST_CASE("validate") {
    SUBCASE("good manifest and config") {
        const auto result = invoke({"validate", "--benchmark", mini("manifest.json"), "--config", mini("config.json")});
        CHECK(result.code == 0);
        CHECK(result.out.find("difficulty 1: 1 task(s)") != std::string::npos);
        CHECK(result.out.find("difficulty 3: 1 task(s)") != std::string::npos);
    }
    SUBCASE("violations are listed") {
        TempDir dir;
        fs::create_directories(dir / "kernels");
        write_text_file(dir / "kernels" / "a.py", "def a(): pass\n");
        write_text_file(dir / "m.json", R"({"name": "broken", "style": "tritonbench", "tasks": [
            {"id": "a", "instruction": "x", "code_path": "kernels/a.py", "difficulty": 9, "tests": []},
            {"id": "a", "instruction": "x", "code_path": "kernels/a.py", "difficulty": 1,
             "tests": [{"id": "t", "seed": 1}, {"id": "t", "seed": 2}]}]})");
        const auto result = invoke({"validate", "--benchmark", (dir / "m.json").string()});
        CHECK(result.code != 0);
        CHECK(result.err.find("InvalidDifficulty") != std::string::npos);
        CHECK(result.err.find("EmptyTestSpec") != std::string::npos);
        CHECK(result.err.find("DuplicateTestId") != std::string::npos);
        CHECK(result.err.find("DuplicateTaskId") != std::string::npos);
    }
    SUBCASE("nothing to validate") {
        CHECK(invoke({"validate"}).code == kagent::cli::kUsage);
    }
}

TEST_CASE("usage errors") {
    CHECK(invoke({}).code == kagent::cli::kUsage);
    CHECK(invoke({"frobnicate"}).code == kagent::cli::kUsage);
    CHECK(invoke({"--help"}).code == kagent::cli::kOk);
}
