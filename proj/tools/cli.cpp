#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "kagent/errors.hpp"
#include "kagent/metrics.hpp"
#include "kagent/retrieval.hpp"
#include "kagent/run.hpp"
#include "kagent/task.hpp"

namespace kagent::cli {

namespace fs = std::filesystem;
using nlohmann::json;

EngineConfig load_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("config '" + path.string() + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw ParseError(e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("config '" + path.string() + "' must be a JSON object");
    }
    const auto base = path.parent_path();
    auto resolve = [&base](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    EngineConfig config;
    config.backend = backend_config_from_json(doc.value("backend", json::object()));
    if (!config.backend.transcript_path.empty()) {
        config.backend.transcript_path = resolve(config.backend.transcript_path).string();
    }
    config.agent = agent_config_from_json(doc.value("agent", json::object()));
    try {
        const auto timing = doc.value("timing", json::object());
        config.timing.warmup_runs = timing.value("warmup_runs", config.timing.warmup_runs);
        config.timing.timed_runs = timing.value("timed_runs", config.timing.timed_runs);

        const auto executor = doc.value("executor", json::object());
        const auto kind = executor.value("kind", std::string("mock"));
        if (kind == "mock") {
            config.executor.kind = ExecutorKind::Mock;
        } else if (kind == "subprocess") {
            config.executor.kind = ExecutorKind::Subprocess;
        } else {
            throw ParseError("executor.kind must be 'mock' or 'subprocess', got '" + kind + "'");
        }
        config.executor.command = executor.value("command", std::vector<std::string>{});
        config.executor.timeout =
            std::chrono::milliseconds(executor.value("timeout_ms", config.executor.timeout.count()));
        config.executor.workers = executor.value("workers", config.executor.workers);

        if (doc.contains("knowledge_path") && !doc.at("knowledge_path").is_null()) {
            config.knowledge_path = resolve(doc.at("knowledge_path").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return config;
}

std::vector<std::string> validate_config(const EngineConfig& config) {
    auto problems = validate_backend_config(config.backend);
    for (auto& p : validate_agent_config(config.agent)) {
        problems.push_back(std::move(p));
    }
    if (config.timing.warmup_runs < 0) {
        problems.push_back("timing.warmup_runs must be >= 0");
    }
    if (config.timing.timed_runs < 1) {
        problems.push_back("timing.timed_runs must be >= 1");
    }
    if (config.executor.timeout.count() <= 0) {
        problems.push_back("executor.timeout_ms must be positive");
    }
    if (config.executor.kind == ExecutorKind::Subprocess && config.executor.command.empty()) {
        problems.push_back("executor.command is required for the subprocess executor");
    }
    if (config.backend.kind == BackendKind::Mock && config.backend.transcript_path.empty()) {
        problems.push_back("backend.transcript is required for the mock backend");
    }
    if (config.knowledge_path && !fs::exists(*config.knowledge_path)) {
        problems.push_back("knowledge_path '" + config.knowledge_path->string() + "' does not exist");
    }
    return problems;
}

namespace {

struct GlobalOptions {
    std::string config;
    std::string out;
    bool trace = false;
    std::size_t workers = 0;
};

struct RunOptions {
    std::string config;
    std::string benchmark;
    std::size_t replicas = 1;
    int iterations = 0;
    std::string out_dir = "runs/latest";
    std::vector<std::string> ablations;
};

struct ReportOptions {
    std::string log_dir;
    std::string group = "difficulty";
    std::string denominator = "benchmark";
    int sequential = 0;
    std::string out;
};

struct ScalingOptions {
    std::string log_dir;
    int max_k = 10;
    std::string out;
};

struct RetrieveOptions {
    std::string query_file;
    std::string corpus;
    std::string benchmark;
};

struct ValidateOptions {
    std::string benchmark;
    std::string config;
};

void configure_logging(bool trace) {
    static std::once_flag once;
    std::call_once(once, [] {
        auto logger = spdlog::stderr_logger_mt("kagent");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
    });
    spdlog::set_level(trace ? spdlog::level::debug : spdlog::level::warn);
}

void print_problems(std::ostream& err, const std::string& what, const std::vector<std::string>& problems) {
    err << what << ":\n";
    for (const auto& p : problems) {
        err << "  - " << p << "\n";
    }
}

int cmd_run(const RunOptions& opts, const GlobalOptions& global, std::ostream& out, std::ostream& err) {
    if (opts.config.empty()) {
        print_problems(err, "invalid configuration", {"--config is required for run"});
        return kUsage;
    }
    if (!fs::exists(opts.config)) {
        print_problems(err, "invalid configuration", {"config file '" + opts.config + "' not found"});
        return kFault;
    }
    EngineConfig config = load_config(opts.config);
    if (opts.iterations > 0) {
        config.agent.max_iterations = opts.iterations;
    }
    for (const auto& ablation : opts.ablations) {
        if (ablation == "no-knowledge") {
            config.agent.knowledge_enabled = false;
        } else if (ablation == "no-one-shot") {
            config.agent.one_shot_enabled = false;
        } else if (ablation == "no-optimizer") {
            config.agent.optimizer_enabled = false;
        }
    }
    if (global.workers > 0) {
        config.executor.workers = global.workers;
    }
    if (const auto problems = validate_config(config); !problems.empty()) {
        print_problems(err, "invalid configuration", problems);
        return kFault;
    }

    const auto manifest_problems = [&]() -> std::vector<std::string> {
        const auto unchecked = load_manifest_unchecked(opts.benchmark);
        std::vector<std::string> lines;
        for (const auto& v : validate_manifest(unchecked, unchecked.exemplar_corpus_ref.empty()
                                                              ? std::vector<std::string>{}
                                                              : read_corpus_ids(unchecked.corpus_path()))) {
            lines.push_back(fmt::format("{} [{}]: {}", v.task_id, to_string(v.code), v.message));
        }
        return lines;
    }();
    if (!manifest_problems.empty()) {
        print_problems(err, "invalid benchmark manifest", manifest_problems);
        return kFault;
    }
    const BenchmarkManifest manifest = load_manifest(opts.benchmark);

    std::optional<Corpus> corpus;
    if (!manifest.exemplar_corpus_ref.empty()) {
        corpus = load_corpus(manifest.corpus_path());
    }

    std::unique_ptr<Executor> executor;
    if (config.executor.kind == ExecutorKind::Mock) {
        executor = std::make_unique<MockExecutor>();
    } else {
        executor = std::make_unique<SubprocessExecutor>(config.executor.command, config.executor.workers);
    }

    RunPlan plan;
    plan.benchmark = &manifest;
    plan.corpus = corpus ? &*corpus : nullptr;
    plan.agent = config.agent;
    plan.backend = config.backend;
    plan.timing = config.timing;
    plan.execution_timeout = config.executor.timeout;
    if (config.knowledge_path) {
        plan.knowledge = load_knowledge(*config.knowledge_path);
    }
    plan.executor = executor.get();
    if (config.backend.kind == BackendKind::Mock) {
        auto transcript = std::make_shared<Transcript>(load_transcript(config.backend.transcript_path));
        plan.make_backend = [transcript](std::size_t replica) -> std::unique_ptr<ChatBackend> {
            return std::make_unique<ScriptedBackend>(transcript->for_replica(replica),
                                                     fmt::format("mock[{}]", replica));
        };
    } else {
        TraceSink sink;
        if (global.trace) {
            sink = [](std::string_view text) { spdlog::debug("http trace:\n{}", text); };
        }
        plan.make_backend = [sink](std::size_t) -> std::unique_ptr<ChatBackend> {
            return std::make_unique<HttpChatBackend>(sink);
        };
    }

    RunManifest run_manifest;
    run_manifest.agent = config.agent;
    run_manifest.backend = config.backend;
    run_manifest.timing = config.timing;
    run_manifest.executor = executor->identity();
    run_manifest.benchmark = manifest.name;
    run_manifest.replicas = opts.replicas;
    run_manifest.started_at = utc_timestamp();
    plan.run_manifest = run_manifest.to_json();

    const fs::path out_dir = opts.out_dir;
    fs::create_directories(out_dir);
    write_text_file(out_dir / "run_manifest.json", plan.run_manifest.dump(2) + "\n");
    plan.log_dir = out_dir;

    const auto results = run_parallel(plan, opts.replicas);

    json summary = {{"benchmark", manifest.name},
                    {"started_at", run_manifest.started_at},
                    {"finished_at", utc_timestamp()},
                    {"replicas", json::array()}};
    std::size_t failed = 0;
    std::vector<RunLog> logs;
    for (const auto& result : results) {
        summary["replicas"].push_back({{"replica", result.replica_index},
                                       {"failed", result.failed},
                                       {"failure", result.failure},
                                       {"attempts", result.log.records.size()}});
        if (result.failed) {
            ++failed;
            err << fmt::format("replica {} failed: {}\n", result.replica_index, result.failure);
        }
        logs.push_back(result.log);
    }
    write_text_file(out_dir / "run_summary.json", summary.dump(2) + "\n");

    out << fmt::format("benchmark {}: {} replica(s), {} failed, logs in {}\n", manifest.name,
                       results.size(), failed, out_dir.string());
    if (!manifest.tasks.empty()) {
        out << render_table(report(logs, Grouping::None));
    }
    return failed == results.size() ? kRunIncomplete : kOk;
}

int cmd_report(const ReportOptions& opts, std::ostream& out) {
    const auto logs = read_log_dir(opts.log_dir);
    if (logs.empty()) {
        throw EmptyLog();
    }
    const Grouping grouping = opts.group == "none" ? Grouping::None : Grouping::Difficulty;
    const ExecDenominator denominator =
        opts.denominator == "call_ok" ? ExecDenominator::CallOk : ExecDenominator::Benchmark;
    const auto summary = report(logs, grouping, Selector{}, denominator);

    out << render_table(summary);
    json doc = to_json(summary);
    if (opts.sequential > 0) {
        const auto points = sequential_table(logs, opts.sequential);
        out << "\n" << render_sequential_table(points);
        json rows = json::array();
        for (const auto& p : points) {
            rows.push_back({{"iterations", p.iterations},
                            {"call_accuracy", p.call_accuracy},
                            {"exec_accuracy", p.exec_accuracy},
                            {"mean_speedup", p.mean_speedup ? json(*p.mean_speedup) : json(nullptr)}});
        }
        doc["sequential"] = std::move(rows);
    }
    const fs::path target = opts.out.empty() ? fs::path(opts.log_dir) / "summary.json" : fs::path(opts.out);
    write_text_file(target, doc.dump(2) + "\n");
    return kOk;
}

int cmd_scaling(const ScalingOptions& opts, std::ostream& out) {
    const auto logs = read_log_dir(opts.log_dir);
    if (logs.empty()) {
        throw EmptyLog();
    }
    const auto points = scaling_table(logs, opts.max_k);
    out << render_scaling_table(points);
    const fs::path target = opts.out.empty() ? fs::path(opts.log_dir) / "scaling.csv" : fs::path(opts.out);
    write_text_file(target, scaling_csv(points));
    return kOk;
}

int cmd_retrieve(const RetrieveOptions& opts, std::ostream& out, std::ostream& err) {
    const Corpus corpus = load_corpus(opts.corpus);
    std::set<std::string> exclude;
    if (!opts.benchmark.empty()) {
        for (const auto& id : load_manifest_unchecked(opts.benchmark).task_ids()) {
            exclude.insert(id);
        }
    }
    const auto hit = retrieve_top1(read_text_file(opts.query_file), corpus, exclude);
    if (!hit) {
        err << "no eligible corpus entry\n";
        return kFault;
    }
    out << fmt::format("{} {:.6f}\n", hit->entry.id, hit->score);
    return kOk;
}

int cmd_validate(const ValidateOptions& opts, std::ostream& out, std::ostream& err) {
    if (opts.benchmark.empty() && opts.config.empty()) {
        err << "validate: pass --benchmark and/or --config\n";
        return kUsage;
    }
    std::vector<std::string> problems;
    if (!opts.config.empty()) {
        for (auto& p : validate_config(load_config(opts.config))) {
            problems.push_back("config: " + p);
        }
    }
    std::size_t tasks = 0;
    if (!opts.benchmark.empty()) {
        const auto manifest = load_manifest_unchecked(opts.benchmark);
        tasks = manifest.tasks.size();
        const auto corpus_ids = manifest.exemplar_corpus_ref.empty()
                                    ? std::vector<std::string>{}
                                    : read_corpus_ids(manifest.corpus_path());
        for (const auto& v : validate_manifest(manifest, corpus_ids)) {
            problems.push_back(fmt::format("{} [{}]: {}", v.task_id, to_string(v.code), v.message));
        }
        if (problems.empty()) {
            for (const auto& [difficulty, count] : difficulty_counts(manifest)) {
                out << fmt::format("difficulty {}: {} task(s)\n", difficulty, count);
            }
        }
    }
    if (!problems.empty()) {
        print_problems(err, fmt::format("{} violation(s)", problems.size()), problems);
        return kFault;
    }
    out << fmt::format("ok ({} task(s))\n", tasks);
    return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Agentic GPU kernel generation engine and evaluation harness", "kagent"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kEngineVersion));

    // Global flags may appear before or after the subcommand.
    app.fallthrough();
    GlobalOptions global;
    app.add_option("--config", global.config, "Engine config file");
    app.add_option("--out", global.out,
                   "Output location: run directory for run, summary file for report, data file for scaling");
    app.add_flag("--trace", global.trace, "Log backend request/response bodies (credentials redacted)");
    app.add_option("--workers", global.workers, "Maximum concurrent executor subprocesses")
        ->check(CLI::PositiveNumber);

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "Run a benchmark sweep");
    run->add_option("--benchmark", run_opts.benchmark, "Benchmark manifest")->required();
    run->add_option("--replicas", run_opts.replicas, "Independent parallel replicas")
        ->check(CLI::PositiveNumber);
    run->add_option("--iterations", run_opts.iterations, "Sequential iterations per task")
        ->check(CLI::PositiveNumber);
    run->add_option("--ablate", run_opts.ablations, "Disable a module (repeatable)")
        ->check(CLI::IsMember({"no-knowledge", "no-one-shot", "no-optimizer"}));

    ReportOptions report_opts;
    auto* rep = app.add_subcommand("report", "Accuracy and speedup tables from run logs");
    rep->add_option("log_dir", report_opts.log_dir, "Directory of replica logs")->required();
    rep->add_option("--group", report_opts.group, "Row grouping")
        ->check(CLI::IsMember({"difficulty", "none"}));
    rep->add_option("--exec-denominator", report_opts.denominator,
                    "Execution accuracy over the whole benchmark or only call-ok kernels")
        ->check(CLI::IsMember({"benchmark", "call_ok"}));
    rep->add_option("--sequential", report_opts.sequential,
                    "Also tabulate accuracy after 1..N iterations");

    ScalingOptions scaling_opts;
    auto* scale = app.add_subcommand("scaling", "pass@k table over parallel replicas");
    scale->add_option("log_dir", scaling_opts.log_dir, "Directory of replica logs")->required();
    scale->add_option("--max-k", scaling_opts.max_k, "Largest k")->check(CLI::PositiveNumber);

    RetrieveOptions retrieve_opts;
    auto* retrieve = app.add_subcommand("retrieve", "Most similar 1-shot exemplar for some code");
    retrieve->add_option("--query-file", retrieve_opts.query_file, "Code to match")
        ->required()
        ->check(CLI::ExistingFile);
    retrieve->add_option("--corpus", retrieve_opts.corpus, "Corpus document")->required();
    retrieve->add_option("--benchmark", retrieve_opts.benchmark,
                         "Manifest whose task ids are excluded");

    ValidateOptions validate_opts;
    auto* validate = app.add_subcommand("validate", "Check a benchmark manifest and/or config");
    validate->add_option("--benchmark", validate_opts.benchmark, "Benchmark manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }
    configure_logging(global.trace);
    run_opts.config = global.config;
    validate_opts.config = global.config;
    if (!global.out.empty()) {
        run_opts.out_dir = global.out;
        report_opts.out = global.out;
        scaling_opts.out = global.out;
    }

    try {
        if (*run) return cmd_run(run_opts, global, out, err);
        if (*rep) return cmd_report(report_opts, out);
        if (*scale) return cmd_scaling(scaling_opts, out);
        if (*retrieve) return cmd_retrieve(retrieve_opts, out, err);
        if (*validate) return cmd_validate(validate_opts, out, err);
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << "\n";
        return kFault;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kFault;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kFault;
    }
    return kUsage;
}

}  // namespace kagent::cli
