#include "kagent/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "kagent/errors.hpp"

namespace kagent {

using nlohmann::json;

double kernel_speedup(const ExecutionReport& report) {
    if (!report.all_passed()) {
        throw NotExecOk();
    }
    double sum = 0.0;
    for (const auto& test : report.test_results) {
        if (!test.candidate_latency_ms || !test.reference_latency_ms ||
            !(*test.candidate_latency_ms > 0.0) || !(*test.reference_latency_ms > 0.0)) {
            throw DomainError("test '" + test.test_id + "' has no positive latency measurements");
        }
        sum += *test.reference_latency_ms / *test.candidate_latency_ms;
    }
    return sum / static_cast<double>(report.test_results.size());
}

double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k) {
    if (n < 0 || c < 0 || c > n || k < 1 || k > n) {
        throw DomainError(fmt::format("pass_at_k requires 0 <= c <= n and 1 <= k <= n (n={}, c={}, k={})",
                                      n, c, k));
    }
    if (n - c < k) {
        return 1.0;
    }
    // C(n-c, k) / C(n, k) = prod_{i<k} (n-c-i) / (n-i)
    double all_wrong = 1.0;
    for (std::int64_t i = 0; i < k; ++i) {
        all_wrong *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - all_wrong;
}

// ---------------------------------------------------------------------------
// Log I/O

void RunLog::sort_records() {
    std::stable_sort(records.begin(), records.end(), [](const LogRecord& a, const LogRecord& b) {
        return std::tie(a.task_id, a.replica, a.iteration) < std::tie(b.task_id, b.replica, b.iteration);
    });
}

bool RunLog::failed() const {
    return std::any_of(task_ends.begin(), task_ends.end(),
                       [](const TaskEnd& end) { return end.status != "completed"; });
}

std::string digest_text(std::string_view text) {
    if (text.empty()) {
        return {};
    }
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", hash);
}

json to_json(const LogHeader& header) {
    json tasks = json::array();
    for (const auto& task : header.tasks) {
        tasks.push_back({{"id", task.id}, {"difficulty", task.difficulty}});
    }
    return {{"type", "header"},
            {"benchmark", header.benchmark},
            {"replica", header.replica_index},
            {"tasks", std::move(tasks)},
            {"run_manifest", header.run_manifest}};
}

json to_json(const LogRecord& record) {
    return {{"type", "attempt"},
            {"task_id", record.task_id},
            {"replica", record.replica},
            {"iteration", record.iteration},
            {"phase", record.phase},
            {"strategy_id", record.strategy_id},
            {"call_ok", record.call_ok},
            {"tests_passed", record.tests_passed},
            {"tests_total", record.tests_total},
            {"timed_out", record.timed_out},
            {"speedup", record.speedup ? json(*record.speedup) : json(nullptr)},
            {"trace_digest", record.trace_digest},
            {"prompt_fingerprint", record.prompt_fingerprint}};
}

json to_json(const TaskEnd& end) {
    return {{"type", "task_end"},
            {"task_id", end.task_id},
            {"replica", end.replica},
            {"status", end.status},
            {"message", end.message}};
}

LogWriter::LogWriter(const std::filesystem::path& path, const LogHeader& header) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) {
        throw Error("cannot create log file '" + path.string() + "'");
    }
    write_line(to_json(header));
}

void LogWriter::append(const LogRecord& record) { write_line(to_json(record)); }

void LogWriter::end_task(const TaskEnd& end) { write_line(to_json(end)); }

void LogWriter::write_line(const json& line) {
    std::lock_guard lock(mutex_);
    out_ << line.dump() << '\n';
    out_.flush();
}

namespace {

LogRecord record_from_json(const json& node) {
    LogRecord record;
    record.task_id = node.at("task_id").get<std::string>();
    record.replica = node.at("replica").get<std::size_t>();
    record.iteration = node.at("iteration").get<int>();
    record.phase = node.at("phase").get<std::string>();
    record.strategy_id = node.at("strategy_id").get<int>();
    record.call_ok = node.at("call_ok").get<bool>();
    record.tests_passed = node.at("tests_passed").get<std::size_t>();
    record.tests_total = node.at("tests_total").get<std::size_t>();
    record.timed_out = node.value("timed_out", false);
    if (node.contains("speedup") && !node.at("speedup").is_null()) {
        record.speedup = node.at("speedup").get<double>();
    }
    record.trace_digest = node.value("trace_digest", std::string{});
    record.prompt_fingerprint = node.value("prompt_fingerprint", std::string{});
    return record;
}

}  // namespace

RunLog parse_run_log(std::istream& in, const std::string& origin) {
    RunLog log;
    bool have_header = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto where = fmt::format("{}:{}", origin, line_no);
        json node;
        try {
            node = json::parse(line);
            const auto type = node.at("type").get<std::string>();
            if (type == "header") {
                if (have_header) {
                    throw ParseError(where + ": second header line");
                }
                have_header = true;
                log.header.benchmark = node.at("benchmark").get<std::string>();
                log.header.replica_index = node.value("replica", std::size_t{0});
                for (const auto& task : node.at("tasks")) {
                    log.header.tasks.push_back(
                        {task.at("id").get<std::string>(), task.value("difficulty", 3)});
                }
                log.header.run_manifest = node.value("run_manifest", json::object());
            } else if (!have_header) {
                throw ParseError(where + ": record before header");
            } else if (type == "attempt") {
                log.records.push_back(record_from_json(node));
            } else if (type == "task_end") {
                log.task_ends.push_back({node.at("task_id").get<std::string>(),
                                         node.value("replica", std::size_t{0}),
                                         node.at("status").get<std::string>(),
                                         node.value("message", std::string{})});
            } else {
                throw ParseError(where + ": unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    if (!have_header) {
        throw ParseError(origin + ": missing header line");
    }
    log.sort_records();
    return log;
}

RunLog read_run_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open log '" + path.string() + "'");
    }
    return parse_run_log(in, path.string());
}

std::vector<RunLog> read_log_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw ParseError("'" + dir.string() + "' is not a directory");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<RunLog> logs;
    for (const auto& file : files) {
        logs.push_back(read_run_log(file));
    }
    return logs;
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<Outcome> select_outcomes(const RunLog& log, const Selector& selector) {
    std::map<std::pair<std::string, std::size_t>, std::vector<const LogRecord*>> by_unit;
    std::set<std::size_t> replicas;
    for (const auto& record : log.records) {
        if (selector.iteration_budget && record.iteration >= *selector.iteration_budget) {
            continue;
        }
        by_unit[{record.task_id, record.replica}].push_back(&record);
        replicas.insert(record.replica);
    }
    if (replicas.empty()) {
        replicas.insert(log.header.replica_index);
    }

    std::vector<Outcome> outcomes;
    for (const auto& task : log.header.tasks) {
        for (const auto replica : replicas) {
            Outcome outcome{task.id, task.difficulty, replica, false, false, std::nullopt};
            const auto it = by_unit.find({task.id, replica});
            if (it != by_unit.end() && !it->second.empty()) {
                auto attempts = it->second;
                std::stable_sort(attempts.begin(), attempts.end(),
                                 [](const LogRecord* a, const LogRecord* b) {
                                     return a->iteration < b->iteration;
                                 });
                const LogRecord* chosen = attempts.back();
                if (selector.kind == Selector::Kind::Best) {
                    const LogRecord* best_exec = nullptr;
                    const LogRecord* first_call = nullptr;
                    for (const LogRecord* r : attempts) {
                        if (r->exec_ok() &&
                            (!best_exec || r->speedup.value_or(0.0) > best_exec->speedup.value_or(0.0))) {
                            best_exec = r;
                        }
                        if (r->call_ok && !first_call) {
                            first_call = r;
                        }
                    }
                    chosen = best_exec ? best_exec : first_call ? first_call : attempts.front();
                }
                outcome.call_ok = chosen->call_ok;
                outcome.exec_ok = chosen->exec_ok();
                if (outcome.exec_ok) {
                    outcome.speedup = chosen->speedup;
                }
            }
            outcomes.push_back(std::move(outcome));
        }
    }
    return outcomes;
}

double call_accuracy(const RunLog& log, const Selector& selector) {
    const auto outcomes = select_outcomes(log, selector);
    if (outcomes.empty()) {
        throw EmptyLog();
    }
    return summarize(outcomes, Grouping::None).overall.call_accuracy;
}

double exec_accuracy(const RunLog& log, const Selector& selector, ExecDenominator denominator) {
    const auto outcomes = select_outcomes(log, selector);
    if (outcomes.empty()) {
        throw EmptyLog();
    }
    return summarize(outcomes, Grouping::None, denominator).overall.exec_accuracy;
}

namespace {

GroupMetrics aggregate(std::string label, std::span<const Outcome* const> units,
                       ExecDenominator denominator) {
    GroupMetrics group;
    group.label = std::move(label);
    group.n_tasks = units.size();
    double speedup_sum = 0.0;
    std::size_t speedup_count = 0;
    for (const Outcome* unit : units) {
        group.n_call_ok += unit->call_ok ? 1 : 0;
        group.n_exec_ok += unit->exec_ok ? 1 : 0;
        if (unit->exec_ok && unit->speedup) {
            speedup_sum += *unit->speedup;
            ++speedup_count;
        }
    }
    if (group.n_tasks > 0) {
        group.call_accuracy = static_cast<double>(group.n_call_ok) / static_cast<double>(group.n_tasks);
    }
    const std::size_t exec_base = denominator == ExecDenominator::Benchmark ? group.n_tasks : group.n_call_ok;
    if (exec_base > 0) {
        group.exec_accuracy = static_cast<double>(group.n_exec_ok) / static_cast<double>(exec_base);
    }
    if (speedup_count > 0) {
        group.mean_speedup = speedup_sum / static_cast<double>(speedup_count);
    }
    return group;
}

}  // namespace

MetricsSummary summarize(std::span<const Outcome> outcomes, Grouping grouping,
                         ExecDenominator denominator) {
    MetricsSummary summary;
    summary.denominator = denominator;
    std::vector<const Outcome*> all;
    std::map<int, std::vector<const Outcome*>> by_difficulty;
    for (const auto& outcome : outcomes) {
        all.push_back(&outcome);
        by_difficulty[outcome.difficulty].push_back(&outcome);
    }
    summary.overall = aggregate("overall", all, denominator);
    if (grouping == Grouping::Difficulty) {
        for (const auto& [difficulty, units] : by_difficulty) {
            summary.groups.push_back(aggregate(std::to_string(difficulty), units, denominator));
        }
    }
    return summary;
}

MetricsSummary report(std::span<const RunLog> logs, Grouping grouping, const Selector& selector,
                      ExecDenominator denominator) {
    std::vector<Outcome> outcomes;
    for (const auto& log : logs) {
        auto selected = select_outcomes(log, selector);
        outcomes.insert(outcomes.end(), selected.begin(), selected.end());
    }
    if (outcomes.empty()) {
        throw EmptyLog();
    }
    return summarize(outcomes, grouping, denominator);
}

namespace {

std::string percent(double fraction) { return fmt::format("{:.2f}", 100.0 * fraction); }

std::string speedup_cell(const std::optional<double>& speedup) {
    return speedup ? fmt::format("{:.2f}", *speedup) : std::string("-");
}

}  // namespace

std::string render_table(const MetricsSummary& summary) {
    std::string out = fmt::format("{:<10} {:>8} {:>8} {:>6} {:>12} {:>12} {:>12}\n", "group",
                                  "exec_ok", "call_ok", "total", "call_acc(%)", "exec_acc(%)",
                                  "avg_speedup");
    auto row = [&out](const GroupMetrics& g) {
        out += fmt::format("{:<10} {:>8} {:>8} {:>6} {:>12} {:>12} {:>12}\n", g.label, g.n_exec_ok,
                           g.n_call_ok, g.n_tasks, percent(g.call_accuracy), percent(g.exec_accuracy),
                           speedup_cell(g.mean_speedup));
    };
    for (const auto& group : summary.groups) {
        row(group);
    }
    if (!summary.groups.empty()) {
        out += std::string(74, '-') + "\n";
    }
    row(summary.overall);
    return out;
}

json to_json(const MetricsSummary& summary) {
    auto group_json = [](const GroupMetrics& g) {
        return json{{"group", g.label},
                    {"n_tasks", g.n_tasks},
                    {"n_call_ok", g.n_call_ok},
                    {"n_exec_ok", g.n_exec_ok},
                    {"call_accuracy", g.call_accuracy},
                    {"exec_accuracy", g.exec_accuracy},
                    {"mean_speedup", g.mean_speedup ? json(*g.mean_speedup) : json(nullptr)}};
    };
    json groups = json::array();
    for (const auto& group : summary.groups) {
        groups.push_back(group_json(group));
    }
    return {{"exec_denominator",
             summary.denominator == ExecDenominator::Benchmark ? "benchmark" : "call_ok"},
            {"overall", group_json(summary.overall)},
            {"groups", std::move(groups)}};
}

std::vector<ScalingPoint> scaling_table(std::span<const RunLog> logs, int max_k, const Selector& selector) {
    if (logs.empty()) {
        throw EmptyLog();
    }
    const auto& first = logs.front().header;
    std::vector<std::string> ids;
    for (const auto& task : first.tasks) {
        ids.push_back(task.id);
    }
    const json first_agent = first.run_manifest.value("agent", json());
    for (const auto& log : logs) {
        std::vector<std::string> other;
        for (const auto& task : log.header.tasks) {
            other.push_back(task.id);
        }
        if (log.header.benchmark != first.benchmark || other != ids) {
            throw MismatchedReplicas("replica logs cover different benchmarks or task lists");
        }
        if (log.header.run_manifest.value("agent", json()) != first_agent) {
            throw MismatchedReplicas("replica logs were produced with different agent configs");
        }
    }
    if (ids.empty()) {
        throw EmptyLog();
    }
    const auto n = static_cast<std::int64_t>(logs.size());
    if (max_k < 1 || max_k > n) {
        throw MismatchedReplicas(
            fmt::format("pass@{} needs at least {} replicas, found {}", max_k, max_k, n));
    }

    std::map<std::string, std::pair<std::int64_t, std::int64_t>> correct;  // id -> (call, exec)
    for (const auto& id : ids) {
        correct[id] = {0, 0};
    }
    for (const auto& log : logs) {
        for (const auto& outcome : select_outcomes(log, selector)) {
            auto& [c_call, c_exec] = correct[outcome.task_id];
            c_call += outcome.call_ok ? 1 : 0;
            c_exec += outcome.exec_ok ? 1 : 0;
        }
    }

    std::vector<ScalingPoint> points;
    for (int k = 1; k <= max_k; ++k) {
        double call_sum = 0.0;
        double exec_sum = 0.0;
        for (const auto& id : ids) {
            const auto [c_call, c_exec] = correct[id];
            call_sum += pass_at_k(n, std::min(c_call, n), k);
            exec_sum += pass_at_k(n, std::min(c_exec, n), k);
        }
        const auto tasks = static_cast<double>(ids.size());
        points.push_back({k, call_sum / tasks, exec_sum / tasks});
    }
    return points;
}

std::string render_scaling_table(std::span<const ScalingPoint> points) {
    std::string out = fmt::format("{:<8} {:>12} {:>12}\n", "pass@k", "call_acc(%)", "exec_acc(%)");
    for (const auto& p : points) {
        out += fmt::format("{:<8} {:>12} {:>12}\n", p.k, percent(p.call_pass_at_k),
                           percent(p.exec_pass_at_k));
    }
    return out;
}

std::string scaling_csv(std::span<const ScalingPoint> points) {
    std::string out = "k,call_pass_at_k,exec_pass_at_k\n";
    for (const auto& p : points) {
        out += fmt::format("{},{:.10f},{:.10f}\n", p.k, p.call_pass_at_k, p.exec_pass_at_k);
    }
    return out;
}

std::vector<SequentialPoint> sequential_table(std::span<const RunLog> logs, int max_iterations) {
    std::vector<SequentialPoint> points;
    for (int m = 1; m <= max_iterations; ++m) {
        const auto summary = report(logs, Grouping::None, Selector{Selector::Kind::Best, m});
        points.push_back({m, summary.overall.call_accuracy, summary.overall.exec_accuracy,
                          summary.overall.mean_speedup});
    }
    return points;
}

std::string render_sequential_table(std::span<const SequentialPoint> points) {
    std::string out = fmt::format("{:<10} {:>12} {:>12} {:>12}\n", "iterations", "call_acc(%)",
                                  "exec_acc(%)", "avg_speedup");
    for (const auto& p : points) {
        out += fmt::format("{:<10} {:>12} {:>12} {:>12}\n", p.iterations, percent(p.call_accuracy),
                           percent(p.exec_accuracy), speedup_cell(p.mean_speedup));
    }
    return out;
}

}  // namespace kagent
