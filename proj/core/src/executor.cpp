#include "kagent/executor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"

namespace kagent {

using nlohmann::json;

bool ExecutionReport::all_passed() const {
    return call_ok && !test_results.empty() &&
           std::all_of(test_results.begin(), test_results.end(),
                       [](const TestResult& t) { return t.passed; });
}

std::size_t ExecutionReport::passed_count() const {
    return static_cast<std::size_t>(std::count_if(
        test_results.begin(), test_results.end(), [](const TestResult& t) { return t.passed; }));
}

ExecutionReport call_failure(std::string trace, bool timed_out) {
    ExecutionReport report;
    report.call_ok = false;
    report.error_trace = std::move(trace);
    report.timed_out = timed_out;
    return report;
}

std::vector<std::string> validate_report(const ExecutionReport& report) {
    std::vector<std::string> problems;
    if (!report.call_ok && !report.test_results.empty()) {
        problems.push_back("call_ok is false but test results are present");
    }
    if (report.timed_out && report.call_ok) {
        problems.push_back("timed_out is true but call_ok is true");
    }
    for (const auto& test : report.test_results) {
        const bool has_latency = test.candidate_latency_ms || test.reference_latency_ms;
        if (!test.passed && has_latency) {
            problems.push_back("test '" + test.test_id + "' failed but carries latencies");
        }
        for (const auto& latency : {test.candidate_latency_ms, test.reference_latency_ms}) {
            if (latency && !(*latency > 0.0)) {
                problems.push_back("test '" + test.test_id + "' has a non-positive latency");
            }
        }
        if (!(test.max_abs_err >= 0.0)) {
            problems.push_back("test '" + test.test_id + "' has a negative or NaN max_abs_err");
        }
    }
    return problems;
}

json to_json(const ExecutionRequest& request) {
    json tests = json::array();
    for (const auto& test : request.tests) {
        tests.push_back({{"id", test.id},
                         {"seed", test.seed},
                         {"rtol", test.rel_tolerance},
                         {"atol", test.abs_tolerance}});
    }
    return {{"protocol_version", kProtocolVersion},
            {"candidate_code", request.candidate_code},
            {"reference_code", request.reference_code},
            {"entry_point", request.entry_point},
            {"tests", std::move(tests)},
            {"warmup_runs", request.timing.warmup_runs},
            {"timed_runs", request.timing.timed_runs},
            {"timeout_ms", request.timeout.count()}};
}

ExecutionRequest request_from_json(const json& doc) {
    ExecutionRequest request;
    try {
        request.candidate_code = doc.at("candidate_code").get<std::string>();
        request.reference_code = doc.at("reference_code").get<std::string>();
        request.entry_point = doc.value("entry_point", std::string{});
        for (const auto& node : doc.at("tests")) {
            TestCase test;
            test.id = node.at("id").get<std::string>();
            test.seed = node.at("seed").get<std::uint64_t>();
            test.rel_tolerance = node.value("rtol", kDefaultRelTolerance);
            test.abs_tolerance = node.value("atol", kDefaultAbsTolerance);
            request.tests.push_back(std::move(test));
        }
        request.timing.warmup_runs = doc.value("warmup_runs", request.timing.warmup_runs);
        request.timing.timed_runs = doc.value("timed_runs", request.timing.timed_runs);
        request.timeout = std::chrono::milliseconds(doc.value("timeout_ms", request.timeout.count()));
    } catch (const json::exception& e) {
        throw ParseError(std::string("execution request: ") + e.what());
    }
    return request;
}

json to_json(const ExecutionReport& report) {
    json tests = json::array();
    for (const auto& test : report.test_results) {
        json node = {{"id", test.test_id}, {"passed", test.passed}};
        node["max_abs_err"] = std::isfinite(test.max_abs_err) ? json(test.max_abs_err) : json(nullptr);
        node["candidate_latency_ms"] =
            test.candidate_latency_ms ? json(*test.candidate_latency_ms) : json(nullptr);
        node["reference_latency_ms"] =
            test.reference_latency_ms ? json(*test.reference_latency_ms) : json(nullptr);
        tests.push_back(std::move(node));
    }
    return {{"protocol_version", kProtocolVersion},
            {"call_ok", report.call_ok},
            {"error_trace", report.error_trace},
            {"timed_out", report.timed_out},
            {"test_results", std::move(tests)}};
}

ExecutionReport report_from_json(const json& doc) {
    if (!doc.is_object()) {
        throw ParseError("report must be a JSON object");
    }
    ExecutionReport report;
    try {
        if (doc.contains("protocol_version") && doc.at("protocol_version").get<int>() != kProtocolVersion) {
            throw ParseError("report: unsupported protocol_version " + doc.at("protocol_version").dump());
        }
        report.call_ok = doc.at("call_ok").get<bool>();
        report.error_trace = doc.value("error_trace", std::string{});
        report.timed_out = doc.value("timed_out", false);
        const json tests = doc.contains("test_results") ? doc.at("test_results") : json::array();
        if (!tests.is_array()) {
            throw ParseError("report: test_results must be an array");
        }
        for (const auto& node : tests) {
            TestResult test;
            test.test_id = node.at("id").get<std::string>();
            test.passed = node.at("passed").get<bool>();
            const auto& err = node.contains("max_abs_err") ? node.at("max_abs_err") : json(nullptr);
            test.max_abs_err =
                err.is_null() ? std::numeric_limits<double>::infinity() : err.get<double>();
            for (auto [key, slot] : {std::pair{"candidate_latency_ms", &test.candidate_latency_ms},
                                     std::pair{"reference_latency_ms", &test.reference_latency_ms}}) {
                if (node.contains(key) && !node.at(key).is_null()) {
                    *slot = node.at(key).get<double>();
                }
            }
            report.test_results.push_back(std::move(test));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    return report;
}

Comparison compare_outputs(const NumericArray& candidate, const NumericArray& reference, double rtol,
                           double atol) {
    if (candidate.shape != reference.shape || candidate.values.size() != reference.values.size()) {
        return {false, std::numeric_limits<double>::infinity()};
    }
    Comparison result{true, 0.0};
    for (std::size_t i = 0; i < candidate.values.size(); ++i) {
        const double c = candidate.values[i];
        const double r = reference.values[i];
        // Equal infinities compare equal; anything else non-finite is a mismatch.
        if (c == r) {
            continue;
        }
        double diff = std::fabs(c - r);
        if (std::isnan(diff)) {
            diff = std::numeric_limits<double>::infinity();
        }
        result.max_abs_err = std::max(result.max_abs_err, diff);
        if (!(diff <= atol + rtol * std::fabs(r))) {
            result.passed = false;
        }
    }
    return result;
}

ExecutionRequest make_request(const KernelTask& task, std::string candidate_code,
                              const TimingConfig& timing, std::chrono::milliseconds timeout) {
    ExecutionRequest request;
    request.candidate_code = std::move(candidate_code);
    request.reference_code = task.reference_code;
    request.entry_point = task.entry_point_or_id();
    request.tests = task.tests;
    request.timing = timing;
    request.timeout = timeout;
    return request;
}

WorkerGate::WorkerGate(std::size_t capacity) : available_(std::max<std::size_t>(capacity, 1)) {}

void WorkerGate::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return available_ > 0; });
    --available_;
}

void WorkerGate::release() {
    {
        std::lock_guard lock(mutex_);
        ++available_;
    }
    cv_.notify_one();
}

// ---------------------------------------------------------------------------
// MockExecutor

namespace {

struct MockDirective {
    std::string outcome;
    std::vector<std::pair<std::string, std::string>> options;

    std::optional<std::string> option(const std::string& key) const {
        for (const auto& [k, v] : options) {
            if (k == key) {
                return v;
            }
        }
        return std::nullopt;
    }
};

std::optional<MockDirective> find_directive(const std::string& code) {
    std::istringstream lines(code);
    std::string line;
    while (std::getline(lines, line)) {
        const auto at = line.find("@mock");
        if (at == std::string::npos) {
            continue;
        }
        std::istringstream words(line.substr(at + 5));
        MockDirective directive;
        words >> directive.outcome;
        std::string word;
        while (words >> word) {
            const auto eq = word.find('=');
            if (eq == std::string::npos) {
                directive.options.emplace_back(word, "");
            } else {
                directive.options.emplace_back(word.substr(0, eq), word.substr(eq + 1));
            }
        }
        return directive;
    }
    return std::nullopt;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> values;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            values.push_back(std::stod(item));
        }
    }
    return values;
}

double cycle(const std::vector<double>& values, std::size_t index, double fallback) {
    return values.empty() ? fallback : values[index % values.size()];
}

}  // namespace

ExecutionReport MockExecutor::execute(const ExecutionRequest& request) {
    const auto directive = find_directive(request.candidate_code);
    if (!directive) {
        return call_failure("SyntaxError: mock executor found no @mock directive in candidate");
    }
    const auto& outcome = directive->outcome;
    if (outcome == "unavailable") {
        throw ExecutorUnavailable("mock executor: scripted unavailability");
    }
    if (outcome == "timeout") {
        return call_failure("timed out (mock)", true);
    }
    if (outcome == "call_error") {
        return call_failure("RuntimeError: " +
                            directive->option("msg").value_or("mock compile failure"));
    }

    ExecutionReport report;
    report.call_ok = true;
    try {
        if (outcome == "pass") {
            const auto cand = parse_list(directive->option("cand_ms").value_or(""));
            const auto ref = parse_list(directive->option("ref_ms").value_or(""));
            for (std::size_t i = 0; i < request.tests.size(); ++i) {
                TestResult test;
                test.test_id = request.tests[i].id;
                test.passed = true;
                test.max_abs_err = 0.0;
                test.candidate_latency_ms = cycle(cand, i, 1.0);
                test.reference_latency_ms = cycle(ref, i, 1.0);
                report.test_results.push_back(std::move(test));
            }
            return report;
        }
        if (outcome == "fail") {
            auto failing = parse_list(directive->option("tests").value_or("1"));
            const double err = directive->option("err") ? std::stod(*directive->option("err")) : 0.5;
            std::string trace;
            for (std::size_t i = 0; i < request.tests.size(); ++i) {
                const bool fails = std::find(failing.begin(), failing.end(),
                                             static_cast<double>(i + 1)) != failing.end();
                TestResult test;
                test.test_id = request.tests[i].id;
                test.passed = !fails;
                test.max_abs_err = fails ? err : 0.0;
                if (fails) {
                    trace += "AssertionError: test '" + test.test_id +
                             "' outputs differ (max_abs_err=" + std::to_string(err) + ")\n";
                }
                report.test_results.push_back(std::move(test));
            }
            report.error_trace = trace;
            return report;
        }
    } catch (const std::exception& e) {
        return call_failure(std::string("mock executor: bad directive options: ") + e.what());
    }
    return call_failure("mock executor: unknown outcome '" + outcome + "'");
}

}  // namespace kagent
