#include "kagent/task.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"

namespace kagent {

using nlohmann::json;

namespace {

const char* style_name(ManifestStyle style) {
    return style == ManifestStyle::Rocm ? "rocm" : "tritonbench";
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw ParseError(where + ": missing field '" + key + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

template <typename T>
T field_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key) || obj.at(key).is_null()) {
        return fallback;
    }
    return field<T>(obj, key, where);
}

TestCase parse_test(const json& node, const std::string& task_id) {
    const std::string where = "task '" + task_id + "' test";
    if (!node.is_object()) {
        throw ParseError(where + ": expected an object");
    }
    TestCase test;
    test.id = field<std::string>(node, "id", where);
    const json& seed = node.contains("seed") ? node.at("seed") : json();
    if (!seed.is_number_unsigned()) {
        throw ParseError(where + " '" + test.id + "': seed must be a non-negative integer");
    }
    test.seed = seed.get<std::uint64_t>();
    test.rel_tolerance = field_or<double>(node, "rtol", kDefaultRelTolerance, where);
    test.abs_tolerance = field_or<double>(node, "atol", kDefaultAbsTolerance, where);
    return test;
}

KernelTask parse_task(const json& node, ManifestStyle style, const std::filesystem::path& base_dir) {
    if (!node.is_object()) {
        throw ParseError("tasks[]: expected an object");
    }
    KernelTask task;
    task.id = field<std::string>(node, "id", "task");
    const std::string where = "task '" + task.id + "'";
    task.instruction = field<std::string>(node, "instruction", where);
    task.code_path = field<std::string>(node, "code_path", where);
    task.entry_point = field_or<std::string>(node, "entry_point", "", where);
    task.tags = field_or<std::vector<std::string>>(node, "tags", {}, where);
    if (node.contains("difficulty")) {
        task.difficulty = field<int>(node, "difficulty", where);
    } else if (style == ManifestStyle::TritonBench) {
        throw ValidationError(task.id, "difficulty is required in tritonbench-style manifests");
    }
    const json tests = node.contains("tests") ? node.at("tests") : json::array();
    if (!tests.is_array()) {
        throw ParseError(where + ": 'tests' must be an array");
    }
    for (const json& t : tests) {
        task.tests.push_back(parse_test(t, task.id));
    }

    const auto code_file = base_dir / task.code_path;
    try {
        task.reference_code = read_text_file(code_file);
    } catch (const Error&) {
        throw ParseError(where + ": cannot read reference code '" + code_file.string() + "'");
    }
    return task;
}

}  // namespace

const char* to_string(ViolationCode code) {
    switch (code) {
        case ViolationCode::EmptyTaskId: return "EmptyTaskId";
        case ViolationCode::InvalidDifficulty: return "InvalidDifficulty";
        case ViolationCode::EmptyTestSpec: return "EmptyTestSpec";
        case ViolationCode::EmptyTestId: return "EmptyTestId";
        case ViolationCode::DuplicateTestId: return "DuplicateTestId";
        case ViolationCode::NegativeTolerance: return "NegativeTolerance";
        case ViolationCode::DuplicateTaskId: return "DuplicateTaskId";
        case ViolationCode::CorpusOverlap: return "CorpusOverlap";
    }
    return "Unknown";
}

const KernelTask* BenchmarkManifest::find(const std::string& task_id) const {
    for (const auto& task : tasks) {
        if (task.id == task_id) {
            return &task;
        }
    }
    return nullptr;
}

std::vector<std::string> BenchmarkManifest::task_ids() const {
    std::vector<std::string> ids;
    ids.reserve(tasks.size());
    for (const auto& task : tasks) {
        ids.push_back(task.id);
    }
    return ids;
}

std::filesystem::path BenchmarkManifest::corpus_path() const {
    if (exemplar_corpus_ref.empty()) {
        return {};
    }
    return base_dir / exemplar_corpus_ref;
}

std::vector<Violation> validate_task(const KernelTask& task) {
    std::vector<Violation> out;
    auto add = [&](ViolationCode code, std::string message) {
        out.push_back({code, task.id, std::move(message)});
    };
    if (task.id.empty()) {
        add(ViolationCode::EmptyTaskId, "task id must be non-empty");
    }
    if (task.difficulty < 1 || task.difficulty > 5) {
        add(ViolationCode::InvalidDifficulty,
            "difficulty " + std::to_string(task.difficulty) + " is outside 1..5");
    }
    if (task.tests.empty()) {
        add(ViolationCode::EmptyTestSpec, "task has no tests");
    }
    std::set<std::string> seen;
    for (const auto& test : task.tests) {
        if (test.id.empty()) {
            add(ViolationCode::EmptyTestId, "test id must be non-empty");
        } else if (!seen.insert(test.id).second) {
            add(ViolationCode::DuplicateTestId, "duplicate test id '" + test.id + "'");
        }
        // Written as !(x >= 0) so NaN is rejected too.
        if (!(test.rel_tolerance >= 0.0) || !(test.abs_tolerance >= 0.0)) {
            add(ViolationCode::NegativeTolerance, "test '" + test.id + "' has a negative tolerance");
        }
    }
    return out;
}

namespace {

BenchmarkManifest parse_unchecked(const std::string& text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("manifest must be a JSON object");
    }

    BenchmarkManifest manifest;
    manifest.base_dir = base_dir;
    manifest.name = field<std::string>(doc, "name", "manifest");
    const auto style = field_or<std::string>(doc, "style", "tritonbench", "manifest");
    if (style == "tritonbench") {
        manifest.style = ManifestStyle::TritonBench;
    } else if (style == "rocm") {
        manifest.style = ManifestStyle::Rocm;
    } else {
        throw ParseError("manifest: unknown style '" + style + "'");
    }
    manifest.exemplar_corpus_ref = field_or<std::string>(doc, "exemplar_corpus_ref", "", "manifest");

    const json tasks = doc.contains("tasks") ? doc.at("tasks") : json::array();
    if (!tasks.is_array()) {
        throw ParseError("manifest: 'tasks' must be an array");
    }
    for (const json& node : tasks) {
        manifest.tasks.push_back(parse_task(node, manifest.style, base_dir));
    }
    return manifest;
}

std::vector<std::string> corpus_ids_of(const BenchmarkManifest& manifest) {
    if (manifest.exemplar_corpus_ref.empty()) {
        return {};
    }
    return read_corpus_ids(manifest.corpus_path());
}

void enforce(const BenchmarkManifest& manifest) {
    const auto violations = validate_manifest(manifest, corpus_ids_of(manifest));
    if (!violations.empty()) {
        throw ValidationError(violations.front().task_id, violations.front().message);
    }
}

}  // namespace

std::vector<Violation> validate_manifest(const BenchmarkManifest& manifest,
                                         const std::vector<std::string>& corpus_ids) {
    std::vector<Violation> out;
    std::set<std::string> ids;
    for (const auto& task : manifest.tasks) {
        if (!ids.insert(task.id).second) {
            out.push_back({ViolationCode::DuplicateTaskId, task.id, "duplicate task id"});
        }
        auto violations = validate_task(task);
        out.insert(out.end(), violations.begin(), violations.end());
    }
    for (const auto& id : corpus_ids) {
        if (ids.count(id) != 0) {
            out.push_back({ViolationCode::CorpusOverlap, id, "exemplar corpus overlaps the benchmark"});
        }
    }
    return out;
}

BenchmarkManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
    auto manifest = parse_unchecked(text, base_dir);
    enforce(manifest);
    return manifest;
}

BenchmarkManifest load_manifest_unchecked(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const Error& e) {
        throw ParseError(e.what());
    }
    return parse_unchecked(text, path.parent_path());
}

BenchmarkManifest load_manifest(const std::filesystem::path& path) {
    auto manifest = load_manifest_unchecked(path);
    enforce(manifest);
    return manifest;
}

json manifest_to_json(const BenchmarkManifest& manifest) {
    json tasks = json::array();
    for (const auto& task : manifest.tasks) {
        json tests = json::array();
        for (const auto& test : task.tests) {
            tests.push_back({{"id", test.id},
                             {"seed", test.seed},
                             {"rtol", test.rel_tolerance},
                             {"atol", test.abs_tolerance}});
        }
        json node = {{"id", task.id},
                     {"instruction", task.instruction},
                     {"code_path", task.code_path},
                     {"difficulty", task.difficulty},
                     {"tests", std::move(tests)}};
        if (!task.entry_point.empty()) {
            node["entry_point"] = task.entry_point;
        }
        if (!task.tags.empty()) {
            node["tags"] = task.tags;
        }
        tasks.push_back(std::move(node));
    }
    return {{"name", manifest.name},
            {"style", style_name(manifest.style)},
            {"exemplar_corpus_ref", manifest.exemplar_corpus_ref},
            {"tasks", std::move(tasks)}};
}

void save_manifest(const BenchmarkManifest& manifest, const std::filesystem::path& path) {
    const auto dir = path.parent_path();
    for (const auto& task : manifest.tasks) {
        write_text_file(dir / task.code_path, task.reference_code);
    }
    write_text_file(path, manifest_to_json(manifest).dump(2) + "\n");
}

std::map<int, std::size_t> difficulty_counts(const BenchmarkManifest& manifest) {
    std::map<int, std::size_t> counts;
    for (const auto& task : manifest.tasks) {
        ++counts[task.difficulty];
    }
    return counts;
}

std::vector<std::string> read_corpus_ids(const std::filesystem::path& corpus_path) {
    json doc;
    try {
        doc = json::parse(read_text_file(corpus_path));
    } catch (const json::parse_error& e) {
        throw ParseError("corpus '" + corpus_path.string() + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw ParseError(e.what());
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc.at("entries").is_array()) {
        throw ParseError("corpus '" + corpus_path.string() + "' must have an 'entries' array");
    }
    std::vector<std::string> ids;
    for (const json& entry : doc.at("entries")) {
        ids.push_back(field<std::string>(entry, "id", "corpus entry"));
    }
    return ids;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
    out << text;
}

}  // namespace kagent
