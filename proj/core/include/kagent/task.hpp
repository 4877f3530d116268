#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace kagent {

inline constexpr double kDefaultRelTolerance = 1e-3;
inline constexpr double kDefaultAbsTolerance = 1e-3;
inline constexpr int kDefaultDifficulty = 3;

struct TestCase {
    std::string id;
    std::uint64_t seed = 0;
    double rel_tolerance = kDefaultRelTolerance;
    double abs_tolerance = kDefaultAbsTolerance;

    bool operator==(const TestCase&) const = default;
};

struct KernelTask {
    std::string id;
    std::string instruction;
    std::string reference_code;
    /// Path of the reference kernel, relative to the manifest directory.
    std::string code_path;
    /// Name of the callable the runner invokes; empty means "use the task id".
    std::string entry_point;
    std::vector<TestCase> tests;
    int difficulty = kDefaultDifficulty;
    std::vector<std::string> tags;

    const std::string& entry_point_or_id() const { return entry_point.empty() ? id : entry_point; }

    bool operator==(const KernelTask&) const = default;
};

/// TritonBench-style manifests must label every task with a difficulty;
/// ROCm-style manifests report results overall only and may omit it.
enum class ManifestStyle { TritonBench, Rocm };

struct BenchmarkManifest {
    std::string name;
    ManifestStyle style = ManifestStyle::TritonBench;
    /// Corpus document for 1-shot exemplars, relative to the manifest directory.
    std::string exemplar_corpus_ref;
    std::vector<KernelTask> tasks;
    /// Directory the relative paths above resolve against. Not serialized.
    std::filesystem::path base_dir;

    const KernelTask* find(const std::string& task_id) const;
    std::vector<std::string> task_ids() const;
    std::filesystem::path corpus_path() const;

    bool operator==(const BenchmarkManifest& other) const {
        return name == other.name && style == other.style &&
               exemplar_corpus_ref == other.exemplar_corpus_ref && tasks == other.tasks;
    }
};

enum class ViolationCode {
    EmptyTaskId,
    InvalidDifficulty,
    EmptyTestSpec,
    EmptyTestId,
    DuplicateTestId,
    NegativeTolerance,
    DuplicateTaskId,
    CorpusOverlap,
};

const char* to_string(ViolationCode code);

struct Violation {
    ViolationCode code;
    std::string task_id;
    std::string message;
};

/// Checks every per-task invariant. Never throws.
std::vector<Violation> validate_task(const KernelTask& task);

/// Every manifest-level violation: per-task checks, duplicate task ids, and
/// exemplar corpus entries that collide with benchmark task ids.
std::vector<Violation> validate_manifest(const BenchmarkManifest& manifest,
                                         const std::vector<std::string>& corpus_ids);

/// Parses without enforcing invariants (for reporting every violation).
BenchmarkManifest load_manifest_unchecked(const std::filesystem::path& path);

/// Reads and validates a manifest document plus the reference kernels it names.
/// Throws ParseError for malformed input and ValidationError for invariant
/// violations (duplicate ids, empty test specs, corpus overlap).
BenchmarkManifest load_manifest(const std::filesystem::path& path);

/// Parses a manifest from an in-memory document. Kernel sources are read
/// relative to `base_dir`.
BenchmarkManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);

/// Writes `manifest.json`-style document to `path` and each task's reference
/// code to its `code_path` beside it.
void save_manifest(const BenchmarkManifest& manifest, const std::filesystem::path& path);

nlohmann::json manifest_to_json(const BenchmarkManifest& manifest);

/// Task count per difficulty label.
std::map<int, std::size_t> difficulty_counts(const BenchmarkManifest& manifest);

/// Entry ids of a corpus document, without loading the code bodies.
std::vector<std::string> read_corpus_ids(const std::filesystem::path& corpus_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace kagent
