#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace kagent {

struct KernelTask;

struct CorpusEntry {
    std::string id;
    std::string code;
    std::string instruction;

    bool operator==(const CorpusEntry&) const = default;
};

/// Token -> occurrence count. Ordered so iteration is deterministic.
using TokenMultiset = std::map<std::string, std::size_t>;

/// Lexes Python/Triton-flavoured source into identifiers, keywords, numbers
/// and operators. Comments and string literals are dropped and identifiers
/// are lowercased. Bytes that start no known token become one-char tokens.
TokenMultiset tokenize_code(std::string_view code);

/// Weighted Jaccard: sum(min counts) / sum(max counts). Two empty multisets
/// score 1.0.
double similarity(const TokenMultiset& a, const TokenMultiset& b);

/// Immutable after construction; safe to query from many threads.
class Corpus {
public:
    Corpus() = default;
    /// Throws ValidationError on duplicate ids or empty code.
    explicit Corpus(std::vector<CorpusEntry> entries);

    const std::vector<CorpusEntry>& entries() const noexcept { return entries_; }
    const TokenMultiset& tokens(std::size_t index) const { return tokens_.at(index); }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    std::vector<CorpusEntry> entries_;
    std::vector<TokenMultiset> tokens_;
};

/// Reads a corpus document: {"entries": [{"id", "code_path", "instruction"?}]}
/// with code paths relative to the document.
Corpus load_corpus(const std::filesystem::path& path);

struct RetrievalHit {
    CorpusEntry entry;
    double score = 0.0;
};

/// Pluggable scorer, e.g. backed by an embedding service. Must return values
/// in [0, 1].
using SimilarityScorer =
    std::function<double(std::string_view query_code, const CorpusEntry& entry)>;

/// Highest-similarity entry outside `exclude`. Ties go to the
/// lexicographically smallest id. Empty result when nothing is eligible.
std::optional<RetrievalHit> retrieve_top1(std::string_view query_code, const Corpus& corpus,
                                          const std::set<std::string>& exclude = {});

std::optional<RetrievalHit> retrieve_top1(std::string_view query_code, const Corpus& corpus,
                                          const std::set<std::string>& exclude,
                                          const SimilarityScorer& scorer);

/// The text used to query the corpus for a task: its reference code, or the
/// instruction when no code is available (logged as degraded).
std::string retrieval_query(const KernelTask& task);

}  // namespace kagent
