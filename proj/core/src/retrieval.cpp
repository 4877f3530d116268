#include "kagent/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "kagent/errors.hpp"
#include "kagent/task.hpp"

namespace kagent {

namespace {

bool is_ident_start(unsigned char c) { return std::isalpha(c) || c == '_'; }
bool is_ident_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

bool is_string_prefix(std::string_view word) {
    if (word.empty() || word.size() > 2) {
        return false;
    }
    return std::all_of(word.begin(), word.end(), [](char c) {
        switch (c) {
            case 'r': case 'R': case 'b': case 'B': case 'f': case 'F': case 'u': case 'U':
                return true;
            default:
                return false;
        }
    });
}

// Longest operators first so greedy matching picks them.
constexpr std::array<std::string_view, 31> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", "**", "//", "==", "!=", "<=",
    ">=",  "+=",  "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "@=", "<<",
    ">>",  ":=",  "&&",  "||",  "::",  "++", "--", "<>", "~="};

// Returns the index one past the closing quote(s), or text.size() when the
// literal is unterminated.
std::size_t skip_string(std::string_view text, std::size_t pos) {
    const char quote = text[pos];
    const bool triple = pos + 2 < text.size() && text[pos + 1] == quote && text[pos + 2] == quote;
    if (triple) {
        const std::string closing(3, quote);
        std::size_t i = pos + 3;
        while (i < text.size()) {
            if (text[i] == '\\') {
                i += 2;
                continue;
            }
            if (text.compare(i, 3, closing) == 0) {
                return i + 3;
            }
            ++i;
        }
        return text.size();
    }
    std::size_t i = pos + 1;
    while (i < text.size()) {
        const char c = text[i];
        if (c == '\\') {
            i += 2;
            continue;
        }
        if (c == quote) {
            return i + 1;
        }
        if (c == '\n') {
            return i;
        }
        ++i;
    }
    return text.size();
}

std::size_t scan_number(std::string_view text, std::size_t pos) {
    std::size_t i = pos;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isalnum(c) || c == '_' || c == '.') {
            ++i;
        } else if ((c == '+' || c == '-') && i > pos &&
                   (text[i - 1] == 'e' || text[i - 1] == 'E') &&
                   !(text.size() > pos + 1 && (text[pos + 1] == 'x' || text[pos + 1] == 'X'))) {
            ++i;
        } else {
            break;
        }
    }
    return i;
}

}  // namespace

TokenMultiset tokenize_code(std::string_view code) {
    TokenMultiset tokens;
    std::size_t i = 0;
    while (i < code.size()) {
        const auto c = static_cast<unsigned char>(code[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (c == '#') {
            const auto eol = code.find('\n', i);
            i = eol == std::string_view::npos ? code.size() : eol;
            continue;
        }
        if (c == '"' || c == '\'') {
            i = skip_string(code, i);
            continue;
        }
        if (is_ident_start(c)) {
            std::size_t j = i;
            while (j < code.size() && is_ident_char(static_cast<unsigned char>(code[j]))) {
                ++j;
            }
            const auto word = code.substr(i, j - i);
            if (j < code.size() && (code[j] == '"' || code[j] == '\'') && is_string_prefix(word)) {
                i = skip_string(code, j);
                continue;
            }
            std::string lowered(word);
            std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            ++tokens[lowered];
            i = j;
            continue;
        }
        if (std::isdigit(c) ||
            (c == '.' && i + 1 < code.size() && std::isdigit(static_cast<unsigned char>(code[i + 1])))) {
            const std::size_t j = scan_number(code, i);
            ++tokens[std::string(code.substr(i, j - i))];
            i = j;
            continue;
        }
        bool matched = false;
        for (const auto op : kOperators) {
            if (code.compare(i, op.size(), op) == 0) {
                ++tokens[std::string(op)];
                i += op.size();
                matched = true;
                break;
            }
        }
        if (!matched) {
            ++tokens[std::string(1, code[i])];
            ++i;
        }
    }
    return tokens;
}

double similarity(const TokenMultiset& a, const TokenMultiset& b) {
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t shared = 0;
    std::size_t total = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    // Merge walk over two sorted maps.
    while (ia != a.end() || ib != b.end()) {
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            total += ia->second;
            ++ia;
        } else if (ia == a.end() || ib->first < ia->first) {
            total += ib->second;
            ++ib;
        } else {
            shared += std::min(ia->second, ib->second);
            total += std::max(ia->second, ib->second);
            ++ia;
            ++ib;
        }
    }
    return static_cast<double>(shared) / static_cast<double>(total);
}

Corpus::Corpus(std::vector<CorpusEntry> entries) : entries_(std::move(entries)) {
    std::set<std::string> ids;
    tokens_.reserve(entries_.size());
    for (const auto& entry : entries_) {
        if (entry.id.empty()) {
            throw ValidationError("", "corpus entry with empty id");
        }
        if (!ids.insert(entry.id).second) {
            throw ValidationError(entry.id, "duplicate corpus entry id");
        }
        if (entry.code.empty()) {
            throw ValidationError(entry.id, "corpus entry has empty code");
        }
        tokens_.push_back(tokenize_code(entry.code));
    }
}

Corpus load_corpus(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("corpus '" + path.string() + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw ParseError(e.what());
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc.at("entries").is_array()) {
        throw ParseError("corpus '" + path.string() + "' must have an 'entries' array");
    }
    const auto base = path.parent_path();
    std::vector<CorpusEntry> entries;
    for (const auto& node : doc.at("entries")) {
        if (!node.is_object() || !node.contains("id") || !node.contains("code_path")) {
            throw ParseError("corpus entry needs 'id' and 'code_path'");
        }
        CorpusEntry entry;
        try {
            entry.id = node.at("id").get<std::string>();
            entry.instruction = node.value("instruction", std::string{});
            const auto code_path = base / node.at("code_path").get<std::string>();
            entry.code = read_text_file(code_path);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("corpus entry has a mistyped field: ") + e.what());
        } catch (const Error& e) {
            throw ParseError(e.what());
        }
        entries.push_back(std::move(entry));
    }
    return Corpus(std::move(entries));
}

namespace {

template <typename ScoreAt>
std::optional<RetrievalHit> pick_best(const Corpus& corpus, const std::set<std::string>& exclude,
                                      ScoreAt score_at) {
    std::optional<std::size_t> best;
    double best_score = -1.0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& entry = corpus.entries()[i];
        if (exclude.count(entry.id) != 0) {
            continue;
        }
        const double score = score_at(i);
        if (!best || score > best_score ||
            (score == best_score && entry.id < corpus.entries()[*best].id)) {
            best = i;
            best_score = score;
        }
    }
    if (!best) {
        return std::nullopt;
    }
    return RetrievalHit{corpus.entries()[*best], best_score};
}

}  // namespace

std::optional<RetrievalHit> retrieve_top1(std::string_view query_code, const Corpus& corpus,
                                          const std::set<std::string>& exclude) {
    const auto query = tokenize_code(query_code);
    return pick_best(corpus, exclude,
                     [&](std::size_t i) { return similarity(query, corpus.tokens(i)); });
}

std::optional<RetrievalHit> retrieve_top1(std::string_view query_code, const Corpus& corpus,
                                          const std::set<std::string>& exclude,
                                          const SimilarityScorer& scorer) {
    return pick_best(corpus, exclude, [&](std::size_t i) {
        return std::clamp(scorer(query_code, corpus.entries()[i]), 0.0, 1.0);
    });
}

std::string retrieval_query(const KernelTask& task) {
    if (!task.reference_code.empty()) {
        return task.reference_code;
    }
    spdlog::warn("task '{}' has no reference code; retrieving by instruction text (degraded)",
                 task.id);
    return task.instruction;
}

}  // namespace kagent
