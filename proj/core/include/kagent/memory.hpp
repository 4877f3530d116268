#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kagent {

/// One failed candidate and the trace it produced.
struct ReflectionRound {
    std::string code;
    std::string error_trace;

    bool operator==(const ReflectionRound&) const = default;
};

struct PerfEntry {
    std::string code;
    double speedup = 0.0;
    /// Every test passed. Only correct entries may feed the optimizer.
    bool functionally_correct = true;

    bool operator==(const PerfEntry&) const = default;
};

/// Performance history kept in ascending speedup order, best last. Entries
/// with equal speedup keep insertion order.
class PerfHistory {
public:
    PerfHistory() = default;
    explicit PerfHistory(std::vector<PerfEntry> entries);

    void insert(PerfEntry entry);

    std::span<const PerfEntry> entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }
    const PerfEntry& best() const { return entries_.back(); }

    bool operator==(const PerfHistory&) const = default;

private:
    std::vector<PerfEntry> entries_;
};

struct AgentMemory {
    /// Failures under the current strategy, oldest first.
    std::vector<ReflectionRound> reflections;
    PerfHistory perf_history;
    std::optional<PerfEntry> best_correct;

    bool operator==(const AgentMemory&) const = default;
};

}  // namespace kagent
