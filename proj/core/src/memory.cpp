#include "kagent/memory.hpp"

#include <algorithm>

namespace kagent {

PerfHistory::PerfHistory(std::vector<PerfEntry> entries) {
    for (auto& entry : entries) {
        insert(std::move(entry));
    }
}

void PerfHistory::insert(PerfEntry entry) {
    const auto pos = std::upper_bound(
        entries_.begin(), entries_.end(), entry.speedup,
        [](double value, const PerfEntry& e) { return value < e.speedup; });
    entries_.insert(pos, std::move(entry));
}

}  // namespace kagent
