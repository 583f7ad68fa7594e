#pragma once

#include <string>
#include <utility>
#include <vector>

namespace polyfold {

enum class ColumnTag { Match, Mismatch, GapA, GapB };

struct Alignment {
    std::string aligned_a; // gapped, '-' for gaps
    std::string aligned_b;
    int score = 0;
    std::vector<ColumnTag> columns;

    std::size_t size() const { return columns.size(); }
};

struct ResidueMap {
    std::vector<std::pair<int, int>> pairs; // (index_a, index_b), strictly increasing
};

// Global alignment, match +1 / mismatch -1, gap open -2 with -1 per
// extension. 'X' mismatches everything, including 'X'. Traceback is
// deterministic: diagonal, then gap in b, then gap in a.
Alignment align_pair(const std::string& a, const std::string& b);

// Matches over min(len a, len b).
double identity(const Alignment& al);

ResidueMap residue_map(const Alignment& al);

} // namespace polyfold
