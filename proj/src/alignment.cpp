#include "polyfold/alignment.hpp"

#include <algorithm>

#include "polyfold/errors.hpp"

namespace polyfold {

namespace {

constexpr int kMatch = 1;
constexpr int kMismatch = -1;
constexpr int kGapOpen = -2;   // first gap residue
constexpr int kGapExtend = -1; // each further residue
constexpr int kNegInf = -(1 << 28);

inline int sub_score(char a, char b) {
    if (a == 'X' || b == 'X') return kMismatch; // unknown never matches
    return a == b ? kMatch : kMismatch;
}

enum State : unsigned char { M = 0, GB = 1, GA = 2 }; // GB: gap in b, GA: gap in a

} // namespace

Alignment align_pair(const std::string& a, const std::string& b) {
    if (a.empty() || b.empty()) fail("EmptySequence", "align_pair requires nonempty sequences");
    const int la = int(a.size()), lb = int(b.size());
    const int w = lb + 1;
    auto at = [w](int i, int j) { return std::size_t(i) * std::size_t(w) + std::size_t(j); };

    std::vector<int> m(std::size_t(la + 1) * std::size_t(w), kNegInf);
    std::vector<int> gb(m.size(), kNegInf);
    std::vector<int> ga(m.size(), kNegInf);
    // predecessor state of each cell, per state
    std::vector<unsigned char> pm(m.size()), pgb(m.size()), pga(m.size());

    m[at(0, 0)] = 0;
    for (int i = 1; i <= la; ++i) {
        gb[at(i, 0)] = kGapOpen + (i - 1) * kGapExtend;
        pgb[at(i, 0)] = i == 1 ? M : GB;
    }
    for (int j = 1; j <= lb; ++j) {
        ga[at(0, j)] = kGapOpen + (j - 1) * kGapExtend;
        pga[at(0, j)] = j == 1 ? M : GA;
    }

    // preference order M > GB > GA makes the traceback deterministic
    auto pick = [](int vm, int vgb, int vga, int& best, unsigned char& state) {
        best = vm;
        state = M;
        if (vgb > best) { best = vgb; state = GB; }
        if (vga > best) { best = vga; state = GA; }
    };

    for (int i = 1; i <= la; ++i) {
        for (int j = 1; j <= lb; ++j) {
            int best;
            unsigned char st;
            pick(m[at(i - 1, j - 1)], gb[at(i - 1, j - 1)], ga[at(i - 1, j - 1)], best, st);
            m[at(i, j)] = best + sub_score(a[std::size_t(i - 1)], b[std::size_t(j - 1)]);
            pm[at(i, j)] = st;

            pick(m[at(i - 1, j)] + kGapOpen, gb[at(i - 1, j)] + kGapExtend,
                 ga[at(i - 1, j)] + kGapOpen, best, st);
            gb[at(i, j)] = best;
            pgb[at(i, j)] = st;

            pick(m[at(i, j - 1)] + kGapOpen, gb[at(i, j - 1)] + kGapOpen,
                 ga[at(i, j - 1)] + kGapExtend, best, st);
            ga[at(i, j)] = best;
            pga[at(i, j)] = st;
        }
    }

    Alignment out;
    unsigned char state;
    {
        int best;
        pick(m[at(la, lb)], gb[at(la, lb)], ga[at(la, lb)], best, state);
        out.score = best;
    }

    int i = la, j = lb;
    while (i > 0 || j > 0) {
        if (state == M) {
            const unsigned char prev = pm[at(i, j)];
            out.aligned_a.push_back(a[std::size_t(i - 1)]);
            out.aligned_b.push_back(b[std::size_t(j - 1)]);
            out.columns.push_back(sub_score(a[std::size_t(i - 1)], b[std::size_t(j - 1)]) == kMatch
                                      ? ColumnTag::Match
                                      : ColumnTag::Mismatch);
            --i;
            --j;
            state = prev;
        } else if (state == GB) {
            const unsigned char prev = pgb[at(i, j)];
            out.aligned_a.push_back(a[std::size_t(i - 1)]);
            out.aligned_b.push_back('-');
            out.columns.push_back(ColumnTag::GapB);
            --i;
            state = prev;
        } else {
            const unsigned char prev = pga[at(i, j)];
            out.aligned_a.push_back('-');
            out.aligned_b.push_back(b[std::size_t(j - 1)]);
            out.columns.push_back(ColumnTag::GapA);
            --j;
            state = prev;
        }
    }
    std::reverse(out.aligned_a.begin(), out.aligned_a.end());
    std::reverse(out.aligned_b.begin(), out.aligned_b.end());
    std::reverse(out.columns.begin(), out.columns.end());
    return out;
}

double identity(const Alignment& al) {
    std::size_t matches = 0, len_a = 0, len_b = 0;
    for (std::size_t i = 0; i < al.size(); ++i) {
        if (al.columns[i] == ColumnTag::Match) ++matches;
        if (al.aligned_a[i] != '-') ++len_a;
        if (al.aligned_b[i] != '-') ++len_b;
    }
    const std::size_t denom = std::min(len_a, len_b);
    return denom == 0 ? 0.0 : double(matches) / double(denom);
}

ResidueMap residue_map(const Alignment& al) {
    ResidueMap out;
    int ia = 0, ib = 0;
    for (std::size_t c = 0; c < al.size(); ++c) {
        switch (al.columns[c]) {
        case ColumnTag::Match:
        case ColumnTag::Mismatch:
            out.pairs.emplace_back(ia++, ib++);
            break;
        case ColumnTag::GapB:
            ++ia;
            break;
        case ColumnTag::GapA:
            ++ib;
            break;
        }
    }
    return out;
}

} // namespace polyfold
