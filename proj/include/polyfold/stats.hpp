#pragma once

#include <cstddef>
#include <vector>

namespace polyfold {

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    bool exact = false; // Wilcoxon: full enumeration rather than normal approx
};

double normal_cdf(double z);
double normal_quantile(double p); // inverse of normal_cdf

// Royston's approximation of the W statistic and its p-value, 3 <= n <= 5000.
TestResult shapiro_wilk(const std::vector<double>& sample);

enum class WilcoxonMode {
    Auto,   // exact for n <= 12, approximation beyond
    Exact,  // full 2^n enumeration (n <= 20 guarded)
    Approx, // Edgeworth-corrected normal approximation
};

// Two-sided signed-rank test on paired samples. Zero differences are
// dropped; ties get average ranks. Exact p enumerates all 2^n sign
// assignments; the approximation is a continuity-corrected normal with a
// fourth-cumulant (Edgeworth) term, which keeps it within ~5e-3 of exact
// already at n = 12. The statistic is min(W+, W-).
TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                WilcoxonMode mode = WilcoxonMode::Auto);

} // namespace polyfold
