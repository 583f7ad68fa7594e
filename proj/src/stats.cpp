#include "polyfold/stats.hpp"

#include <algorithm>
#include <cmath>

#include "polyfold/errors.hpp"

namespace polyfold {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Acklam's rational approximation, |rel err| < 1.15e-9.
double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) fail("DomainError", "normal_quantile needs p in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    return x;
}

namespace {

inline double poly(const double* coef, int n, double x) {
    // coef[0] + coef[1]*x + ... (AS R94 ordering)
    double v = coef[0];
    double xp = 1.0;
    for (int i = 1; i < n; ++i) {
        xp *= x;
        v += coef[i] * xp;
    }
    return v;
}

} // namespace

TestResult shapiro_wilk(const std::vector<double>& sample) {
    const std::size_t n = sample.size();
    if (n < 3) fail("SampleTooSmall", "shapiro_wilk needs n >= 3");
    if (n > 5000) fail("SampleTooLarge", "shapiro_wilk supports n <= 5000");

    std::vector<double> x = sample;
    std::sort(x.begin(), x.end());
    if (x.front() == x.back()) fail("DegenerateSample", "all values identical; W undefined");

    // expected normal order statistics (Blom) and their normalization
    std::vector<double> m(n);
    double ssq_m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = normal_quantile((double(i + 1) - 0.375) / (double(n) + 0.25));
        ssq_m += m[i] * m[i];
    }

    // Royston-adjusted weights, antisymmetric with a[n-1] > 0.
    std::vector<double> a(n, 0.0);
    const double u = 1.0 / std::sqrt(double(n));
    static const double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
    static const double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    const double rsn = 1.0 / std::sqrt(ssq_m);

    if (n == 3) {
        a[2] = std::sqrt(0.5);
        a[0] = -a[2];
    } else {
        const double an = m[n - 1] * rsn + poly(c1, 6, u);
        double phi;
        std::size_t lo;
        if (n > 5) {
            const double an1 = m[n - 2] * rsn + poly(c2, 6, u);
            lo = 2;
            phi = (ssq_m - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
                  / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            a[n - 2] = an1;
            a[1] = -an1;
        } else {
            lo = 1;
            phi = (ssq_m - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
        }
        a[n - 1] = an;
        a[0] = -an;
        const double rphi = 1.0 / std::sqrt(phi);
        for (std::size_t i = lo; i < n - lo; ++i) a[i] = m[i] * rphi;
    }

    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= double(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += a[i] * x[i];
        den += (x[i] - mean) * (x[i] - mean);
    }
    double w = num * num / den;
    if (w > 1.0) w = 1.0;

    TestResult out;
    out.statistic = w;
    out.n = n;
    out.exact = false;

    if (n == 3) {
        const double pi6 = 1.90985931710274; // 6/pi
        const double stqr = 1.04719755119660; // asin(sqrt(3/4))
        double p = pi6 * (std::asin(std::sqrt(w)) - stqr);
        out.p_value = std::clamp(p, 0.0, 1.0);
        return out;
    }

    double z, mu, sigma;
    if (n <= 11) {
        const double nd = double(n);
        const double gamma = -2.273 + 0.459 * nd;
        mu = 0.5440 - 0.39978 * nd + 0.025054 * nd * nd - 0.0006714 * nd * nd * nd;
        sigma = std::exp(1.3822 - 0.77857 * nd + 0.062767 * nd * nd - 0.0020322 * nd * nd * nd);
        const double arg = gamma - std::log(1.0 - w);
        if (arg <= 0.0) {
            out.p_value = 1e-99;
            return out;
        }
        z = (-std::log(arg) - mu) / sigma;
    } else {
        const double ln = std::log(double(n));
        mu = -1.5861 - 0.31082 * ln - 0.083751 * ln * ln + 0.0038915 * ln * ln * ln;
        sigma = std::exp(-0.4803 - 0.082676 * ln + 0.0030302 * ln * ln);
        z = (std::log(1.0 - w) - mu) / sigma;
    }
    out.p_value = 1.0 - normal_cdf(z); // upper tail: small W -> large z -> small p
    return out;
}

TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                WilcoxonMode mode) {
    if (a.size() != b.size())
        fail("LengthMismatch", "paired samples of sizes " + std::to_string(a.size()) + " and "
                                   + std::to_string(b.size()));

    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i] - b[i];
        if (v != 0.0) d.push_back(v);
    }
    if (d.empty()) fail("AllZeroDifferences", "every paired difference is zero");
    const std::size_t n = d.size();
    if (n < 5) fail("SampleTooSmall", "need >= 5 nonzero differences, got " + std::to_string(n));

    // average ranks of |d|
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::fabs(d[i]) < std::fabs(d[j]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::fabs(d[order[j + 1]]) == std::fabs(d[order[i]])) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }

    double w_plus = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (d[i] > 0.0) w_plus += rank[i];
    }
    const double w_minus = total - w_plus;
    const double w_small = std::min(w_plus, w_minus);

    TestResult out;
    out.statistic = w_small;
    out.n = n;

    const bool exact = mode == WilcoxonMode::Exact || (mode == WilcoxonMode::Auto && n <= 12);
    if (exact) {
        if (n > 20) fail("SampleTooLarge", "exact enumeration limited to n <= 20");
        // full enumeration of the 2^n sign assignments over the observed ranks
        const std::size_t count = std::size_t(1) << n;
        std::size_t hits = 0;
        const double eps = 1e-9;
        for (std::size_t mask = 0; mask < count; ++mask) {
            double wp = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (std::size_t(1) << i)) wp += rank[i];
            if (wp <= w_small + eps || wp >= total - w_small - eps) ++hits;
        }
        out.p_value = double(hits) / double(count);
        out.exact = true;
        return out;
    }

    // Moments of W+ conditional on the observed (tie-averaged) ranks:
    // each rank enters with an independent fair sign.
    double s2 = 0.0, s4 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s2 += rank[i] * rank[i];
        s4 += rank[i] * rank[i] * rank[i] * rank[i];
    }
    const double mean = total / 2.0;
    const double var = s2 / 4.0;
    const double kappa4 = -s4 / 8.0;
    const double gamma2 = kappa4 / (var * var);

    const double z = (w_small + 0.5 - mean) / std::sqrt(var); // continuity-corrected lower tail
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    double lower = normal_cdf(z) - gamma2 / 24.0 * (z * z * z - 3.0 * z) * pdf;
    lower = std::clamp(lower, 0.0, 1.0);
    // two extreme sign assignments always reach the observed tails, so the
    // two-sided p can never be below 2 / 2^n
    out.p_value = std::clamp(2.0 * lower, std::pow(2.0, 1.0 - double(n)), 1.0);
    out.exact = false;
    return out;
}

} // namespace polyfold
