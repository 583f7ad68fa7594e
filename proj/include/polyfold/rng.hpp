#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace polyfold {

// FNV-1a, used to derive per-item seeds from string ids so parallel and
// serial runs draw identical noise streams.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic RNG. Gaussian and categorical draws are implemented here
// rather than via std:: distributions, whose output is
// implementation-defined and would break byte-identical reruns across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { // [0, 1)
        return double(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double gaussian() { // Box-Muller, mean 0 sd 1
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // index into `probs` (need not be normalized)
    int categorical(const std::vector<double>& probs) {
        double total = 0.0;
        for (double p : probs) total += p;
        double x = uniform() * total;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            x -= probs[i];
            if (x < 0.0) return int(i);
        }
        return int(probs.size()) - 1;
    }

    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace polyfold
