#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace coordx {

/// Counter-based generator: the i-th draw is a SplitMix64 finalisation of
/// (key + i * golden). Sequences depend only on the seed, never on the
/// platform's <random> implementation, so they can be reproduced bit for
/// bit in any language.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased (rejection on the top range).
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent stream derived from this generator's key; does not
    /// advance the parent.
    Rng split(std::uint64_t stream) const {
        Rng child;
        child.key_ = mix(key_ ^ mix(stream + 0x3c6ef372fe94f82bull));
        return child;
    }

    std::uint64_t draws() const { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace coordx
