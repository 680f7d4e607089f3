#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace damkit {

/// Counter-based 64-bit generator: draw k of stream `seed` is mix(seed, k).
/// Any draw can be recomputed without replaying the ones before it.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0) noexcept
        : seed_(seed), counter_(counter) {}

    static constexpr std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) noexcept {
        // splitmix64 finalizer over a Weyl sequence keyed by the seed
        std::uint64_t z = seed * 0xD1B54A32D192ED03ULL + (counter + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept { return mix(seed_, counter_++); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return n == 0 ? 0 : static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent child stream, e.g. one per parameter tensor.
    CounterRng fork(std::uint64_t tag) const noexcept { return CounterRng(mix(seed_ ^ 0xA5A5A5A5ULL, tag)); }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Fisher-Yates shuffle driven by CounterRng.
template <class Range>
void shuffle(Range& r, CounterRng& rng) {
    using std::swap;
    const auto n = static_cast<std::uint64_t>(std::size(r));
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        swap(r[i - 1], r[j]);
    }
}

}  // namespace damkit
