#pragma once

// Deterministic, platform-independent randomness. The generator is
// xoshiro256++ seeded through splitmix64; both are fixed for the life of
// the project so that a seed pins every stream bit-for-bit. No global
// state: an Rng is an explicit value threaded through calls.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pattlite/common.hpp"

namespace pattlite {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }

    // xoshiro256++ step.
    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl64(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 significant bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        if (!(lo < hi)) throw ConfigError("Rng::uniform: require lo < hi");
        return lo + (hi - lo) * next_double();
    }

    // Box-Muller; consumes exactly two uniforms per draw so interleaved
    // streams stay reproducible.
    double normal(double mean, double std) {
        if (std < 0.0) throw ConfigError("Rng::normal: require std >= 0");
        if (std == 0.0) return mean;
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
        return mean + std * z;
    }

    // Normal resampled until within two standard deviations of the mean.
    double truncated_normal(double mean, double std) {
        if (std == 0.0) return mean;
        for (;;) {
            const double z = normal(0.0, 1.0);
            if (std::fabs(z) <= 2.0) return mean + std * z;
        }
    }

    // i in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Derive an independent child stream. A parent seed plus a tag path
    // identifies the child, so one CLI --seed pins a whole experiment.
    Rng split(std::uint64_t tag) const {
        std::uint64_t sm = seed_ ^ (0xA0761D6478BD642FULL + tag * 0xE7037ED1A0B428DBULL);
        return Rng(detail::splitmix64(sm));
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

// Seeded Fisher-Yates shuffle of index vectors (batching, fold assembly).
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
    if (items.empty()) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(items[i], items[j]);
    }
}

}  // namespace pattlite
