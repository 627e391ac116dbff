#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace dupless {

// splitmix64 output scrambler (Steele, Lea, Flood 2014). Used everywhere a
// seeded stream is needed so results do not depend on the standard library's
// engine or distribution implementations.
inline constexpr std::uint64_t splitmix64_scramble(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

/// Derives an independent stream seed from a master seed and a stream index.
/// This is the splitmix64 sequence evaluated at position `stream`, so the
/// derived seed for a given index never depends on how many other streams
/// were derived or in which order.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64_scramble(master + (stream + 1) * 0x9E3779B97F4A7C15ull);
}

/// Deterministic 64-bit generator (splitmix64). Small state, identical output
/// on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        return splitmix64_scramble(state_);
    }

    /// Unbiased integer in [0, bound) via rejection sampling.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound) - 1;
        std::uint64_t v = next();
        while (v > limit) v = next();
        return v % bound;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller; caches the second deviate.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    /// Fisher-Yates shuffle, independent of std::shuffle's unspecified order.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace dupless
