#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>

namespace mvjl {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
    return mix64(h ^ (v + kGolden + (h << 6) + (h >> 2)));
}

}  // namespace detail

/// Counter-based random stream. Output i is a pure function of (key, i), and
/// child streams have statistically unrelated keys, so draws are reproducible
/// no matter how work is scheduled across threads.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) noexcept
        : key_(detail::mix64(seed + detail::kGolden)) {}

    /// Independent stream addressed by up to three tags (particle, step, purpose, ...).
    RandomStream child(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const noexcept {
        std::uint64_t k = detail::hash_combine(key_, a);
        k = detail::hash_combine(k, b);
        k = detail::hash_combine(k, c);
        return RandomStream(k, 0);
    }

    std::uint64_t next_u64() noexcept {
        return detail::mix64(key_ + (counter_++) * detail::kGolden);
    }

    /// Uniform on [0, 1).
    double uniform01() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the partner draw is cached.
    double gaussian() noexcept {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    void gaussian_fill(std::span<double> out) noexcept {
        for (double& v : out) v = gaussian();
    }

    /// Poisson count by Knuth's product method; large means are split so the
    /// exp() threshold never underflows.
    std::uint64_t poisson(double mean) {
        if (!(mean >= 0.0)) throw std::invalid_argument("poisson: mean must be nonnegative");
        std::uint64_t total = 0;
        while (mean > 30.0) {
            total += poisson_small(30.0);
            mean -= 30.0;
        }
        return total + poisson_small(mean);
    }

private:
    RandomStream(std::uint64_t key, std::uint64_t counter) noexcept : key_(key), counter_(counter) {}

    std::uint64_t poisson_small(double mean) noexcept {
        if (mean <= 0.0) return 0;
        const double threshold = std::exp(-mean);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform01();
        } while (p > threshold);
        return k - 1;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace mvjl
