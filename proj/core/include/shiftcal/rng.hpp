#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace shiftcal {

// Deterministic random layer. Only the mt19937_64 engine itself is taken from
// the standard library (its output sequence is fully specified); all
// distributions are derived here so that a seed reproduces the same stream on
// any platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (cosine branch).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n), unbiased via rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    // Category index from unnormalized nonnegative mass vector.
    std::size_t categorical(const std::vector<double>& mass) {
        double total = 0.0;
        for (double m : mass) total += m;
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < mass.size(); ++k) {
            acc += mass[k];
            if (u < acc) return k;
        }
        return mass.empty() ? 0 : mass.size() - 1;
    }

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// splitmix64-style mixer used to derive independent stage seeds from one
// experiment seed. tag distinguishes the consumer (data, split, model, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace shiftcal
