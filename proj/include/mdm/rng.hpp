// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mdm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic RNG wrapper. std::mt19937_64 is bit-exact across platforms;
// the standard distributions are not, so sampling helpers are hand-rolled.
// Identical seed => bit-identical draw sequence. stream() derives an
// independent child generator, used so parallel trials stay reproducible
// regardless of scheduling.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return eng_(); }

    // in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // in (0, 1)
    double uniform_open() {
        double u;
        do { u = uniform(); } while (u == 0.0);
        return u;
    }

    // in [lo, hi)
    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // in [0, n), unbiased
    int uniform_below(int n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do { x = next_u64(); } while (x >= limit);
        return static_cast<int>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_below(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Sample an index from an unnormalized non-negative weight vector.
    int categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double x = uniform() * total;
        for (size_t i = 0; i < weights.size(); ++i) {
            x -= weights[i];
            if (x < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    // Independent substream; children with distinct salts are decorrelated.
    Rng stream(std::uint64_t salt) const {
        return Rng(splitmix64(seed_ ^ (0xA076'1D64'78BD'642FULL + salt * 0xE703'7ED1'A0B4'28DBULL)));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mdm
