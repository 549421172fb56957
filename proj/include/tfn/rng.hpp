#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tfn {

// Seeded RNG used everywhere determinism matters. mt19937_64 supplies the
// bit stream; the value mappings are implemented here so that generated
// cohorts and training runs are byte-stable across standard libraries
// (std::normal_distribution et al. are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (no state caching, one value per call)
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double sd) { return mean + sd * gaussian(); }

    // integer in [0, n)
    int randint(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates permutation of 0..n-1
    std::vector<int> permutation(int n) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = n - 1; i > 0; --i) {
            const int j = randint(i + 1);
            std::swap(idx[i], idx[j]);
        }
        return idx;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = randint(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Stable sub-seed derivation so each pipeline stage gets an independent
// stream from one top-level seed.
inline uint64_t derive_seed(uint64_t base, std::string_view tag) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (const char c : tag) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    uint64_t z = base ^ h;
    z += 0x9e3779b97f4a7c15ull;  // splitmix64 finalize
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace tfn
