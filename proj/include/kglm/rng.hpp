#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace kglm {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Order-sensitive seed derivation. Streams derived from distinct
// (stream, epoch, index) tuples are independent of each other and of
// whatever was sampled before, so corpora are reproducible regardless of
// generation order or worker count.
inline uint64_t derive_seed(uint64_t global, uint64_t stream, uint64_t epoch = 0,
                            uint64_t index = 0) {
    uint64_t s = splitmix64(global);
    s = splitmix64(s ^ (stream + 0x9e3779b97f4a7c15ull));
    s = splitmix64(s ^ (epoch + 0xd1b54a32d192ed03ull));
    s = splitmix64(s ^ (index + 0x2545f4914f6cdd1dull));
    return s;
}

// Thin wrapper over mt19937_64 with hand-rolled draw helpers. The standard
// engine has a pinned sequence, but the standard *distributions* do not, so
// every distribution used here is written out explicitly.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t u64() { return engine_(); }

    // Unbiased integer in [0, n). n must be >= 1.
    uint64_t below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) {
        if (p <= 0.0) return false;
        if (p >= 1.0) return true;
        return uniform01() < p;
    }

    // Standard normal via Box-Muller (no cached spare; one draw per call
    // keeps the stream position easy to reason about).
    double normal() {
        double u = 1.0 - uniform01();
        double v = uniform01();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
    }

    template <typename V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace kglm
