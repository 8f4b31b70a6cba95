// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace vivit {

// Counter-based generator: the i-th draw is a pure function of (seed, counter),
// so streams can be split per sample and replayed independently of iteration
// order. All stochastic machinery in this project draws through RngState.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 0x632be59bd9b4e019ull);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return x;
    }

    std::uint64_t next_u64() { return mix(seed, counter++); }

    // 53-bit uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; two uniforms per draw, no cached spare (keeps the stream a
    // pure function of the counter).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // In [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream for one sample; a pure function of (seed, index).
    RngState substream(std::uint64_t sample_index) const {
        return RngState{mix(seed, mix(0x5851f42d4c957f2dull, sample_index)), 0};
    }
};

}  // namespace vivit
