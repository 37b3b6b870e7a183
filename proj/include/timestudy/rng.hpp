// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ts {

// mt19937 raw output is pinned by the standard; the distribution mappings here
// are hand-rolled because std::uniform_*_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return engine_(); }

    // Uniform in [0, 1).
    double next_real() { return static_cast<double>(next_u32()) * 0x1p-32; }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        std::uint64_t r = (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
        return lo + static_cast<std::int64_t>(r % span);
    }

    bool next_bernoulli(double p) { return next_real() < p; }

    // Box-Muller; one draw per call, cached pair discarded for simplicity.
    double next_normal() {
        double u1 = next_real();
        double u2 = next_real();
        while (u1 <= 1e-12) u1 = next_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates over [0, n); returns the permutation.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. per clip or per epoch).
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = (static_cast<std::uint64_t>(next_u32()) << 32) ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull);
        return Rng(s);
    }

private:
    std::mt19937 engine_;
};

}  // namespace ts
