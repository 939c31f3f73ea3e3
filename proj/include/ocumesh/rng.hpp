#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ocumesh {

/// Counter-based generator: the n-th draw of stream (seed, key) is a pure function of
/// (seed, key, n), so results do not depend on platform, thread count or draw order of
/// other streams. Normals use Box-Muller with one output per two uniforms.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t key, std::uint64_t substream = 0)
        : key_(mix(mix(seed) ^ mix(key + 0x632be59bd9b4e019ULL) ^ mix(substream + 0x8cb92ba72f3d8dd7ULL))) {}

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double sigma = 1.0) {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    std::uint64_t draws() const { return counter_; }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace ocumesh
