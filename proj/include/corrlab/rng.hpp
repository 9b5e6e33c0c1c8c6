#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace corrlab {

/// Seeded random stream with self-contained distribution mappings.
/// std::mt19937_64 output is pinned by the standard; the distribution code
/// here avoids the implementation-defined std:: distributions so that a seed
/// reproduces bit-identical values on any toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (pair cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Uniformly distributed unit 3-vector.
    std::array<double, 3> unit_vector3();

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace corrlab
