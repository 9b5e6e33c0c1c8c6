#include "corrlab/rng.hpp"

#include <cmath>

namespace corrlab {

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller; u clamped away from 0 so log stays finite.
    double u = uniform();
    if (u < 0x1.0p-60) u = 0x1.0p-60;
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * M_PI * v;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

std::array<double, 3> Rng::unit_vector3() {
    while (true) {
        const double x = uniform(-1.0, 1.0);
        const double y = uniform(-1.0, 1.0);
        const double z = uniform(-1.0, 1.0);
        const double n2 = x * x + y * y + z * z;
        if (n2 > 1e-6 && n2 <= 1.0) {
            const double inv = 1.0 / std::sqrt(n2);
            return {x * inv, y * inv, z * inv};
        }
    }
}

}  // namespace corrlab
