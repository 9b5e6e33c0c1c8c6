#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace corrlab {

struct GradCheckEntry {
    std::string name;
    double tolerance = 0.0;
    double max_err = 0.0;
    int seeds = 0;
    bool pass = false;
};

/// Finite-difference checks for every differentiable block plus the hybrid
/// loss (eight-point SVD path included) and a parameter-subsampled end-to-end
/// network check. Inputs landing within the kink margin of a ReLU zero or a
/// max-pool tie are resampled.
std::vector<GradCheckEntry> run_gradient_suite(int n_seeds, std::uint64_t base_seed);

bool gradient_suite_passed(const std::vector<GradCheckEntry>& entries);

}  // namespace corrlab
