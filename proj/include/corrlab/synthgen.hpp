#pragma once

#include "corrlab/correspondence.hpp"
#include "corrlab/geometry.hpp"

#include <string>
#include <vector>

namespace corrlab {

struct SceneConfig {
    int n_correspondences = 512;
    double outlier_ratio = 0.7;
    double pixel_noise_std = 1e-3;  // normalized units
    double depth_min = 4.0;
    double depth_max = 10.0;
    double rotation_magnitude_deg = 30.0;
    double fov_limit = 1.5;  // |coordinate| bound of the visible window
    std::uint64_t seed = 0;

    void validate() const;
};

/// One synthetic two-view scene with known ground truth.
struct ScenePair {
    CorrespondenceSet correspondences;
    std::vector<int> labels;  // 1 = inlier
    CameraPose pose_gt;
    EssentialMatrix essential_gt;
};

/// Samples a pose of the configured rotation magnitude with a random unit
/// translation, projects random in-frustum 3-D points into both views, adds
/// isotropic noise to inliers and replaces the outlier fraction with uniform
/// correspondences in the visible window. Deterministic given config.seed.
ScenePair generate_scene(const SceneConfig& config);

/// Label 1 iff the symmetric epipolar residual under e_gt is < threshold.
std::vector<int> derive_labels(const CorrespondenceSet& s, const EssentialMatrix& e_gt,
                               double threshold);

/// Plain-text dataset container; round-trips 64-bit values exactly.
void write_dataset(const std::vector<ScenePair>& scenes, const std::string& path);
std::vector<ScenePair> read_dataset(const std::string& path);

}  // namespace corrlab
