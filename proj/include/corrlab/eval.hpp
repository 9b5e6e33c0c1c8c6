#pragma once

#include "corrlab/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrlab {

struct ClassificationReport {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    bool no_positive_labels = false;
};

/// Standard confusion-matrix metrics; P = 0 with no positive predictions,
/// R = 0 (flagged) with no positive labels.
ClassificationReport prf(const std::vector<int>& predictions, const std::vector<int>& labels);

struct PoseErrorSet {
    std::vector<std::pair<double, double>> errors;  // (rot_deg, trans_deg) per scene

    void add(double rot_deg, double trans_deg);
    /// max(rot, trans) per scene.
    std::vector<double> combined() const;
};

/// Mean of accuracy(tau) over tau in {5, 10, ..., t_deg} where accuracy is the
/// fraction of scenes with combined error <= tau.
double pose_map(const PoseErrorSet& errors, double t_deg);

/// Normalized area under the cumulative accuracy curve over [0, t_deg],
/// trapezoid rule at 1 degree resolution.
double pose_auc(const PoseErrorSet& errors, double t_deg);

struct RansacResult {
    std::vector<int> labels;
    EssentialMatrix essential;
    int consensus_size = 0;
};

/// Classic hypothesize-and-verify with the 8-point minimal solver and the
/// symmetric epipolar residual. Deterministic under `seed`. Throws when no
/// hypothesis reaches 8 inliers.
RansacResult ransac_baseline(const CorrespondenceSet& s, int iterations, double inlier_threshold,
                             std::uint64_t seed);

/// One row of the delimiter-separated evaluation report.
struct SceneEvalRow {
    std::int64_t scene_id = 0;
    std::string method;
    ClassificationReport report;
    double rot_err_deg = 0.0;
    double trans_err_deg = 0.0;
    bool pose_valid = false;
};

/// Per-scene rows, then an aggregate footer with P/R/F means and
/// mAP/AUC at 5 and 20 degrees per method.
void write_report_csv(const std::string& path, const std::vector<SceneEvalRow>& rows);

}  // namespace corrlab
