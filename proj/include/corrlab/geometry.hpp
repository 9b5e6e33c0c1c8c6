#pragma once

#include "corrlab/autodiff.hpp"
#include "corrlab/correspondence.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace corrlab {

/// Relative pose of view 2 with respect to view 1: X2 = R X1 + t.
/// Translation scale is unobservable, so ||t|| = 1.
struct CameraPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d(0, 0, 1);

    /// Throws when R is not orthonormal with det +1 (1e-10) or ||t|| != 1.
    void validate() const;
};

/// 3x3 rank-2 matrix with unit Frobenius norm relating the two views:
/// p2^T E p1 = 0 for true correspondences in normalized coordinates.
struct EssentialMatrix {
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
};

Eigen::Matrix3d skew(const Eigen::Vector3d& t);

/// E = [t]x R, normalized to unit Frobenius norm. Rank 2 by construction.
EssentialMatrix compose_essential(const CameraPose& pose);

/// Closest rank-2 matrix in Frobenius norm: smallest singular value zeroed,
/// the other two kept. Idempotent.
Eigen::Matrix3d rank2_project(const Eigen::Matrix3d& a);

/// Symmetric epipolar residual (p2^T E p1)^2 normalized by the epipolar line
/// gradients. The denominator is floored at 1e-15; `degenerate` (optional)
/// reports when the floor engaged (point at both epipoles).
double epipolar_residual(const Eigen::Matrix3d& e, const Correspondence& c,
                         bool* degenerate = nullptr);

/// Residuals for every correspondence as an N x 1 matrix.
Matrix epipolar_residuals(const Eigen::Matrix3d& e, const CorrespondenceSet& s);

/// Autodiff variant: residual vector node differentiable in the 3x3 E node.
ad::NodePtr epipolar_residual_node(ad::NodePtr e, const CorrespondenceSet& s);

/// Weighted eight-point solve: the unit-norm minimizer of
/// sum_i w_i (p2_i^T E p1_i)^2 via the smallest eigenvector of the weighted
/// normal matrix (Hartley-normalized coordinates), then rank-2 projection and
/// unit-Frobenius normalization.
///
/// Throws std::invalid_argument when fewer than 8 weights exceed 1e-8 and
/// std::runtime_error on a rank-deficient (degenerate) configuration.
EssentialMatrix weighted_eight_point(const CorrespondenceSet& s, const std::vector<double>& w);

/// Differentiable-in-w version producing a 3x3 graph node. The backward pass
/// uses the closed-form eigenvector perturbation of the 9x9 normal matrix and
/// a singular-value-gap-stable rule for the rank-2 projection; it throws when
/// the relevant gaps collapse (tie detection).
ad::NodePtr weighted_eight_point_node(const CorrespondenceSet& s, ad::NodePtr w);

/// Angle of the relative rotation between two rotation matrices, in degrees.
double rotation_angle_deg(const Eigen::Matrix3d& r_a, const Eigen::Matrix3d& r_b);

/// Sign-invariant angle between translation directions, in degrees (<= 90).
double translation_angle_deg(const Eigen::Vector3d& t_a, const Eigen::Vector3d& t_b);

/// Decomposes E into the four (R, t) candidates and picks the one passing the
/// cheirality test on the up-to-20 highest-weighted correspondences.
CameraPose decompose_essential(const EssentialMatrix& e, const CorrespondenceSet& s,
                               const std::vector<double>& weights);

/// (rotation error deg, translation error deg) of the pose recovered from
/// e_est against the ground truth. Translation error is sign-invariant.
std::pair<double, double> pose_error(const EssentialMatrix& e_est, const CameraPose& pose_gt,
                                     const CorrespondenceSet& s,
                                     const std::vector<double>& weights);

}  // namespace corrlab
