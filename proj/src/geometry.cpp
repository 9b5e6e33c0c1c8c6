#include "corrlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace corrlab {

namespace {

constexpr double kWeightFloor = 1e-8;
constexpr double kDenominatorFloor = 1e-15;

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

Eigen::Matrix3d to_eigen3(const Matrix& m) {
    Eigen::Matrix3d e;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e(r, c) = m.at(r, c);
    return e;
}

Matrix from_eigen3(const Eigen::Matrix3d& e) {
    Matrix m(3, 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m.at(r, c) = e(r, c);
    return m;
}

/// Hartley conditioning transform: zero-mean, sqrt(2) average norm.
Eigen::Matrix3d hartley_transform(const CorrespondenceSet& s, bool second_view) {
    const int n = s.size();
    double cx = 0.0, cy = 0.0;
    for (const auto& p : s.points) {
        cx += second_view ? p.xp : p.x;
        cy += second_view ? p.yp : p.y;
    }
    cx /= n;
    cy /= n;
    double mean_norm = 0.0;
    for (const auto& p : s.points) {
        const double dx = (second_view ? p.xp : p.x) - cx;
        const double dy = (second_view ? p.yp : p.y) - cy;
        mean_norm += std::sqrt(dx * dx + dy * dy);
    }
    mean_norm /= n;
    const double scale = mean_norm > 1e-12 ? std::sqrt(2.0) / mean_norm : 1.0;
    Eigen::Matrix3d t;
    t << scale, 0, -scale * cx, 0, scale, -scale * cy, 0, 0, 1;
    return t;
}

struct EightPointSolution {
    Eigen::Matrix3d e_hat;                         // final estimate
    Eigen::Matrix3d t1, t2;                        // conditioning transforms
    Eigen::Matrix<double, Eigen::Dynamic, 9> a;    // coefficient rows (conditioned coords)
    Eigen::Matrix<double, 9, 9> eigvecs;           // of the weighted normal matrix
    Eigen::Matrix<double, 9, 1> eigvals;           // ascending
    Eigen::Matrix<double, 9, 1> e_vec;             // sign-canonical smallest eigenvector
    Eigen::Matrix3d e0;                            // denormalized, pre-projection
    Eigen::Matrix3d svd_u, svd_v;                  // SVD of e0
    Eigen::Vector3d svd_s;                         // descending
    double proj_norm = 0.0;                        // Frobenius norm after projection
    double w_max = 0.0;                            // weight normalizer (detached)
};

EightPointSolution solve_eight_point(const CorrespondenceSet& s, const std::vector<double>& w) {
    const int n = s.size();
    if (static_cast<int>(w.size()) != n) {
        throw std::invalid_argument("weighted_eight_point: weight count != correspondence count");
    }
    int effective = 0;
    double w_max = 0.0;
    for (double wi : w) {
        if (!(wi >= 0.0) || !std::isfinite(wi)) {
            throw std::invalid_argument("weighted_eight_point: weights must be finite and >= 0");
        }
        if (wi > kWeightFloor) ++effective;
        w_max = std::max(w_max, wi);
    }
    if (effective < 8) {
        throw std::invalid_argument("weighted_eight_point: fewer than 8 correspondences with "
                                    "weight > 1e-8 (" +
                                    std::to_string(effective) + ")");
    }

    EightPointSolution sol;
    sol.w_max = w_max;
    sol.t1 = hartley_transform(s, false);
    sol.t2 = hartley_transform(s, true);

    sol.a.resize(n, 9);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d p1 = sol.t1 * Eigen::Vector3d(s.points[i].x, s.points[i].y, 1.0);
        const Eigen::Vector3d p2 = sol.t2 * Eigen::Vector3d(s.points[i].xp, s.points[i].yp, 1.0);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) sol.a(i, 3 * r + c) = p2(r) * p1(c);
    }

    Eigen::Matrix<double, 9, 9> m = Eigen::Matrix<double, 9, 9>::Zero();
    for (int i = 0; i < n; ++i) {
        const double wi = w[i] / w_max;  // scale invariance; normalizer carries no gradient
        if (wi <= 0.0) continue;
        m.noalias() += wi * sol.a.row(i).transpose() * sol.a.row(i);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(m);
    if (eig.info() != Eigen::Success) {
        throw std::runtime_error("weighted_eight_point: eigendecomposition failed");
    }
    sol.eigvals = eig.eigenvalues();
    sol.eigvecs = eig.eigenvectors();
    const double lambda_max = std::max(sol.eigvals(8), 1e-30);
    if (sol.eigvals(1) < 1e-11 * lambda_max) {
        throw std::runtime_error(
            "weighted_eight_point: degenerate configuration (coefficient matrix rank < 8)");
    }

    sol.e_vec = sol.eigvecs.col(0);
    int max_idx = 0;
    sol.e_vec.cwiseAbs().maxCoeff(&max_idx);
    if (sol.e_vec(max_idx) < 0.0) sol.e_vec = -sol.e_vec;

    Eigen::Matrix3d e_cond;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e_cond(r, c) = sol.e_vec(3 * r + c);
    sol.e0 = sol.t2.transpose() * e_cond * sol.t1;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(sol.e0, Eigen::ComputeFullU | Eigen::ComputeFullV);
    sol.svd_u = svd.matrixU();
    sol.svd_v = svd.matrixV();
    sol.svd_s = svd.singularValues();

    const Eigen::Vector3d s_proj(sol.svd_s(0), sol.svd_s(1), 0.0);
    Eigen::Matrix3d e1 = sol.svd_u * s_proj.asDiagonal() * sol.svd_v.transpose();
    sol.proj_norm = e1.norm();
    if (sol.proj_norm < 1e-15) {
        throw std::runtime_error("weighted_eight_point: estimate collapsed to rank < 2");
    }
    sol.e_hat = e1 / sol.proj_norm;
    return sol;
}

/// Pullback of the upstream 3x3 gradient through projection + normalization +
/// denormalization + eigenvector extraction, down to the weight vector.
std::vector<double> eight_point_backward(const EightPointSolution& sol,
                                         const CorrespondenceSet& s,
                                         const Eigen::Matrix3d& g_out) {
    // Through unit-Frobenius normalization: e_hat = e1 / |e1|.
    const Eigen::Matrix3d g1 =
        (g_out - (g_out.cwiseProduct(sol.e_hat)).sum() * sol.e_hat) / sol.proj_norm;

    // Through the rank-2 projection e1 = e0 - s2 u2 v2^T (index 2 = smallest
    // singular value). Stable while s2 is separated from s0 and s1.
    const Eigen::Vector3d& sv = sol.svd_s;
    const double gap_tol = 1e-9 * std::max(sv(0), 1e-30);
    if (sv(0) - sv(2) < gap_tol || sv(1) - sv(2) < gap_tol) {
        throw std::runtime_error(
            "weighted_eight_point backward: singular-value tie at the rank-2 projection; "
            "gradient is ill-defined here");
    }
    const Eigen::Matrix3d gt = sol.svd_u.transpose() * g1 * sol.svd_v;
    Eigen::Matrix3d h;
    h(0, 0) = gt(0, 0);
    h(0, 1) = gt(0, 1);
    h(1, 0) = gt(1, 0);
    h(1, 1) = gt(1, 1);
    h(2, 2) = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double denom = sv(2) * sv(2) - sv(i) * sv(i);
        h(i, 2) = gt(i, 2) - sv(2) * (sv(2) * gt(i, 2) + sv(i) * gt(2, i)) / denom;
        h(2, i) = gt(2, i) - sv(2) * (sv(i) * gt(i, 2) + sv(2) * gt(2, i)) / denom;
    }
    const Eigen::Matrix3d g0 = sol.svd_u * h * sol.svd_v.transpose();

    // Through denormalization e0 = t2^T e_cond t1.
    const Eigen::Matrix3d g_cond = sol.t2 * g0 * sol.t1.transpose();
    Eigen::Matrix<double, 9, 1> g_e;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) g_e(3 * r + c) = g_cond(r, c);

    // Through the smallest eigenvector of M(w): dv = (lambda I - M)^+ dM v.
    const double lambda_span = std::max(sol.eigvals(8) - sol.eigvals(0), 1e-30);
    if (sol.eigvals(1) - sol.eigvals(0) < 1e-9 * lambda_span) {
        throw std::runtime_error(
            "weighted_eight_point backward: eigenvalue tie at the null-space extraction; "
            "gradient is ill-defined here");
    }
    Eigen::Matrix<double, 9, 1> pullback = Eigen::Matrix<double, 9, 1>::Zero();
    for (int j = 1; j < 9; ++j) {
        const double coeff = sol.eigvecs.col(j).dot(g_e) / (sol.eigvals(0) - sol.eigvals(j));
        pullback += coeff * sol.eigvecs.col(j);
    }

    const int n = s.size();
    std::vector<double> dw(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double ha = pullback.dot(sol.a.row(i));
        const double ea = sol.e_vec.dot(sol.a.row(i));
        dw[i] = ha * ea / sol.w_max;
    }
    return dw;
}

}  // namespace

void CameraPose::validate() const {
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-10) {
        throw std::invalid_argument("CameraPose: rotation is not orthonormal");
    }
    if (std::abs(rotation.determinant() - 1.0) > 1e-10) {
        throw std::invalid_argument("CameraPose: rotation determinant != +1");
    }
    if (std::abs(translation.norm() - 1.0) > 1e-10) {
        throw std::invalid_argument("CameraPose: translation is not unit length");
    }
}

Eigen::Matrix3d skew(const Eigen::Vector3d& t) {
    Eigen::Matrix3d m;
    m << 0, -t(2), t(1), t(2), 0, -t(0), -t(1), t(0), 0;
    return m;
}

EssentialMatrix compose_essential(const CameraPose& pose) {
    pose.validate();
    Eigen::Matrix3d e = skew(pose.translation) * pose.rotation;
    return EssentialMatrix{e / e.norm()};
}

Eigen::Matrix3d rank2_project(const Eigen::Matrix3d& a) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    s(2) = 0.0;
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

double epipolar_residual(const Eigen::Matrix3d& e, const Correspondence& c, bool* degenerate) {
    const Eigen::Vector3d p1(c.x, c.y, 1.0);
    const Eigen::Vector3d p2(c.xp, c.yp, 1.0);
    const Eigen::Vector3d ep = e * p1;
    const Eigen::Vector3d etp = e.transpose() * p2;
    const double num_root = p2.dot(ep);
    double den = ep(0) * ep(0) + ep(1) * ep(1) + etp(0) * etp(0) + etp(1) * etp(1);
    bool deg = den < kDenominatorFloor;
    if (deg) den = kDenominatorFloor;
    if (degenerate) *degenerate = deg;
    return num_root * num_root / den;
}

Matrix epipolar_residuals(const Eigen::Matrix3d& e, const CorrespondenceSet& s) {
    Matrix r(s.size(), 1);
    for (int i = 0; i < s.size(); ++i) r.at(i, 0) = epipolar_residual(e, s.points[i]);
    return r;
}

ad::NodePtr epipolar_residual_node(ad::NodePtr e, const CorrespondenceSet& s) {
    if (e->value.rows() != 3 || e->value.cols() != 3) {
        throw std::invalid_argument("epipolar_residual_node: E node must be 3x3");
    }
    const Eigen::Matrix3d em = to_eigen3(e->value);
    Matrix r = epipolar_residuals(em, s);
    auto set = std::make_shared<CorrespondenceSet>(s);
    return ad::make_node(
        std::move(r), {e},
        [e, set, em](ad::Node& self) {
            Eigen::Matrix3d de = Eigen::Matrix3d::Zero();
            for (int i = 0; i < set->size(); ++i) {
                const double g = self.grad.at(i, 0);
                if (g == 0.0) continue;
                const Correspondence& c = set->points[i];
                const Eigen::Vector3d p1(c.x, c.y, 1.0);
                const Eigen::Vector3d p2(c.xp, c.yp, 1.0);
                const Eigen::Vector3d ep = em * p1;
                const Eigen::Vector3d etp = em.transpose() * p2;
                const double num_root = p2.dot(ep);
                double den = ep(0) * ep(0) + ep(1) * ep(1) + etp(0) * etp(0) + etp(1) * etp(1);
                const bool capped = den < kDenominatorFloor;
                if (capped) den = kDenominatorFloor;
                // d(num)/dE
                de += g * (2.0 * num_root / den) * (p2 * p1.transpose());
                if (!capped) {
                    Eigen::Matrix3d dden = Eigen::Matrix3d::Zero();
                    dden.row(0) += 2.0 * ep(0) * p1.transpose();
                    dden.row(1) += 2.0 * ep(1) * p1.transpose();
                    dden.col(0) += 2.0 * etp(0) * p2;
                    dden.col(1) += 2.0 * etp(1) * p2;
                    de -= g * (num_root * num_root / (den * den)) * dden;
                }
            }
            ad::accumulate_grad(*e, from_eigen3(de));
        },
        "epipolar_residual_node");
}

EssentialMatrix weighted_eight_point(const CorrespondenceSet& s, const std::vector<double>& w) {
    return EssentialMatrix{solve_eight_point(s, w).e_hat};
}

ad::NodePtr weighted_eight_point_node(const CorrespondenceSet& s, ad::NodePtr w) {
    if (w->value.cols() != 1 || w->value.rows() != s.size()) {
        throw std::invalid_argument("weighted_eight_point_node: weights must be N x 1");
    }
    std::vector<double> wv(w->value.data(), w->value.data() + w->value.size());
    auto sol = std::make_shared<EightPointSolution>(solve_eight_point(s, wv));
    auto set = std::make_shared<CorrespondenceSet>(s);
    return ad::make_node(from_eigen3(sol->e_hat), {w},
                         [w, sol, set](ad::Node& self) {
                             const Eigen::Matrix3d g = to_eigen3(self.grad);
                             const std::vector<double> dw = eight_point_backward(*sol, *set, g);
                             Matrix dwm(static_cast<int>(dw.size()), 1);
                             for (std::size_t i = 0; i < dw.size(); ++i) dwm.at(static_cast<int>(i), 0) = dw[i];
                             ad::accumulate_grad(*w, dwm);
                         },
                         "weighted_eight_point_node");
}

double rotation_angle_deg(const Eigen::Matrix3d& r_a, const Eigen::Matrix3d& r_b) {
    const double cos_angle = clamp(((r_a.transpose() * r_b).trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(cos_angle) * 180.0 / M_PI;
}

double translation_angle_deg(const Eigen::Vector3d& t_a, const Eigen::Vector3d& t_b) {
    const double denom = t_a.norm() * t_b.norm();
    if (denom < 1e-15) throw std::invalid_argument("translation_angle_deg: zero-length vector");
    const double cos_angle = clamp(std::abs(t_a.dot(t_b)) / denom, 0.0, 1.0);
    return std::acos(cos_angle) * 180.0 / M_PI;
}

namespace {

/// Depth of the view-1 point along its ray for pose candidate (R, t), via the
/// cross-product form of x2 ~ R x1 z + t.
double triangulate_depth1(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                          const Correspondence& c) {
    const Eigen::Vector3d x1(c.x, c.y, 1.0);
    const Eigen::Vector3d x2(c.xp, c.yp, 1.0);
    const Eigen::Vector3d a = x2.cross(r * x1);
    const Eigen::Vector3d b = x2.cross(t);
    const double a2 = a.squaredNorm();
    if (a2 < 1e-18) return 0.0;
    return -a.dot(b) / a2;
}

}  // namespace

CameraPose decompose_essential(const EssentialMatrix& e, const CorrespondenceSet& s,
                               const std::vector<double>& weights) {
    if (s.size() == 0) throw std::invalid_argument("decompose_essential: empty correspondences");
    if (weights.size() != static_cast<std::size_t>(s.size())) {
        throw std::invalid_argument("decompose_essential: weight count mismatch");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(e.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    if (u.determinant() < 0) u.col(2) *= -1.0;
    if (v.determinant() < 0) v.col(2) *= -1.0;
    Eigen::Matrix3d wm;
    wm << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Eigen::Matrix3d r1 = u * wm * v.transpose();
    const Eigen::Matrix3d r2 = u * wm.transpose() * v.transpose();
    const Eigen::Vector3d t = u.col(2);

    // Cheirality: vote with the 20 highest-weighted correspondences.
    std::vector<int> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    const int voters = std::min<int>(20, s.size());
    std::partial_sort(idx.begin(), idx.begin() + voters, idx.end(),
                      [&](int a, int b) { return weights[a] > weights[b]; });

    const Eigen::Matrix3d rs[2] = {r1, r2};
    const double signs[2] = {1.0, -1.0};
    int best_count = -1;
    CameraPose best;
    for (const auto& r : rs) {
        for (double sign : signs) {
            const Eigen::Vector3d tc = sign * t;
            int count = 0;
            for (int k = 0; k < voters; ++k) {
                const Correspondence& c = s.points[idx[k]];
                const double z1 = triangulate_depth1(r, tc, c);
                if (z1 <= 0.0) continue;
                const Eigen::Vector3d x2 = r * Eigen::Vector3d(c.x, c.y, 1.0) * z1 + tc;
                if (x2(2) > 0.0) ++count;
            }
            if (count > best_count) {
                best_count = count;
                best.rotation = r;
                best.translation = tc;
            }
        }
    }
    if (best_count <= 0) {
        throw std::runtime_error("decompose_essential: no candidate passes the cheirality test");
    }
    return best;
}

std::pair<double, double> pose_error(const EssentialMatrix& e_est, const CameraPose& pose_gt,
                                     const CorrespondenceSet& s,
                                     const std::vector<double>& weights) {
    const CameraPose est = decompose_essential(e_est, s, weights);
    return {rotation_angle_deg(est.rotation, pose_gt.rotation),
            translation_angle_deg(est.translation, pose_gt.translation)};
}

}  // namespace corrlab
