#include "corrlab/eval.hpp"

#include "corrlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace corrlab {

ClassificationReport prf(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("prf: prediction/label length mismatch");
    }
    ClassificationReport r;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool p = predictions[i] != 0;
        const bool l = labels[i] != 0;
        if (p && l) ++r.tp;
        else if (p && !l) ++r.fp;
        else if (!p && l) ++r.fn;
        else ++r.tn;
    }
    r.no_positive_labels = (r.tp + r.fn) == 0;
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
    r.f_score = (r.precision + r.recall) > 0.0
                    ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                    : 0.0;
    return r;
}

void PoseErrorSet::add(double rot_deg, double trans_deg) {
    if (rot_deg < 0.0 || rot_deg > 180.0 || trans_deg < 0.0 || trans_deg > 180.0) {
        throw std::invalid_argument("PoseErrorSet: errors must lie in [0, 180] degrees");
    }
    errors.emplace_back(rot_deg, trans_deg);
}

std::vector<double> PoseErrorSet::combined() const {
    std::vector<double> out;
    out.reserve(errors.size());
    for (const auto& [rot, trans] : errors) out.push_back(std::max(rot, trans));
    return out;
}

namespace {

double accuracy_at(const std::vector<double>& combined, double tau) {
    if (combined.empty()) throw std::invalid_argument("pose metric: empty error set");
    int hit = 0;
    for (double e : combined) {
        if (e <= tau) ++hit;
    }
    return static_cast<double>(hit) / combined.size();
}

void validate_threshold(double t_deg) {
    if (t_deg < 5.0 || std::fmod(t_deg, 5.0) != 0.0) {
        throw std::invalid_argument("pose metric: threshold must be a positive multiple of 5");
    }
}

}  // namespace

double pose_map(const PoseErrorSet& errors, double t_deg) {
    validate_threshold(t_deg);
    const std::vector<double> combined = errors.combined();
    double acc = 0.0;
    int count = 0;
    for (double tau = 5.0; tau <= t_deg + 1e-9; tau += 5.0) {
        acc += accuracy_at(combined, tau);
        ++count;
    }
    return acc / count;
}

double pose_auc(const PoseErrorSet& errors, double t_deg) {
    validate_threshold(t_deg);
    const std::vector<double> combined = errors.combined();
    double area = 0.0;
    double prev = accuracy_at(combined, 0.0);
    for (int tau = 1; tau <= static_cast<int>(t_deg); ++tau) {
        const double cur = accuracy_at(combined, tau);
        area += 0.5 * (prev + cur);
        prev = cur;
    }
    return area / t_deg;
}

RansacResult ransac_baseline(const CorrespondenceSet& s, int iterations, double inlier_threshold,
                             std::uint64_t seed) {
    const int n = s.size();
    if (n < 8) throw std::invalid_argument("ransac_baseline: needs at least 8 correspondences");
    if (iterations < 1) throw std::invalid_argument("ransac_baseline: iterations must be >= 1");
    if (inlier_threshold <= 0.0) {
        throw std::invalid_argument("ransac_baseline: threshold must be > 0");
    }
    Rng rng(seed);

    std::vector<double> sample_weights(n, 0.0);
    int best_count = 0;
    std::vector<int> best_inliers;

    for (int it = 0; it < iterations; ++it) {
        // Draw 8 distinct indices.
        int picked = 0;
        std::fill(sample_weights.begin(), sample_weights.end(), 0.0);
        while (picked < 8) {
            const int idx = static_cast<int>(rng.below(n));
            if (sample_weights[idx] == 0.0) {
                sample_weights[idx] = 1.0;
                ++picked;
            }
        }
        EssentialMatrix hypothesis;
        try {
            hypothesis = weighted_eight_point(s, sample_weights);
        } catch (const std::exception&) {
            continue;  // degenerate minimal sample
        }
        std::vector<int> inliers;
        for (int i = 0; i < n; ++i) {
            if (epipolar_residual(hypothesis.m, s.points[i]) < inlier_threshold) {
                inliers.push_back(i);
            }
        }
        if (static_cast<int>(inliers.size()) > best_count) {
            best_count = static_cast<int>(inliers.size());
            best_inliers = std::move(inliers);
        }
    }
    if (best_count < 8) {
        throw std::runtime_error("ransac_baseline: no hypothesis reached 8 inliers");
    }

    // Refit on the consensus set, then relabel under the refit model.
    std::vector<double> consensus_weights(n, 0.0);
    for (int i : best_inliers) consensus_weights[i] = 1.0;
    RansacResult result;
    result.essential = weighted_eight_point(s, consensus_weights);
    result.labels.assign(n, 0);
    result.consensus_size = 0;
    for (int i = 0; i < n; ++i) {
        if (epipolar_residual(result.essential.m, s.points[i]) < inlier_threshold) {
            result.labels[i] = 1;
            ++result.consensus_size;
        }
    }
    return result;
}

void write_report_csv(const std::string& path, const std::vector<SceneEvalRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_report_csv: cannot open '" + path + "'");
    out << "scene,method,tp,fp,fn,tn,precision,recall,f_score,rot_err_deg,trans_err_deg,"
           "pose_valid\n";
    out.precision(10);

    std::map<std::string, std::vector<const SceneEvalRow*>> by_method;
    for (const auto& row : rows) {
        by_method[row.method].push_back(&row);
        out << row.scene_id << ',' << row.method << ',' << row.report.tp << ',' << row.report.fp
            << ',' << row.report.fn << ',' << row.report.tn << ',' << row.report.precision << ','
            << row.report.recall << ',' << row.report.f_score << ',' << row.rot_err_deg << ','
            << row.trans_err_deg << ',' << (row.pose_valid ? 1 : 0) << '\n';
    }
    for (const auto& [method, mrows] : by_method) {
        double p = 0.0, r = 0.0, f = 0.0;
        PoseErrorSet errors;
        for (const SceneEvalRow* row : mrows) {
            p += row->report.precision;
            r += row->report.recall;
            f += row->report.f_score;
            errors.add(row->pose_valid ? row->rot_err_deg : 180.0,
                       row->pose_valid ? row->trans_err_deg : 180.0);
        }
        const double m = static_cast<double>(mrows.size());
        out << "aggregate," << method << ",,,,," << p / m << ',' << r / m << ',' << f / m
            << ",,,\n";
        out << "pose_metrics," << method << ",mAP5=" << pose_map(errors, 5.0)
            << ",mAP20=" << pose_map(errors, 20.0) << ",AUC5=" << pose_auc(errors, 5.0)
            << ",AUC20=" << pose_auc(errors, 20.0) << ",,,,,,\n";
    }
    if (!out) throw std::runtime_error("write_report_csv: write failure on '" + path + "'");
}

}  // namespace corrlab
