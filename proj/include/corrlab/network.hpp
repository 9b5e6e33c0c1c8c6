#pragma once

#include "corrlab/cga.hpp"
#include "corrlab/csmgc.hpp"
#include "corrlab/geometry.hpp"
#include "corrlab/synthgen.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace corrlab {

struct NetworkConfig {
    int d = 32;              // feature width (paper-scale 128)
    int n_stages = 3;        // M; a single stage when use_iter is off
    int k = 3;               // k-NN neighbors per stage graph
    int ring_size = 3;       // annular convolution ring size p (divides k)
    int oa_clusters = 64;    // Order-Aware cluster count (paper-scale 500)
    int se_reduction = 4;
    bool use_iter = true;
    bool use_cga = true;
    bool use_csmgc = true;
    bool share_pos_encoders = false;
    bool scale_geometric_attention = false;
    bool final_stage_loss_only = false;
    double gamma = 0.5;            // hybrid loss weight
    double label_threshold = 1e-4; // epipolar residual threshold for labels
    double ess_clamp = 0.5;        // per-point cap on the regression residual (0 = off)
    double logit_threshold = 0.0;  // inference: inlier iff logit > threshold
    std::uint64_t init_seed = 1;

    void validate() const;
    int effective_stages() const { return use_iter ? n_stages : 1; }
    bool operator==(const NetworkConfig&) const = default;
};

struct StageOutput {
    ad::NodePtr features;  // z3: final MLP + residual output
    ad::NodePtr logits;    // N x 1
    ad::NodePtr weights;   // tanh(relu(logits)), zero exactly where logits <= 0
    ad::NodePtr z1;        // first CPA tap
    ad::NodePtr z2;        // second CPA tap (post PointCN / OA / PointCN)
    ad::NodePtr essential; // 3 x 3 stage estimate (null when weight fallback hit)
    bool weight_fallback = false;
};

struct ForwardResult {
    std::vector<StageOutput> stages;
    Matrix logits;   // final stage
    Matrix weights;  // final stage
    EssentialMatrix e_hat;
    bool weight_fallback = false;

    std::vector<int> predicted_labels(double logit_threshold) const;
    std::vector<double> weight_vector() const;
};

struct LossBreakdown {
    ad::NodePtr node;  // scalar graph node (total)
    double l_c = 0.0;
    double l_e = 0.0;
    double total = 0.0;
    bool no_inliers = false;
};

struct TrainRecord {
    std::int64_t scene_id = 0;
    double l_c = 0.0;
    double l_e = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
    bool weight_fallback = false;
};

/// The full multi-stage network. Parameters are registered on construction
/// (deterministically from config.init_seed) into the caller's store.
class MgcaNet {
public:
    MgcaNet(const NetworkConfig& config, ParameterStore& store);

    const NetworkConfig& config() const { return config_; }

    /// Runs all stages, threading the logit/weight carry and collecting the
    /// z3 history for the cross-stage fusion. N >= 16.
    ForwardResult forward(ParameterStore& store, const CorrespondenceSet& s) const;

    /// Classification + clamped epipolar regression loss, averaged over
    /// stages (or final stage only, per config). e_gt is part of the loss
    /// contract but the regression residual is evaluated under the stage
    /// estimate in both numerator and denominator.
    LossBreakdown hybrid_loss(const ForwardResult& out, const std::vector<int>& labels,
                              const EssentialMatrix& e_gt, const CorrespondenceSet& s) const;

    TrainRecord train_step(ParameterStore& store, const ScenePair& scene, const AdamConfig& adam,
                           std::int64_t scene_id = 0) const;

private:
    StageOutput stage_forward(ParameterStore& store, int stage, const CorrespondenceSet& s,
                              ad::NodePtr coords1, ad::NodePtr coords2,
                              const StageOutput* carry,
                              const std::vector<ad::NodePtr>& z3_history) const;

    NetworkConfig config_;
    std::vector<std::unique_ptr<CpaBlock>> cpa1_, cpa2_;
    std::vector<std::unique_ptr<MbffnBlock>> ffn1_, ffn2_;
    std::vector<std::unique_ptr<PointCNBlock>> pcn1_, pcn2_;
    std::vector<std::unique_ptr<OrderAwareBlock>> oa_;
    std::unique_ptr<CsmgcBlock> csmgc_;
};

/// Versioned checkpoint: the config plus every named parameter matrix.
void save_checkpoint(const std::string& path, const NetworkConfig& config,
                     const ParameterStore& store);
/// Loads into `store` (which must already hold the same parameter set);
/// throws when the stored config differs from `expected`.
void load_checkpoint(const std::string& path, const NetworkConfig& expected,
                     ParameterStore& store);
/// Reads just the config block of a checkpoint.
NetworkConfig read_checkpoint_config(const std::string& path);

}  // namespace corrlab
