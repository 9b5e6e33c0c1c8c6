#include "corrlab/network.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace corrlab {

namespace ad_ = corrlab::ad;

namespace {

constexpr double kPositiveWeightFloor = 1e-8;

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage); }

void append_double_text(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

void NetworkConfig::validate() const {
    if (d < 4) throw std::invalid_argument("NetworkConfig: d must be >= 4");
    if (n_stages < 1) throw std::invalid_argument("NetworkConfig: n_stages must be >= 1");
    if (k < 1) throw std::invalid_argument("NetworkConfig: k must be >= 1");
    if (ring_size < 1 || k % ring_size != 0) {
        throw std::invalid_argument("NetworkConfig: ring_size must divide k");
    }
    if (oa_clusters < 1) throw std::invalid_argument("NetworkConfig: oa_clusters must be >= 1");
    if (gamma < 0.0) throw std::invalid_argument("NetworkConfig: gamma must be >= 0");
    if (label_threshold <= 0.0) {
        throw std::invalid_argument("NetworkConfig: label_threshold must be > 0");
    }
    if (use_csmgc && (!use_iter || n_stages < 3)) {
        throw std::invalid_argument(
            "NetworkConfig: the cross-stage module needs the iterative structure with >= 3 "
            "stages");
    }
}

std::vector<int> ForwardResult::predicted_labels(double logit_threshold) const {
    std::vector<int> out(logits.rows());
    for (int i = 0; i < logits.rows(); ++i) out[i] = logits.at(i, 0) > logit_threshold ? 1 : 0;
    return out;
}

std::vector<double> ForwardResult::weight_vector() const {
    std::vector<double> out(weights.rows());
    for (int i = 0; i < weights.rows(); ++i) out[i] = weights.at(i, 0);
    return out;
}

MgcaNet::MgcaNet(const NetworkConfig& config, ParameterStore& store) : config_(config) {
    config_.validate();
    Rng rng(config_.init_seed);
    const int stages = config_.effective_stages();
    for (int s = 0; s < stages; ++s) {
        const std::string p = stage_prefix(s);
        const int in_width = s == 0 ? 4 : 6;
        register_linear(store, p + "/embed", in_width, config_.d, rng);
        if (config_.use_cga) {
            cpa1_.push_back(std::make_unique<CpaBlock>(store, p + "/cpa1", config_.d,
                                                       config_.share_pos_encoders,
                                                       config_.scale_geometric_attention, rng));
            ffn1_.push_back(std::make_unique<MbffnBlock>(store, p + "/ffn1", config_.d, rng));
            cpa2_.push_back(std::make_unique<CpaBlock>(store, p + "/cpa2", config_.d,
                                                       config_.share_pos_encoders,
                                                       config_.scale_geometric_attention, rng));
            ffn2_.push_back(std::make_unique<MbffnBlock>(store, p + "/ffn2", config_.d, rng));
        }
        pcn1_.push_back(std::make_unique<PointCNBlock>(store, p + "/pcn1", config_.d, rng));
        oa_.push_back(
            std::make_unique<OrderAwareBlock>(store, p + "/oa", config_.d, config_.oa_clusters, rng));
        pcn2_.push_back(std::make_unique<PointCNBlock>(store, p + "/pcn2", config_.d, rng));
        register_linear(store, p + "/final_mlp0", config_.d, config_.d, rng);
        register_linear(store, p + "/final_mlp1", config_.d, config_.d, rng,
                        /*zero_weight=*/true);
        register_linear(store, p + "/head", config_.d, 1, rng);
    }
    if (config_.use_csmgc) {
        const int history_len = config_.n_stages - 2;  // stages 1..M-2
        csmgc_ = std::make_unique<CsmgcBlock>(store, "csmgc", config_.d, config_.k,
                                              config_.ring_size, history_len,
                                              config_.se_reduction, rng);
    }
}

StageOutput MgcaNet::stage_forward(ParameterStore& store, int stage, const CorrespondenceSet& s,
                                   ad_::NodePtr coords1, ad_::NodePtr coords2,
                                   const StageOutput* carry,
                                   const std::vector<ad_::NodePtr>& z3_history) const {
    const std::string p = stage_prefix(stage);
    const int last_stage = config_.effective_stages() - 1;

    ad_::NodePtr input = ad_::constant(s.to_matrix());
    if (stage > 0) {
        if (carry == nullptr) throw std::invalid_argument("stage_forward: missing carry");
        if (carry->logits->value.rows() != s.size()) {
            throw std::invalid_argument("stage_forward: carry shape mismatch");
        }
        input = ad_::concat_cols({input, carry->logits, carry->weights});
    }
    ad_::NodePtr h = linear(store, p + "/embed", input);

    StageOutput out;
    if (config_.use_cga) {
        h = cpa1_[stage]->forward(store, h, coords1, coords2);
        out.z1 = h;
        h = ffn1_[stage]->forward(store, h);
    } else {
        out.z1 = h;
    }
    h = pcn1_[stage]->forward(store, h);
    h = oa_[stage]->forward(store, h);
    h = pcn2_[stage]->forward(store, h);
    if (config_.use_cga) {
        h = cpa2_[stage]->forward(store, h, coords1, coords2);
        out.z2 = h;
        h = ffn2_[stage]->forward(store, h);
    } else {
        out.z2 = h;
    }
    if (config_.use_csmgc && stage == last_stage) {
        if (carry == nullptr || z3_history.empty()) {
            throw std::runtime_error("stage_forward: cross-stage history unavailable");
        }
        auto consensus =
            csmgc_->forward(store, z3_history, carry->z1, carry->z2, carry->features);
        h = ad_::add(h, consensus);
    }
    auto refined = linear(store, p + "/final_mlp1",
                          ad_::relu(linear(store, p + "/final_mlp0", h)));
    out.features = ad_::add(h, refined);
    out.logits = linear(store, p + "/head", out.features);
    out.weights = ad_::tanh_op(ad_::relu(out.logits));

    int positive = 0;
    for (int i = 0; i < s.size(); ++i) {
        if (out.weights->value.at(i, 0) > kPositiveWeightFloor) ++positive;
    }
    if (positive >= 8) {
        out.essential = weighted_eight_point_node(s, out.weights);
    } else {
        // Fewer than 8 usable weights: fall back to the top-8 logits with
        // unit weight. Constant weights, so no gradient flows to this stage's
        // regression term.
        out.weight_fallback = true;
        std::vector<int> idx(s.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + 8, idx.end(), [&](int a, int b) {
            return out.logits->value.at(a, 0) > out.logits->value.at(b, 0);
        });
        Matrix wfall(s.size(), 1);
        for (int r = 0; r < 8; ++r) wfall.at(idx[r], 0) = 1.0;
        out.essential = weighted_eight_point_node(s, ad_::constant(wfall));
    }
    return out;
}

ForwardResult MgcaNet::forward(ParameterStore& store, const CorrespondenceSet& s) const {
    if (s.size() < 16) {
        throw std::invalid_argument("network_forward: needs at least 16 correspondences");
    }
    if (config_.k >= s.size()) {
        throw std::invalid_argument("network_forward: k must be below the correspondence count");
    }
    ad_::NodePtr coords1 = ad_::constant(s.view1_coords());
    ad_::NodePtr coords2 = ad_::constant(s.view2_coords());

    ForwardResult result;
    const int stages = config_.effective_stages();
    std::vector<ad_::NodePtr> z3_history;
    for (int st = 0; st < stages; ++st) {
        const StageOutput* carry = st == 0 ? nullptr : &result.stages.back();
        // History spans stages 1..M-2 (0-indexed: 0..M-3).
        std::vector<ad_::NodePtr> history;
        if (config_.use_csmgc && st == stages - 1) {
            history.assign(z3_history.begin(),
                           z3_history.begin() + (config_.n_stages - 2));
        }
        StageOutput so = stage_forward(store, st, s, coords1, coords2, carry, history);
        result.weight_fallback |= so.weight_fallback;
        z3_history.push_back(so.features);
        result.stages.push_back(std::move(so));
    }
    const StageOutput& last = result.stages.back();
    result.logits = last.logits->value;
    result.weights = last.weights->value;
    Eigen::Matrix3d e;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e(r, c) = last.essential->value.at(r, c);
    result.e_hat = EssentialMatrix{e};
    return result;
}

LossBreakdown MgcaNet::hybrid_loss(const ForwardResult& out, const std::vector<int>& labels,
                                   const EssentialMatrix& /*e_gt*/,
                                   const CorrespondenceSet& s) const {
    const int n = s.size();
    if (static_cast<int>(labels.size()) != n) {
        throw std::invalid_argument("hybrid_loss: label count mismatch");
    }
    int n_pos = 0;
    Matrix label_col(n, 1);
    for (int i = 0; i < n; ++i) {
        label_col.at(i, 0) = labels[i] ? 1.0 : 0.0;
        n_pos += labels[i] ? 1 : 0;
    }
    const int n_neg = n - n_pos;
    const double pos_weight =
        (n_pos == 0 || n_neg == 0) ? 1.0 : static_cast<double>(n_neg) / n_pos;

    LossBreakdown breakdown;
    breakdown.no_inliers = n_pos == 0;

    const int total_stages = static_cast<int>(out.stages.size());
    const int first_stage = config_.final_stage_loss_only ? total_stages - 1 : 0;
    const int counted = total_stages - first_stage;

    ad_::NodePtr lc_sum, le_sum;
    for (int st = first_stage; st < total_stages; ++st) {
        const StageOutput& so = out.stages[st];
        auto lc = ad_::bce_with_logits(so.logits, label_col, pos_weight);
        lc_sum = lc_sum ? ad_::add(lc_sum, lc) : lc;

        ad_::NodePtr le;
        if (n_pos == 0) {
            le = ad_::constant(Matrix::zeros(1, 1));
        } else {
            auto res = epipolar_residual_node(so.essential, s);
            if (config_.ess_clamp > 0.0) res = ad_::clamp_max(res, config_.ess_clamp);
            auto masked = ad_::hadamard(res, ad_::constant(label_col));
            le = ad_::scale(ad_::sum_all(masked), 1.0 / n_pos);
        }
        le_sum = le_sum ? ad_::add(le_sum, le) : le;
    }
    auto lc_mean = ad_::scale(lc_sum, 1.0 / counted);
    auto le_mean = ad_::scale(le_sum, 1.0 / counted);
    breakdown.node = ad_::add(lc_mean, ad_::scale(le_mean, config_.gamma));
    breakdown.l_c = lc_mean->value.at(0, 0);
    breakdown.l_e = le_mean->value.at(0, 0);
    breakdown.total = breakdown.node->value.at(0, 0);
    return breakdown;
}

TrainRecord MgcaNet::train_step(ParameterStore& store, const ScenePair& scene,
                                const AdamConfig& adam, std::int64_t scene_id) const {
    const auto start = std::chrono::steady_clock::now();
    ForwardResult out = forward(store, scene.correspondences);
    LossBreakdown loss =
        hybrid_loss(out, scene.labels, scene.essential_gt, scene.correspondences);
    if (!std::isfinite(loss.total)) {
        std::ostringstream diag;
        diag << "train_step: non-finite loss (l_c=" << loss.l_c << ", l_e=" << loss.l_e << ")";
        for (std::size_t st = 0; st < out.stages.size(); ++st) {
            diag << " |stage" << st
                 << " features|=" << frobenius_norm(out.stages[st].features->value)
                 << " |logits|=" << frobenius_norm(out.stages[st].logits->value);
        }
        throw std::runtime_error(diag.str());
    }
    ad_::backward(loss.node, store);

    TrainRecord rec;
    rec.scene_id = scene_id;
    rec.l_c = loss.l_c;
    rec.l_e = loss.l_e;
    rec.total = loss.total;
    rec.grad_norm = store.grad_norm();
    rec.weight_fallback = out.weight_fallback;
    store.adam_step(adam);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            start)
                       .count();
    return rec;
}

namespace {

std::string config_to_text(const NetworkConfig& c) {
    std::string s;
    s += "d=" + std::to_string(c.d);
    s += " n_stages=" + std::to_string(c.n_stages);
    s += " k=" + std::to_string(c.k);
    s += " ring_size=" + std::to_string(c.ring_size);
    s += " oa_clusters=" + std::to_string(c.oa_clusters);
    s += " se_reduction=" + std::to_string(c.se_reduction);
    s += " use_iter=" + std::to_string(c.use_iter ? 1 : 0);
    s += " use_cga=" + std::to_string(c.use_cga ? 1 : 0);
    s += " use_csmgc=" + std::to_string(c.use_csmgc ? 1 : 0);
    s += " share_pos_encoders=" + std::to_string(c.share_pos_encoders ? 1 : 0);
    s += " scale_geometric_attention=" + std::to_string(c.scale_geometric_attention ? 1 : 0);
    s += " final_stage_loss_only=" + std::to_string(c.final_stage_loss_only ? 1 : 0);
    s += " gamma=";
    append_double_text(s, c.gamma);
    s += " label_threshold=";
    append_double_text(s, c.label_threshold);
    s += " ess_clamp=";
    append_double_text(s, c.ess_clamp);
    s += " logit_threshold=";
    append_double_text(s, c.logit_threshold);
    s += " init_seed=" + std::to_string(c.init_seed);
    return s;
}

NetworkConfig config_from_text(const std::string& text) {
    NetworkConfig c;
    std::istringstream in(text);
    std::string field;
    while (in >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("checkpoint config: field without '=': " + field);
        }
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "d") c.d = std::stoi(value);
        else if (key == "n_stages") c.n_stages = std::stoi(value);
        else if (key == "k") c.k = std::stoi(value);
        else if (key == "ring_size") c.ring_size = std::stoi(value);
        else if (key == "oa_clusters") c.oa_clusters = std::stoi(value);
        else if (key == "se_reduction") c.se_reduction = std::stoi(value);
        else if (key == "use_iter") c.use_iter = value == "1";
        else if (key == "use_cga") c.use_cga = value == "1";
        else if (key == "use_csmgc") c.use_csmgc = value == "1";
        else if (key == "share_pos_encoders") c.share_pos_encoders = value == "1";
        else if (key == "scale_geometric_attention") c.scale_geometric_attention = value == "1";
        else if (key == "final_stage_loss_only") c.final_stage_loss_only = value == "1";
        else if (key == "gamma") c.gamma = std::stod(value);
        else if (key == "label_threshold") c.label_threshold = std::stod(value);
        else if (key == "ess_clamp") c.ess_clamp = std::stod(value);
        else if (key == "logit_threshold") c.logit_threshold = std::stod(value);
        else if (key == "init_seed") c.init_seed = std::stoull(value);
        else throw std::runtime_error("checkpoint config: unknown field '" + key + "'");
    }
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkConfig& config,
                     const ParameterStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    out << "corrlab-checkpoint v1\n";
    out << "config " << config_to_text(config) << "\n";
    for (const Parameter* p : store.all()) {
        out << "param " << p->name << " " << p->value.rows() << " " << p->value.cols() << "\n";
        std::string line;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            if (i) line += ' ';
            append_double_text(line, p->value[i]);
        }
        out << line << "\n";
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failure on '" + path + "'");
}

NetworkConfig read_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_checkpoint_config: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "corrlab-checkpoint v1") {
        throw std::runtime_error("read_checkpoint_config: bad header in '" + path + "'");
    }
    if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
        throw std::runtime_error("read_checkpoint_config: missing config line");
    }
    return config_from_text(line.substr(7));
}

void load_checkpoint(const std::string& path, const NetworkConfig& expected,
                     ParameterStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "corrlab-checkpoint v1") {
        throw std::runtime_error("load_checkpoint: bad header in '" + path + "'");
    }
    if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
        throw std::runtime_error("load_checkpoint: missing config line");
    }
    const NetworkConfig stored = config_from_text(line.substr(7));
    if (!(stored == expected)) {
        throw std::runtime_error("load_checkpoint: checkpoint config does not match the "
                                 "requested network configuration");
    }
    std::size_t loaded = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream head(line);
        std::string tag, name;
        int rows = 0, cols = 0;
        head >> tag >> name >> rows >> cols;
        if (tag != "param" || name.empty() || rows <= 0 || cols < 0) {
            throw std::runtime_error("load_checkpoint: malformed parameter header: " + line);
        }
        if (!std::getline(in, line)) {
            throw std::runtime_error("load_checkpoint: truncated data for '" + name + "'");
        }
        Parameter& p = store.get(name);
        if (p.value.rows() != rows || p.value.cols() != cols) {
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
        }
        const char* ptr = line.data();
        const char* end = line.data() + line.size();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            while (ptr < end && *ptr == ' ') ++ptr;
            double v = 0.0;
            auto res = std::from_chars(ptr, end, v);
            if (res.ec != std::errc()) {
                throw std::runtime_error("load_checkpoint: malformed value in '" + name + "'");
            }
            ptr = res.ptr;
            p.value[i] = v;
        }
        ++loaded;
    }
    if (loaded != store.all().size()) {
        throw std::runtime_error("load_checkpoint: parameter count mismatch (" +
                                 std::to_string(loaded) + " in file)");
    }
}

}  // namespace corrlab
