#include "doctest.h"

#include "corrlab/network.hpp"

#include <cmath>
#include <cstdio>

using namespace corrlab;
namespace ad = corrlab::ad;

namespace {

ScenePair make_scene(int n, double ratio, double noise, std::uint64_t seed) {
    SceneConfig cfg;
    cfg.n_correspondences = n;
    cfg.outlier_ratio = ratio;
    cfg.pixel_noise_std = noise;
    cfg.seed = seed;
    return generate_scene(cfg);
}

NetworkConfig small_config() {
    NetworkConfig cfg;
    cfg.d = 8;
    cfg.n_stages = 3;
    cfg.oa_clusters = 4;
    cfg.init_seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    NetworkConfig cfg = small_config();
    cfg.ring_size = 2;  // does not divide k = 3
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.use_csmgc = true;
    cfg.n_stages = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.use_iter = false;
    cfg.use_csmgc = false;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("weights are exactly tanh(relu(logits)); zero on non-positive logits") {
    ScenePair scene = make_scene(32, 0.5, 1e-3, 1);
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ForwardResult out = net.forward(store, scene.correspondences);
    REQUIRE(out.logits.rows() == 32);
    for (int i = 0; i < 32; ++i) {
        const double z = out.logits.at(i, 0);
        const double expected = z > 0.0 ? std::tanh(z) : 0.0;
        CHECK(out.weights.at(i, 0) == expected);
    }
}

TEST_CASE("baseline configuration: one stage, no attention parameters") {
    NetworkConfig cfg = small_config();
    cfg.use_iter = false;
    cfg.use_cga = false;
    cfg.use_csmgc = false;
    ParameterStore store;
    MgcaNet net(cfg, store);
    CHECK(!store.has("stage0/cpa1/q/map/w"));
    CHECK(!store.has("stage1/embed/w"));
    CHECK(store.has("stage0/pcn1/unit0/map/w"));

    ScenePair scene = make_scene(32, 0.5, 1e-3, 2);
    ForwardResult out = net.forward(store, scene.correspondences);
    CHECK(out.stages.size() == 1);
    CHECK(out.logits.rows() == 32);
    CHECK(out.stages[0].features->value.cols() == cfg.d);
}

TEST_CASE("full configuration runs M stages with cross-stage consensus") {
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    CHECK(store.has("csmgc/align/w"));
    ScenePair scene = make_scene(32, 0.5, 1e-3, 3);
    ForwardResult out = net.forward(store, scene.correspondences);
    CHECK(out.stages.size() == 3);
}

TEST_CASE("forward is deterministic") {
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ScenePair scene = make_scene(24, 0.4, 1e-3, 4);
    ForwardResult a = net.forward(store, scene.correspondences);
    ForwardResult b = net.forward(store, scene.correspondences);
    CHECK(max_abs_diff(a.logits, b.logits) == 0.0);
    CHECK((a.e_hat.m - b.e_hat.m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss identity: total = l_c + gamma * l_e; gamma 0 collapses to l_c") {
    ScenePair scene = make_scene(32, 0.5, 1e-3, 5);
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ForwardResult out = net.forward(store, scene.correspondences);
    LossBreakdown loss = net.hybrid_loss(out, scene.labels, scene.essential_gt,
                                         scene.correspondences);
    CHECK(std::abs(loss.total - (loss.l_c + cfg.gamma * loss.l_e)) < 1e-10);
    CHECK(loss.l_e >= 0.0);

    NetworkConfig cfg0 = small_config();
    cfg0.gamma = 0.0;
    ParameterStore store0;
    MgcaNet net0(cfg0, store0);
    ForwardResult out0 = net0.forward(store0, scene.correspondences);
    LossBreakdown loss0 = net0.hybrid_loss(out0, scene.labels, scene.essential_gt,
                                           scene.correspondences);
    CHECK(loss0.total == loss0.l_c);
}

TEST_CASE("regression term vanishes when the estimate equals ground truth") {
    ScenePair scene = make_scene(32, 0.0, 0.0, 6);  // noise-free inliers only
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ForwardResult out = net.forward(store, scene.correspondences);
    // Substitute the ground-truth matrix for every stage estimate.
    Matrix gt(3, 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) gt.at(r, c) = scene.essential_gt.m(r, c);
    for (auto& stage : out.stages) stage.essential = ad::constant(gt);
    LossBreakdown loss = net.hybrid_loss(out, scene.labels, scene.essential_gt,
                                         scene.correspondences);
    CHECK(loss.l_e < 1e-16);
}

TEST_CASE("all-outlier scene: l_e flagged zero") {
    ScenePair scene = make_scene(32, 1.0, 1e-3, 7);
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ForwardResult out = net.forward(store, scene.correspondences);
    LossBreakdown loss = net.hybrid_loss(out, scene.labels, scene.essential_gt,
                                         scene.correspondences);
    CHECK(loss.no_inliers);
    CHECK(loss.l_e == 0.0);
}

TEST_CASE("weight fallback engages when logits are driven non-positive") {
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    for (int s = 0; s < 3; ++s) {
        store.get("stage" + std::to_string(s) + "/head/w").value = Matrix::zeros(cfg.d, 1);
        store.get("stage" + std::to_string(s) + "/head/b").value =
            Matrix::constant(1, 1, -5.0);
    }
    ScenePair scene = make_scene(32, 0.5, 1e-3, 8);
    ForwardResult out = net.forward(store, scene.correspondences);
    CHECK(out.weight_fallback);
    CHECK(std::isfinite(out.e_hat.m.norm()));
    CHECK(out.e_hat.m.norm() > 0.0);
}

TEST_CASE("joint permutation: logits permute, essential matches up to sign") {
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ScenePair scene = make_scene(24, 0.4, 1e-3, 9);
    ForwardResult base = net.forward(store, scene.correspondences);

    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<int> perm(scene.correspondences.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
        for (int i = static_cast<int>(perm.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
            std::swap(perm[i], perm[j]);
        }
        CorrespondenceSet permuted = scene.correspondences.permuted(perm);
        ForwardResult pout = net.forward(store, permuted);
        for (std::size_t r = 0; r < perm.size(); ++r) {
            CHECK(std::abs(pout.logits.at(static_cast<int>(r), 0) -
                           base.logits.at(perm[r], 0)) < 1e-8);
        }
        const double direct = (pout.e_hat.m - base.e_hat.m).norm();
        const double flipped = (pout.e_hat.m + base.e_hat.m).norm();
        CHECK(std::min(direct, flipped) < 1e-8);
    }
}

TEST_CASE("overfit smoke: fifty steps on one scene reduce the loss") {
    NetworkConfig cfg = small_config();
    cfg.d = 16;
    ParameterStore store;
    MgcaNet net(cfg, store);
    ScenePair scene = make_scene(64, 0.5, 1e-3, 10);
    AdamConfig adam;
    TrainRecord first = net.train_step(store, scene, adam, 0);
    CHECK(std::isfinite(first.grad_norm));
    CHECK(first.grad_norm > 0.0);
    TrainRecord last = first;
    for (int i = 1; i < 50; ++i) last = net.train_step(store, scene, adam, i);
    CHECK(last.total < first.total);
}

TEST_CASE("training is deterministic across identical runs") {
    ScenePair scene = make_scene(32, 0.5, 1e-3, 12);
    AdamConfig adam;
    auto run = [&]() {
        NetworkConfig cfg = small_config();
        ParameterStore store;
        MgcaNet net(cfg, store);
        std::vector<TrainRecord> records;
        for (int i = 0; i < 5; ++i) records.push_back(net.train_step(store, scene, adam, i));
        return records;
    };
    auto a = run();
    auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].total == b[i].total);
        CHECK(a[i].l_c == b[i].l_c);
        CHECK(a[i].l_e == b[i].l_e);
        CHECK(a[i].grad_norm == b[i].grad_norm);
    }
}

TEST_CASE("checkpoint round-trip and config mismatch rejection") {
    NetworkConfig cfg = small_config();
    ParameterStore store;
    MgcaNet net(cfg, store);
    ScenePair scene = make_scene(32, 0.5, 1e-3, 13);
    AdamConfig adam;
    for (int i = 0; i < 3; ++i) net.train_step(store, scene, adam, i);

    const std::string path = "test_checkpoint.txt";
    save_checkpoint(path, cfg, store);

    ParameterStore loaded_store;
    MgcaNet loaded_net(cfg, loaded_store);
    load_checkpoint(path, cfg, loaded_store);
    for (const Parameter* p : store.all()) {
        CHECK(max_abs_diff(p->value, loaded_store.get(p->name).value) == 0.0);
    }
    ForwardResult a = net.forward(store, scene.correspondences);
    ForwardResult b = loaded_net.forward(loaded_store, scene.correspondences);
    CHECK(max_abs_diff(a.logits, b.logits) == 0.0);

    NetworkConfig other = cfg;
    other.d = 12;
    ParameterStore other_store;
    MgcaNet other_net(other, other_store);
    CHECK_THROWS_AS(load_checkpoint(path, other, other_store), std::runtime_error);
    CHECK(read_checkpoint_config(path) == cfg);
    std::remove(path.c_str());
}
