#include "doctest.h"

#include "corrlab/synthgen.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

using namespace corrlab;

namespace {

bool scene_pairs_identical(const ScenePair& a, const ScenePair& b) {
    if (a.correspondences.size() != b.correspondences.size()) return false;
    for (int i = 0; i < a.correspondences.size(); ++i) {
        const auto& pa = a.correspondences.points[i];
        const auto& pb = b.correspondences.points[i];
        if (std::memcmp(&pa, &pb, sizeof(Correspondence)) != 0) return false;
    }
    if (a.labels != b.labels) return false;
    if (std::memcmp(a.pose_gt.rotation.data(), b.pose_gt.rotation.data(), 9 * sizeof(double)))
        return false;
    if (std::memcmp(a.pose_gt.translation.data(), b.pose_gt.translation.data(),
                    3 * sizeof(double)))
        return false;
    return std::memcmp(a.essential_gt.m.data(), b.essential_gt.m.data(), 9 * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("config validation") {
    SceneConfig cfg;
    cfg.n_correspondences = 8;
    CHECK_THROWS_AS(generate_scene(cfg), std::invalid_argument);
    cfg = SceneConfig{};
    cfg.outlier_ratio = 1.2;
    CHECK_THROWS_AS(generate_scene(cfg), std::invalid_argument);
    cfg = SceneConfig{};
    cfg.depth_min = 5.0;
    cfg.depth_max = 2.0;
    CHECK_THROWS_AS(generate_scene(cfg), std::invalid_argument);
}

TEST_CASE("outlier ratio zero with zero noise: all labels 1, residuals tiny") {
    SceneConfig cfg;
    cfg.n_correspondences = 64;
    cfg.outlier_ratio = 0.0;
    cfg.pixel_noise_std = 0.0;
    cfg.seed = 42;
    ScenePair scene = generate_scene(cfg);
    for (int i = 0; i < scene.correspondences.size(); ++i) {
        CHECK(scene.labels[i] == 1);
        CHECK(epipolar_residual(scene.essential_gt.m, scene.correspondences.points[i]) < 1e-16);
    }
}

TEST_CASE("outlier ratio one: all labels 0") {
    SceneConfig cfg;
    cfg.n_correspondences = 32;
    cfg.outlier_ratio = 1.0;
    cfg.seed = 11;
    ScenePair scene = generate_scene(cfg);
    for (int label : scene.labels) CHECK(label == 0);
}

TEST_CASE("planted label count matches round((1 - ratio) N) and determinism holds") {
    SceneConfig cfg;
    cfg.n_correspondences = 100;
    cfg.outlier_ratio = 0.7;
    cfg.seed = 99;
    ScenePair a = generate_scene(cfg);
    ScenePair b = generate_scene(cfg);
    CHECK(scene_pairs_identical(a, b));

    int ones = 0;
    for (int l : a.labels) ones += l;
    CHECK(std::abs(ones - 30) <= 1);

    cfg.seed = 100;
    ScenePair c = generate_scene(cfg);
    CHECK(!scene_pairs_identical(a, c));
}

TEST_CASE("coordinates stay inside the visible window") {
    SceneConfig cfg;
    cfg.n_correspondences = 256;
    cfg.outlier_ratio = 0.5;
    cfg.seed = 5;
    ScenePair scene = generate_scene(cfg);
    for (const auto& p : scene.correspondences.points) {
        CHECK(std::abs(p.x) <= cfg.fov_limit);
        CHECK(std::abs(p.y) <= cfg.fov_limit);
        CHECK(std::abs(p.xp) <= cfg.fov_limit);
        CHECK(std::abs(p.yp) <= cfg.fov_limit);
    }
}

TEST_CASE("derive_labels: trivial thresholds") {
    SceneConfig cfg;
    cfg.n_correspondences = 32;
    cfg.outlier_ratio = 0.0;
    cfg.pixel_noise_std = 0.0;
    cfg.seed = 3;
    ScenePair scene = generate_scene(cfg);
    auto at_zero = derive_labels(scene.correspondences, scene.essential_gt, 0.0);
    for (int l : at_zero) CHECK(l == 0);  // strict inequality
    auto at_small = derive_labels(scene.correspondences, scene.essential_gt, 1e-12);
    for (int l : at_small) CHECK(l == 1);
    CHECK_THROWS_AS(derive_labels(scene.correspondences, scene.essential_gt, -1.0),
                    std::invalid_argument);
}

TEST_CASE("planted-label soundness: noise-free labels reproduced at 1e-8") {
    int mismatches = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneConfig cfg;
        cfg.n_correspondences = 512;
        cfg.outlier_ratio = 0.7;
        cfg.pixel_noise_std = 0.0;
        cfg.seed = seed;
        ScenePair scene = generate_scene(cfg);
        auto derived = derive_labels(scene.correspondences, scene.essential_gt, 1e-8);
        for (int i = 0; i < scene.correspondences.size(); ++i) {
            // The only admissible disagreement is an outlier that happens to
            // satisfy the epipolar constraint.
            if (derived[i] != scene.labels[i]) {
                CHECK(scene.labels[i] == 0);
                ++mismatches;
            }
            ++total;
        }
    }
    CHECK(static_cast<double>(mismatches) / total < 0.001);
}

TEST_CASE("derive_labels agreement with planted labels at noise 1e-3, threshold 1e-4") {
    int agree = 0, total = 0;
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        SceneConfig cfg;
        cfg.n_correspondences = 512;
        cfg.outlier_ratio = 0.7;
        cfg.pixel_noise_std = 1e-3;
        cfg.seed = seed;
        ScenePair scene = generate_scene(cfg);
        auto derived = derive_labels(scene.correspondences, scene.essential_gt, 1e-4);
        for (int i = 0; i < scene.correspondences.size(); ++i) {
            agree += derived[i] == scene.labels[i] ? 1 : 0;
            ++total;
        }
    }
    CHECK(static_cast<double>(agree) / total >= 0.99);
}

TEST_CASE("dataset round-trip is bit-exact") {
    std::vector<ScenePair> scenes;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneConfig cfg;
        cfg.n_correspondences = 24;
        cfg.outlier_ratio = 0.4;
        cfg.seed = seed;
        scenes.push_back(generate_scene(cfg));
    }
    const std::string path = "test_dataset_roundtrip.txt";
    write_dataset(scenes, path);
    auto loaded = read_dataset(path);
    REQUIRE(loaded.size() == scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        CHECK(scene_pairs_identical(scenes[i], loaded[i]));
    }
    std::remove(path.c_str());
}

TEST_CASE("empty scene list round-trips") {
    const std::string path = "test_dataset_empty.txt";
    write_dataset({}, path);
    CHECK(read_dataset(path).empty());
    std::remove(path.c_str());
}

TEST_CASE("truncated file errors name the failing scene") {
    std::vector<ScenePair> scenes;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SceneConfig cfg;
        cfg.n_correspondences = 16;
        cfg.seed = seed;
        scenes.push_back(generate_scene(cfg));
    }
    const std::string path = "test_dataset_truncated.txt";
    write_dataset(scenes, path);

    // Drop the final line: the header now promises more scenes than exist.
    std::ifstream in(path);
    std::string content, line;
    int kept = 0;
    while (std::getline(in, line)) {
        if (kept++ < 3) content += line + "\n";
    }
    in.close();
    std::ofstream out(path);
    out << content;
    out.close();

    try {
        read_dataset(path);
        FAIL("expected a truncation error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("scene 2") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("malformed record errors carry the scene index") {
    const std::string path = "test_dataset_malformed.txt";
    {
        std::ofstream out(path);
        out << "corrlab-dataset v1 scenes=1 fields=coords,labels,rotation,translation,"
               "essential\n";
        out << "scene=0 n=2 coords=1,2,3,nope,5,6,7,8 labels=10 rotation=1,0,0,0,1,0,0,0,1 "
               "translation=0,0,1 essential=0,1,0,1,0,0,0,0,0\n";
    }
    try {
        read_dataset(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("scene 0") != std::string::npos);
    }
    std::remove(path.c_str());
}
