#include "corrlab/synthgen.hpp"

#include "corrlab/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace corrlab {

namespace {

constexpr int kMaxPlacementAttempts = 1000;

void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw std::runtime_error(context + ": malformed number '" + std::string(text) + "'");
    }
    return v;
}

std::vector<double> parse_double_list(std::string_view text, const std::string& context) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        if (comma == std::string_view::npos) comma = text.size();
        out.push_back(parse_double(text.substr(start, comma - start), context));
        start = comma + 1;
        if (comma == text.size()) break;
    }
    return out;
}

}  // namespace

void SceneConfig::validate() const {
    if (n_correspondences < 16) {
        throw std::invalid_argument("SceneConfig: n_correspondences must be >= 16");
    }
    if (outlier_ratio < 0.0 || outlier_ratio > 1.0) {
        throw std::invalid_argument("SceneConfig: outlier_ratio must be in [0, 1]");
    }
    if (!(depth_min > 0.0) || !(depth_max > depth_min)) {
        throw std::invalid_argument("SceneConfig: depth range must satisfy 0 < min < max");
    }
    if (pixel_noise_std < 0.0 || pixel_noise_std > 0.01 * fov_limit) {
        throw std::invalid_argument("SceneConfig: noise std must be in [0, fov_limit / 100]");
    }
    if (fov_limit <= 0.0) throw std::invalid_argument("SceneConfig: fov_limit must be positive");
}

ScenePair generate_scene(const SceneConfig& config) {
    config.validate();
    Rng rng(config.seed);

    CameraPose pose;
    const auto axis = rng.unit_vector3();
    const double angle = config.rotation_magnitude_deg * M_PI / 180.0;
    pose.rotation =
        Eigen::AngleAxisd(angle, Eigen::Vector3d(axis[0], axis[1], axis[2])).toRotationMatrix();
    const auto tdir = rng.unit_vector3();
    pose.translation = Eigen::Vector3d(tdir[0], tdir[1], tdir[2]);

    ScenePair scene;
    scene.pose_gt = pose;
    scene.essential_gt = compose_essential(pose);

    const int n = config.n_correspondences;
    const int n_inliers = static_cast<int>(std::lround((1.0 - config.outlier_ratio) * n));
    // Inliers are sampled inside a margin so coordinate noise cannot push
    // them past the visible window.
    const double inlier_window = 0.95 * config.fov_limit;

    scene.correspondences.points.resize(n);
    scene.labels.assign(n, 0);

    for (int i = 0; i < n_inliers; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
            const double u = rng.uniform(-inlier_window, inlier_window);
            const double v = rng.uniform(-inlier_window, inlier_window);
            const double z = rng.uniform(config.depth_min, config.depth_max);
            const Eigen::Vector3d x1(u * z, v * z, z);
            const Eigen::Vector3d x2 = pose.rotation * x1 + pose.translation;
            if (x2(2) < 0.1 * config.depth_min) continue;
            const double up = x2(0) / x2(2);
            const double vp = x2(1) / x2(2);
            if (std::abs(up) > inlier_window || std::abs(vp) > inlier_window) continue;
            Correspondence c;
            c.x = u + rng.normal(0.0, config.pixel_noise_std);
            c.y = v + rng.normal(0.0, config.pixel_noise_std);
            c.xp = up + rng.normal(0.0, config.pixel_noise_std);
            c.yp = vp + rng.normal(0.0, config.pixel_noise_std);
            scene.correspondences.points[i] = c;
            scene.labels[i] = 1;
            placed = true;
            break;
        }
        if (!placed) {
            throw std::runtime_error(
                "generate_scene: could not place a point visible in both views; "
                "check rotation magnitude and depth range");
        }
    }
    for (int i = n_inliers; i < n; ++i) {
        Correspondence c;
        c.x = rng.uniform(-config.fov_limit, config.fov_limit);
        c.y = rng.uniform(-config.fov_limit, config.fov_limit);
        c.xp = rng.uniform(-config.fov_limit, config.fov_limit);
        c.yp = rng.uniform(-config.fov_limit, config.fov_limit);
        scene.correspondences.points[i] = c;
    }

    // Shuffle so labels are not positional.
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(scene.correspondences.points[i], scene.correspondences.points[j]);
        std::swap(scene.labels[i], scene.labels[j]);
    }
    return scene;
}

std::vector<int> derive_labels(const CorrespondenceSet& s, const EssentialMatrix& e_gt,
                               double threshold) {
    if (threshold < 0.0) {
        throw std::invalid_argument("derive_labels: threshold must be >= 0");
    }
    std::vector<int> labels(s.size(), 0);
    for (int i = 0; i < s.size(); ++i) {
        labels[i] = epipolar_residual(e_gt.m, s.points[i]) < threshold ? 1 : 0;
    }
    return labels;
}

void write_dataset(const std::vector<ScenePair>& scenes, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_dataset: cannot open '" + path + "' for writing");
    out << "corrlab-dataset v1 scenes=" << scenes.size()
        << " fields=coords,labels,rotation,translation,essential\n";
    std::string line;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const ScenePair& sc = scenes[si];
        const int n = sc.correspondences.size();
        line.clear();
        line += "scene=" + std::to_string(si) + " n=" + std::to_string(n);
        line += " coords=";
        for (int i = 0; i < n; ++i) {
            const Correspondence& c = sc.correspondences.points[i];
            if (i) line += ',';
            append_double(line, c.x);
            line += ',';
            append_double(line, c.y);
            line += ',';
            append_double(line, c.xp);
            line += ',';
            append_double(line, c.yp);
        }
        line += " labels=";
        for (int i = 0; i < n; ++i) line += sc.labels[i] ? '1' : '0';
        line += " rotation=";
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                if (r || c) line += ',';
                append_double(line, sc.pose_gt.rotation(r, c));
            }
        line += " translation=";
        for (int r = 0; r < 3; ++r) {
            if (r) line += ',';
            append_double(line, sc.pose_gt.translation(r));
        }
        line += " essential=";
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                if (r || c) line += ',';
                append_double(line, sc.essential_gt.m(r, c));
            }
        out << line << '\n';
    }
    if (!out) throw std::runtime_error("write_dataset: write failure on '" + path + "'");
}

std::vector<ScenePair> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_dataset: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header) || header.rfind("corrlab-dataset v1 ", 0) != 0) {
        throw std::runtime_error("read_dataset: bad header in '" + path + "'");
    }
    const std::size_t count_pos = header.find("scenes=");
    if (count_pos == std::string::npos) {
        throw std::runtime_error("read_dataset: header missing scene count");
    }
    const std::size_t expected = std::stoul(header.substr(count_pos + 7));

    std::vector<ScenePair> scenes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::string ctx = "read_dataset: scene " + std::to_string(scenes.size());
        ScenePair sc;
        int n = -1;
        std::vector<double> coords, rot, trans, ess;
        std::string labels_text;

        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            const std::size_t eq = field.find('=');
            if (eq == std::string::npos) throw std::runtime_error(ctx + ": field without '='");
            const std::string key = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            if (key == "scene") {
                // index is informational
            } else if (key == "n") {
                n = std::stoi(value);
            } else if (key == "coords") {
                coords = parse_double_list(value, ctx);
            } else if (key == "labels") {
                labels_text = value;
            } else if (key == "rotation") {
                rot = parse_double_list(value, ctx);
            } else if (key == "translation") {
                trans = parse_double_list(value, ctx);
            } else if (key == "essential") {
                ess = parse_double_list(value, ctx);
            } else {
                throw std::runtime_error(ctx + ": unknown field '" + key + "'");
            }
        }
        if (n < 0) throw std::runtime_error(ctx + ": missing n");
        if (coords.size() != static_cast<std::size_t>(4 * n)) {
            throw std::runtime_error(ctx + ": expected " + std::to_string(4 * n) +
                                     " coordinates, got " + std::to_string(coords.size()));
        }
        if (labels_text.size() != static_cast<std::size_t>(n)) {
            throw std::runtime_error(ctx + ": label string length mismatch");
        }
        if (rot.size() != 9 || trans.size() != 3 || ess.size() != 9) {
            throw std::runtime_error(ctx + ": truncated pose/essential record");
        }
        sc.correspondences.points.resize(n);
        sc.labels.resize(n);
        for (int i = 0; i < n; ++i) {
            Correspondence& c = sc.correspondences.points[i];
            c.x = coords[4 * i];
            c.y = coords[4 * i + 1];
            c.xp = coords[4 * i + 2];
            c.yp = coords[4 * i + 3];
            if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.xp) ||
                !std::isfinite(c.yp)) {
                throw std::runtime_error(ctx + ": non-finite coordinate at record " +
                                         std::to_string(i));
            }
            if (labels_text[i] != '0' && labels_text[i] != '1') {
                throw std::runtime_error(ctx + ": label must be 0 or 1 at record " +
                                         std::to_string(i));
            }
            sc.labels[i] = labels_text[i] - '0';
        }
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                sc.pose_gt.rotation(r, c) = rot[3 * r + c];
                sc.essential_gt.m(r, c) = ess[3 * r + c];
            }
        for (int r = 0; r < 3; ++r) sc.pose_gt.translation(r) = trans[r];
        scenes.push_back(std::move(sc));
    }
    if (scenes.size() != expected) {
        throw std::runtime_error("read_dataset: header promises " + std::to_string(expected) +
                                 " scenes but file holds " + std::to_string(scenes.size()) +
                                 " (truncated at scene " + std::to_string(scenes.size()) + ")");
    }
    return scenes;
}

}  // namespace corrlab
