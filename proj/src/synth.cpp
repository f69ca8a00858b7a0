// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/synth.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>
#include <random>

namespace pygs::synth {

SceneKind scene_kind_from_string(std::string_view s) {
    if (s == "random") return SceneKind::Random;
    if (s == "multiscale") return SceneKind::Multiscale;
    throw ConfigError("unknown scene kind '" + std::string(s) + "' (expected random or multiscale)");
}

std::string_view to_string(SceneKind k) { return k == SceneKind::Random ? "random" : "multiscale"; }

void SynthConfig::validate() const {
    if (gaussians < 1) throw ConfigError("gaussians must be positive");
    if (views < 1) throw ConfigError("views must be positive");
    if (width < 1 || height < 1 || width > 4096 || height > 4096) throw ConfigError("image size out of range");
    if (!(exposure_jitter >= 0.0 && exposure_jitter < 1.0)) throw ConfigError("exposure jitter must be in [0, 1)");
    if (test_every < 0) throw ConfigError("test_every must be non-negative");
}

namespace {

constexpr double kFovY = 50.0 * std::numbers::pi / 180.0;

float dc_for(float rgb) { return static_cast<float>((rgb - 0.5) / geom::sh::C0); }

void set_color(GaussianSet<float>& g, std::size_t i, const Vec3f& rgb) {
    for (int a = 0; a < 3; ++a) g.sh_dc[3 * i + a] = dc_for(rgb[a]);
}

void random_rotation(GaussianSet<float>& g, std::size_t i, std::mt19937_64& rng) {
    std::normal_distribution<float> nd;
    Vec4<float> q(nd(rng), nd(rng), nd(rng), nd(rng));
    q /= std::max(q.norm(), 1e-6f);
    for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] = q[a];
}

GaussianSet<float> random_cloud(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    GaussianSet<float> g;
    g.resize(n);
    for (int i = 0; i < n; ++i) {
        Vec3f p;
        do {
            p = Vec3f(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
        } while (p.squaredNorm() > 1.0f);
        for (int a = 0; a < 3; ++a) g.positions[3 * i + a] = 0.9f * p[a];
        random_rotation(g, i, rng);
        for (int a = 0; a < 3; ++a) g.log_scales[3 * i + a] = std::log(0.04f) + u(rng) * std::log(3.0f);
        g.opacity_logits[i] = logit(0.5f + 0.45f * u(rng));
        set_color(g, i, Vec3f(0.1f + 0.8f * u(rng), 0.1f + 0.8f * u(rng), 0.1f + 0.8f * u(rng)));
    }
    return g;
}

// Flat textured patch on z = 0 (fine detail) surrounded by a ring of large smooth blobs.
GaussianSet<float> multiscale_scene(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const int side = std::max(2, static_cast<int>(std::sqrt(0.9 * n)));
    const int blobs = std::max(4, n - side * side);
    GaussianSet<float> g;
    g.resize(static_cast<std::size_t>(side * side + blobs));
    const float cell = 1.2f / side;
    std::size_t i = 0;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x, ++i) {
            g.positions[3 * i] = -0.6f + (x + 0.5f) * cell;
            g.positions[3 * i + 1] = -0.6f + (y + 0.5f) * cell;
            g.positions[3 * i + 2] = 0.0f;
            g.rotations[4 * i] = 1.0f;
            g.log_scales[3 * i] = g.log_scales[3 * i + 1] = std::log(0.6f * cell);
            g.log_scales[3 * i + 2] = std::log(0.1f * cell);
            g.opacity_logits[i] = logit(0.95f);
            const bool dark = ((x / 2) + (y / 2)) % 2 == 0;
            const float stripe = (x % 3 == 0) ? 0.3f : 0.0f;
            set_color(g, i, dark ? Vec3f(0.1f + stripe, 0.15f, 0.3f) : Vec3f(0.9f, 0.8f - stripe, 0.2f + stripe));
        }
    for (int b = 0; b < blobs; ++b, ++i) {
        const float angle = 2.0f * std::numbers::pi_v<float> * (b + 0.3f * u(rng)) / blobs;
        const float radius = 2.3f + 0.4f * u(rng);
        g.positions[3 * i] = radius * std::cos(angle);
        g.positions[3 * i + 1] = radius * std::sin(angle);
        g.positions[3 * i + 2] = 0.2f + 0.8f * u(rng);
        random_rotation(g, i, rng);
        for (int a = 0; a < 3; ++a) g.log_scales[3 * i + a] = std::log(0.3f + 0.25f * u(rng));
        g.opacity_logits[i] = logit(0.9f);
        const float t = 0.5f + 0.5f * std::cos(angle);
        set_color(g, i, Vec3f(0.35f + 0.3f * t, 0.5f, 0.65f - 0.3f * t));
    }
    return g;
}

Model<float> wrap(GaussianSet<float> g, std::mt19937_64& rng) {
    Model<float> m;
    m.levels = 1;
    m.sh_degree = 0;
    m.gaussians = std::move(g);
    m.centroids = {Vec3f::Zero()};
    m.embeddings = nets::Embeddings<float>::random(1, 1, 4, rng);
    m.weighting = nets::make_weighting_net<float>(4, 1);
    m.correction = nets::make_correction_net<float>(4);
    m.weighting_mode = WeightingMode::Uniform;
    m.color_correction = false;
    return m;
}

std::vector<geom::Camera> orbit_cameras(const SynthConfig& c) {
    std::vector<geom::Camera> cams;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < c.views; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / c.views;
        const double r = std::sqrt(1.0 - z * z);
        const Eigen::Vector3d eye = 3.5 * Eigen::Vector3d(r * std::cos(golden * i), r * std::sin(golden * i), z);
        cams.push_back(geom::Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), kFovY, c.width,
                                             c.height, i));
    }
    return cams;
}

// Views alternate in blocks of eight between close-ups of the patch and distant overviews,
// so every split sees both scales.
std::vector<geom::Camera> multiscale_cameras(const SynthConfig& c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<geom::Camera> cams;
    for (int i = 0; i < c.views; ++i) {
        const bool near = (i % 16) < 8;
        const double azimuth = 2.0 * std::numbers::pi * u(rng);
        const double elevation = (near ? 40.0 + 35.0 * u(rng) : 20.0 + 30.0 * u(rng)) * std::numbers::pi / 180.0;
        const double radius = near ? 1.2 + 0.3 * u(rng) : 5.5 + 1.0 * u(rng);
        const Eigen::Vector3d dir(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                                  std::sin(elevation));
        const Eigen::Vector3d target = near ? Eigen::Vector3d(0.2 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5), 0.0)
                                            : Eigen::Vector3d(0.0, 0.0, 0.3);
        cams.push_back(geom::Camera::look_at(target + radius * dir, target, Eigen::Vector3d::UnitZ(), kFovY, c.width,
                                             c.height, i));
    }
    return cams;
}

} // namespace

Image<float> render_truth(const Model<float>& truth, const geom::Camera& cam, int threads) {
    ViewOptions opt;
    opt.plain = true;
    opt.active_sh_degree = 0;
    opt.threads = threads;
    return render_frame(truth, cam, opt).output.color;
}

SyntheticDataset make_dataset(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    SyntheticDataset d;
    if (config.kind == SceneKind::Random) {
        d.truth = wrap(random_cloud(config.gaussians, rng), rng);
        d.cameras = orbit_cameras(config);
        d.aabb = Aabb{Vec3f::Constant(-1.5f), Vec3f::Constant(1.5f)};
    } else {
        d.truth = wrap(multiscale_scene(config.gaussians, rng), rng);
        d.cameras = multiscale_cameras(config, rng);
        d.aabb = Aabb{Vec3f(-3.5f, -3.5f, -1.0f), Vec3f(3.5f, 3.5f, 2.0f)};
    }
    d.truth.scene_aabb = d.aabb;
    std::uniform_real_distribution<double> gain(1.0 - config.exposure_jitter, 1.0 + config.exposure_jitter);
    for (const auto& cam : d.cameras) {
        const bool held_out = config.test_every > 0 && cam.index % config.test_every == 0;
        const float g = (held_out || config.exposure_jitter == 0.0) ? 1.0f : static_cast<float>(gain(rng));
        auto img = render_truth(d.truth, cam, config.threads);
        if (g != 1.0f)
            for (auto& v : img.data) v = std::clamp(v * g, 0.0f, 1.0f);
        d.images.push_back(std::move(img));
        d.gains.push_back(g);
    }
    spdlog::info("synthesized {} scene: {} Gaussians, {} views at {}x{}", to_string(config.kind),
                 d.truth.gaussians.size(), d.cameras.size(), config.width, config.height);
    return d;
}

void write_dataset(const SyntheticDataset& data, const io::fs::path& dir) {
    io::save_dataset(dir, data.cameras, data.images, data.aabb);
}

} // namespace pygs::synth
