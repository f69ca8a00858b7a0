// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"
#include "pygs/geom.hpp"
#include "pygs/nets.hpp"
#include "pygs/splat.hpp"

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace pygs {

enum class WeightingMode : std::uint8_t { Learned = 0, Uniform = 1, Random = 2, Top1 = 3 };

std::string_view to_string(WeightingMode m);
WeightingMode weighting_mode_from_string(std::string_view s);

inline constexpr int kShRestCoeffs = geom::kShCoeffs - 1;

/// Structure-of-arrays Gaussian storage. Float attributes are stored in optimizer-ready
/// raw form (log-scale, opacity logit, raw quaternion).
template <typename T> struct GaussianSet {
    std::vector<T> positions;      // 3 per Gaussian
    std::vector<T> rotations;      // 4 per Gaussian, (w, x, y, z)
    std::vector<T> log_scales;     // 3 per Gaussian
    std::vector<T> opacity_logits; // 1 per Gaussian
    std::vector<T> sh_dc;          // 3 per Gaussian
    std::vector<T> sh_rest;        // 45 per Gaussian: coefficient-major, 3 channels each
    std::vector<std::uint8_t> levels;
    std::vector<std::uint32_t> clusters;

    std::size_t size() const { return opacity_logits.size(); }
    bool empty() const { return opacity_logits.empty(); }

    /// Visits every float attribute with its per-Gaussian width.
    template <typename Fn> void for_each_attribute(Fn&& fn) {
        fn(positions, 3);
        fn(rotations, 4);
        fn(log_scales, 3);
        fn(opacity_logits, 1);
        fn(sh_dc, 3);
        fn(sh_rest, 3 * kShRestCoeffs);
    }
    template <typename Fn> void for_each_attribute(Fn&& fn) const {
        fn(positions, 3);
        fn(rotations, 4);
        fn(log_scales, 3);
        fn(opacity_logits, 1);
        fn(sh_dc, 3);
        fn(sh_rest, 3 * kShRestCoeffs);
    }

    void resize(std::size_t n) {
        for_each_attribute([n](std::vector<T>& v, int width) { v.resize(n * width, T(0)); });
        levels.resize(n, 1);
        clusters.resize(n, 0);
    }

    Vec3<T> position(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
    Vec4<T> rotation(std::size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }
    Vec3<T> log_scale(std::size_t i) const {
        return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
    }
    T max_scale(std::size_t i) const {
        return std::exp(std::max({log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]}));
    }
    T opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }

    void sh_coeffs(std::size_t i, Vec3<T>* out) const {
        out[0] = {sh_dc[3 * i], sh_dc[3 * i + 1], sh_dc[3 * i + 2]};
        const T* r = &sh_rest[3 * kShRestCoeffs * i];
        for (int k = 0; k < kShRestCoeffs; ++k) out[k + 1] = {r[3 * k], r[3 * k + 1], r[3 * k + 2]};
    }

    geom::Gaussian<T> get(std::size_t i) const {
        geom::Gaussian<T> g;
        g.position = position(i);
        g.rotation = rotation(i);
        g.log_scale = log_scale(i);
        g.opacity_logit = opacity_logits[i];
        sh_coeffs(i, g.sh.data());
        g.level = levels[i];
        g.cluster = static_cast<int>(clusters[i]);
        return g;
    }

    void set(std::size_t i, const geom::Gaussian<T>& g) {
        for (int a = 0; a < 3; ++a) {
            positions[3 * i + a] = g.position[a];
            log_scales[3 * i + a] = g.log_scale[a];
            sh_dc[3 * i + a] = g.sh[0][a];
        }
        for (int a = 0; a < 4; ++a) rotations[4 * i + a] = g.rotation[a];
        opacity_logits[i] = g.opacity_logit;
        for (int k = 0; k < kShRestCoeffs; ++k)
            for (int a = 0; a < 3; ++a) sh_rest[3 * kShRestCoeffs * i + 3 * k + a] = g.sh[k + 1][a];
        levels[i] = static_cast<std::uint8_t>(g.level);
        clusters[i] = static_cast<std::uint32_t>(g.cluster);
    }

    void push_back(const geom::Gaussian<T>& g) {
        resize(size() + 1);
        set(size() - 1, g);
    }

    /// Keeps the listed Gaussians, in the listed order (indices may repeat).
    GaussianSet select(const std::vector<std::uint32_t>& idx) const {
        GaussianSet out;
        out.resize(idx.size());
        std::size_t attr = 0;
        std::vector<const std::vector<T>*> srcs;
        for_each_attribute([&](const std::vector<T>& v, int) { srcs.push_back(&v); });
        out.for_each_attribute([&](std::vector<T>& v, int width) {
            const std::vector<T>& s = *srcs[attr++];
            for (std::size_t j = 0; j < idx.size(); ++j)
                std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(idx[j]) * width, width,
                            v.begin() + static_cast<std::ptrdiff_t>(j) * width);
        });
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out.levels[j] = levels[idx[j]];
            out.clusters[j] = clusters[idx[j]];
        }
        return out;
    }

    void append(const GaussianSet& other) {
        std::vector<const std::vector<T>*> srcs;
        other.for_each_attribute([&](const std::vector<T>& v, int) { srcs.push_back(&v); });
        std::size_t attr = 0;
        for_each_attribute([&](std::vector<T>& v, int) {
            const auto& s = *srcs[attr++];
            v.insert(v.end(), s.begin(), s.end());
        });
        levels.insert(levels.end(), other.levels.begin(), other.levels.end());
        clusters.insert(clusters.end(), other.clusters.begin(), other.clusters.end());
    }

    template <typename U> GaussianSet<U> cast() const {
        GaussianSet<U> out;
        std::vector<std::vector<U>*> dsts;
        out.for_each_attribute([&](std::vector<U>& v, int) { dsts.push_back(&v); });
        std::size_t attr = 0;
        for_each_attribute([&](const std::vector<T>& v, int) {
            auto& d = *dsts[attr++];
            d.assign(v.size(), U(0));
            for (std::size_t i = 0; i < v.size(); ++i) d[i] = static_cast<U>(v[i]);
        });
        out.levels = levels;
        out.clusters = clusters;
        return out;
    }
};

/// The full pyramidal scene: Gaussians tagged with level and cluster, the cluster
/// table, embeddings and both networks.
template <typename T> struct Model {
    GaussianSet<T> gaussians;
    int levels = 3;
    int sh_degree = geom::kMaxShDegree;
    std::vector<Vec3f> centroids;
    nets::Embeddings<T> embeddings;
    nets::Mlp<T> weighting;
    nets::Mlp<T> correction;
    Aabb scene_aabb;
    float scene_extent = 1.0f;
    WeightingMode weighting_mode = WeightingMode::Learned;
    bool color_correction = true;

    int clusters() const { return static_cast<int>(embeddings.cluster.rows()); }
    int cameras() const { return static_cast<int>(embeddings.appearance.rows()); }

    template <typename U> Model<U> cast() const {
        Model<U> m;
        m.gaussians = gaussians.template cast<U>();
        m.levels = levels;
        m.sh_degree = sh_degree;
        m.centroids = centroids;
        m.embeddings.cluster = embeddings.cluster.template cast<U>();
        m.embeddings.appearance = embeddings.appearance.template cast<U>();
        m.weighting = weighting.template cast<U>();
        m.correction = correction.template cast<U>();
        m.scene_aabb = scene_aabb;
        m.scene_extent = scene_extent;
        m.weighting_mode = weighting_mode;
        m.color_correction = color_correction;
        return m;
    }
};

inline std::uint32_t all_levels_mask(int levels) { return levels >= 32 ? ~0u : ((1u << levels) - 1u); }

struct ViewOptions {
    int active_sh_degree = geom::kMaxShDegree;
    Vec3f background = Vec3f::Zero();
    // Appearance row: -2 uses the camera's own index (mean row when it has none), -1 forces the mean row.
    int appearance = -2;
    bool color_correction = true; // combined with the model setting
    std::uint32_t enabled_levels = ~0u;
    bool plain = false; // plain compositing: w = 1, no correction
    std::uint64_t random_seed = 0;
    int threads = 1;
};

/// Everything the backward pass needs from one forward render.
template <typename T> struct Frame {
    splat::RenderJob<T> job;
    splat::RenderOutput<T> output;
    geom::Camera camera;
    WeightingMode mode = WeightingMode::Learned;
    bool corrected = false;
    bool learned_weights = false; // weight table came from the weighting network
    int appearance_row = -1;
    int active_sh_degree = 0;
    std::uint32_t enabled_levels = ~0u;
    nets::WeightingCache<T> weighting_cache;
    nets::CorrectionCache<T> correction_cache;
    MatX<T> correction; // 3 x K
    std::vector<Vec3<T>> sh_rgb; // unclamped SH color per Gaussian
};

template <typename T> struct ModelGradients {
    GaussianSet<T> gaussians; // same layout as the model's Gaussians
    MatX<T> cluster_embedding;
    MatX<T> appearance_embedding;
    std::vector<T> weighting;
    std::vector<T> correction;
    std::vector<T> screen_grad_norm; // |d loss / d mean2d| in normalized device units, per Gaussian
};

template <typename T> Vec3<T> normalized_camera_center(const Model<T>& model, const geom::Camera& cam) {
    return model.scene_aabb.normalize(Vec3<T>(cam.center().template cast<T>()));
}

/// Level-weight table (K x L) for a camera under the model's weighting mode.
template <typename T>
MatX<T> level_weight_table(const Model<T>& model, const geom::Camera& cam, WeightingMode mode,
                           std::uint64_t random_seed, nets::WeightingCache<T>* cache) {
    const int k = model.clusters(), l = model.levels;
    MatX<T> table(k, l);
    switch (mode) {
    case WeightingMode::Uniform: table.setOnes(); break;
    case WeightingMode::Random: {
        std::mt19937_64 rng(random_seed);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        VecX<T> w(l);
        for (int i = 0; i < l; ++i) w[i] = T(dist(rng));
        w /= w.sum();
        table = w.transpose().replicate(k, 1);
        break;
    }
    case WeightingMode::Learned:
    case WeightingMode::Top1: {
        const MatX<T> soft =
            nets::weighting_forward(model.weighting, model.embeddings.cluster, normalized_camera_center(model, cam), cache);
        table = soft.transpose();
        if (mode == WeightingMode::Top1) {
            for (int r = 0; r < k; ++r) {
                Eigen::Index best;
                table.row(r).maxCoeff(&best);
                table.row(r).setZero();
                table(r, best) = T(1);
            }
        }
        break;
    }
    }
    return table;
}

/// Forward render of one view. The returned frame keeps what render_backward needs.
template <typename T> Frame<T> render_frame(const Model<T>& model, const geom::Camera& cam, const ViewOptions& opt) {
    Frame<T> f;
    f.camera = cam;
    f.mode = model.weighting_mode;
    f.active_sh_degree = std::clamp(opt.active_sh_degree, 0, model.sh_degree);
    f.enabled_levels = opt.enabled_levels & all_levels_mask(model.levels);
    const bool plain = opt.plain;
    f.corrected = !plain && opt.color_correction && model.color_correction && model.clusters() > 0;
    f.appearance_row = opt.appearance == -2 ? cam.index : opt.appearance;
    if (f.appearance_row >= model.cameras()) f.appearance_row = -1;

    auto& job = f.job;
    job.width = cam.width;
    job.height = cam.height;
    job.levels = model.levels;
    job.background = opt.background.cast<T>();
    job.threads = opt.threads;
    job.plain = plain;
    if (!plain) {
        job.weights = level_weight_table(model, cam, f.mode, opt.random_seed, &f.weighting_cache);
        f.learned_weights =
            (f.mode == WeightingMode::Learned || f.mode == WeightingMode::Top1) && model.clusters() > 0;
        for (int l = 0; l < model.levels; ++l)
            if (!(f.enabled_levels & (1u << l))) job.weights.col(l).setZero();
    } else if (f.enabled_levels != all_levels_mask(model.levels)) {
        job.plain = false;
        job.weights = MatX<T>::Ones(std::max(1, model.clusters()), model.levels);
        for (int l = 0; l < model.levels; ++l)
            if (!(f.enabled_levels & (1u << l))) job.weights.col(l).setZero();
    }
    if (f.corrected) {
        const VecX<T> app = f.appearance_row >= 0 ? VecX<T>(model.embeddings.appearance.row(f.appearance_row).transpose())
                                                  : model.embeddings.mean_appearance();
        f.correction = nets::color_correction(model.correction, model.embeddings.cluster, app, &f.correction_cache);
    }

    const auto& gs = model.gaussians;
    const std::size_t n = gs.size();
    auto& in = job.gaussians;
    in.resize(n);
    f.sh_rgb.assign(n, Vec3<T>::Zero());
    const Vec3<T> eye = cam.center().template cast<T>();
    parallel_for(n, opt.threads, [&](std::size_t b, std::size_t e, int) {
        std::array<Vec3<T>, geom::kShCoeffs> coeffs;
        for (std::size_t i = b; i < e; ++i) {
            in.level[i] = gs.levels[i];
            in.cluster[i] = static_cast<int>(gs.clusters[i]);
            const Vec3<T> p = gs.position(i);
            const auto proj = geom::project(p, geom::build_covariance(gs.rotation(i), gs.log_scale(i)), cam);
            in.depth[i] = proj.depth;
            if (!proj.valid) continue;
            in.valid[i] = 1;
            in.mean2d[i] = proj.mean2d;
            in.cov2d[i] = proj.cov2d;
            in.radius[i] = proj.radius;
            in.opacity[i] = gs.opacity(i);
            gs.sh_coeffs(i, coeffs.data());
            const Vec3<T> dir = (p - eye).normalized();
            const Vec3<T> rgb = geom::eval_sh(coeffs.data(), f.active_sh_degree, dir);
            f.sh_rgb[i] = rgb;
            Vec3<T> c = rgb.cwiseMax(T(0));
            if (f.corrected) c += f.correction.col(gs.clusters[i]);
            in.color[i] = c;
        }
    });
    f.output = splat::render_forward(job);
    return f;
}

/// Reverse pass of render_frame given d(loss)/d(rendered color).
template <typename T>
ModelGradients<T> render_frame_backward(const Model<T>& model, const Frame<T>& f, const Image<T>& dcolor) {
    const auto sg = splat::render_backward(f.job, f.output, dcolor);
    const auto& gs = model.gaussians;
    const auto& cam = f.camera;
    const std::size_t n = gs.size();
    const int k = model.clusters(), levels = model.levels;

    ModelGradients<T> out;
    out.gaussians.resize(n);
    out.gaussians.levels = gs.levels;
    out.gaussians.clusters = gs.clusters;
    out.cluster_embedding = MatX<T>::Zero(model.embeddings.cluster.rows(), model.embeddings.cluster.cols());
    out.appearance_embedding = MatX<T>::Zero(model.embeddings.appearance.rows(), model.embeddings.appearance.cols());
    out.weighting.assign(model.weighting.params().size(), T(0));
    out.correction.assign(model.correction.params().size(), T(0));
    out.screen_grad_norm.assign(n, T(0));

    const Vec3<T> eye = cam.center().template cast<T>();
    const T half_w = T(0.5) * T(cam.width), half_h = T(0.5) * T(cam.height);
    auto& g = out.gaussians;
    parallel_for(n, f.job.threads, [&](std::size_t b, std::size_t e, int) {
        std::array<Vec3<T>, geom::kShCoeffs> coeffs, dcoeffs;
        for (std::size_t i = b; i < e; ++i) {
            if (!f.job.gaussians.valid[i]) continue;
            const Vec3<T> p = gs.position(i);
            const Vec4<T> q = gs.rotation(i);
            const Vec3<T> ls = gs.log_scale(i);
            Vec3<T> dp = Vec3<T>::Zero();

            // color: c' = max(sh, 0) + dc
            Vec3<T> drgb = sg.color[i];
            for (int a = 0; a < 3; ++a)
                if (!(f.sh_rgb[i][a] > T(0))) drgb[a] = T(0);
            gs.sh_coeffs(i, coeffs.data());
            dcoeffs.fill(Vec3<T>::Zero());
            const Vec3<T> v = p - eye;
            const T vn = v.norm();
            const Vec3<T> dir = v / vn;
            Vec3<T> ddir;
            geom::eval_sh_backward(coeffs.data(), f.active_sh_degree, dir, drgb, dcoeffs.data(), ddir);
            dp += (ddir - dir * dir.dot(ddir)) / vn;
            for (int a = 0; a < 3; ++a) g.sh_dc[3 * i + a] = dcoeffs[0][a];
            for (int c = 0; c < kShRestCoeffs; ++c)
                for (int a = 0; a < 3; ++a) g.sh_rest[3 * kShRestCoeffs * i + 3 * c + a] = dcoeffs[c + 1][a];

            const T alpha = f.job.gaussians.opacity[i];
            g.opacity_logits[i] = sg.opacity[i] * alpha * (T(1) - alpha);

            const Mat3<T> cov3 = geom::build_covariance(q, ls);
            Mat3<T> dcov3 = Mat3<T>::Zero();
            geom::project_backward(p, cov3, cam, sg.mean2d[i], sg.cov2d[i], dp, dcov3);
            Vec4<T> dq;
            Vec3<T> dls;
            geom::build_covariance_backward(q, ls, dcov3, dq, dls);
            for (int a = 0; a < 3; ++a) {
                g.positions[3 * i + a] = dp[a];
                g.log_scales[3 * i + a] = dls[a];
            }
            for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] = dq[a];
            out.screen_grad_norm[i] = Vec2<T>(sg.mean2d[i].x() * half_w, sg.mean2d[i].y() * half_h).norm();
        }
    });

    // Per-cluster reductions in Gaussian order (deterministic).
    const bool learned = f.learned_weights;
    MatX<T> dtable = MatX<T>::Zero(std::max(k, 1), levels);
    MatX<T> dcorr = MatX<T>::Zero(3, std::max(k, 1));
    for (std::size_t i = 0; i < n; ++i) {
        if (!f.job.gaussians.valid[i]) continue;
        const int c = static_cast<int>(gs.clusters[i]);
        if (learned) dtable(c, gs.levels[i] - 1) += sg.weight[i];
        if (f.corrected) dcorr.col(c) += sg.color[i];
    }
    if (learned) {
        // Disabled levels are forced to zero and carry no gradient. Top-1 passes the
        // gradient straight through to the softmax weights.
        for (int l = 0; l < levels; ++l)
            if (!(f.enabled_levels & (1u << l))) dtable.col(l).setZero();
        nets::weighting_backward(model.weighting, f.weighting_cache, MatX<T>(dtable.transpose()), std::span<T>(out.weighting),
                                 out.cluster_embedding);
    }
    if (f.corrected) {
        VecX<T> dapp = VecX<T>::Zero(model.embeddings.cluster.cols());
        nets::color_correction_backward(model.correction, f.correction_cache, dcorr, std::span<T>(out.correction),
                                        out.cluster_embedding, dapp);
        if (f.appearance_row >= 0) {
            out.appearance_embedding.row(f.appearance_row) += dapp.transpose();
        } else if (model.cameras() > 0) {
            for (int r = 0; r < model.cameras(); ++r)
                out.appearance_embedding.row(r) += dapp.transpose() / T(model.cameras());
        }
    }
    return out;
}

} // namespace pygs
