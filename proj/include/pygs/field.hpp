// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/adam.hpp"
#include "pygs/common.hpp"
#include "pygs/geom.hpp"
#include "pygs/image.hpp"
#include "pygs/nets.hpp"

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace pygs::field {

inline constexpr int kFeatureDim = 8;
inline constexpr int kDirFreqs = 2;
inline constexpr int kHeadHidden = 32;
inline constexpr int kHeadInput = kFeatureDim + geom::positional_encoding_size(kDirFreqs);
inline constexpr double kEscapeOpacity = 0.5;

struct Ray {
    Vec3d origin = Vec3d::Zero();
    Vec3d direction = Vec3d::UnitZ();
    double t_near = 0.0;
    double t_far = 1.0;
};

/// Slab-method intersection of the ray line with the box, clipped to t >= 0.
inline std::optional<std::pair<double, double>> intersect_aabb(const Vec3d& o, const Vec3d& d, const Aabb& box) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double lo = box.min[a], hi = box.max[a];
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo || o[a] > hi) return std::nullopt;
            continue;
        }
        double ta = (lo - o[a]) / d[a], tb = (hi - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (!(t1 > t0)) return std::nullopt;
    return std::make_pair(t0, t1);
}

/// Camera ray through pixel (u, v) clipped to the box, or none if it misses.
inline std::optional<Ray> camera_ray(const geom::Camera& cam, double u, double v, const Aabb& box) {
    Ray r;
    r.origin = cam.center();
    r.direction = cam.ray_direction(u, v);
    const auto hit = intersect_aabb(r.origin, r.direction, box);
    if (!hit) return std::nullopt;
    r.t_near = hit->first;
    r.t_far = hit->second;
    return r;
}

/// Dense vertex grid over an AABB: raw density (softplus at query) and an 8-d feature
/// per vertex, decoded to color by a one-hidden-layer head.
template <typename T> struct VoxelField {
    Aabb aabb;
    int resolution = 0;
    std::vector<T> density;  // raw, resolution^3
    std::vector<T> features; // resolution^3 * kFeatureDim
    nets::Mlp<T> head;

    std::size_t vertex_count() const {
        return static_cast<std::size_t>(resolution) * resolution * resolution;
    }
    std::size_t vertex(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
    }
    Vec3<T> vertex_position(int x, int y, int z) const {
        const std::array<int, 3> idx{x, y, z};
        Vec3<T> p;
        for (int a = 0; a < 3; ++a) {
            const T lo = T(aabb.min[a]), hi = T(aabb.max[a]);
            p[a] = idx[a] == resolution - 1 ? hi : lo + (hi - lo) * T(idx[a]) / T(resolution - 1);
        }
        return p;
    }
    double spacing() const { return static_cast<double>(aabb.extent().maxCoeff()) / (resolution - 1); }

    template <typename Rng>
    static VoxelField create(const Aabb& box, int resolution, Rng& rng, double density_init = -2.0) {
        if (resolution < 2) throw ConfigError("field resolution must be at least 2");
        if (!((box.max - box.min).array() > 0.0f).all()) throw ConfigError("field box must have positive extent");
        VoxelField f;
        f.aabb = box;
        f.resolution = resolution;
        std::normal_distribution<double> nd(0.0, 1.0);
        f.density.resize(f.vertex_count());
        for (auto& v : f.density) v = T(density_init + 0.1 * nd(rng));
        f.features.resize(f.vertex_count() * kFeatureDim);
        for (auto& v : f.features) v = T(0.1 * nd(rng));
        f.head = nets::Mlp<T>::with_hidden(kHeadInput, kHeadHidden, 1, 3);
        f.head.init(rng);
        return f;
    }

    template <typename U> VoxelField<U> cast() const {
        VoxelField<U> f;
        f.aabb = aabb;
        f.resolution = resolution;
        f.density.assign(density.begin(), density.end());
        f.features.assign(features.begin(), features.end());
        f.head = head.template cast<U>();
        return f;
    }
};

template <typename T> struct Trilinear {
    std::array<std::uint32_t, 8> index{};
    std::array<T, 8> weight{};
    bool inside = false;
};

template <typename T> Trilinear<T> locate(const VoxelField<T>& f, const Vec3<T>& x) {
    Trilinear<T> t;
    const int r = f.resolution;
    std::array<int, 3> cell{};
    std::array<T, 3> frac{};
    for (int a = 0; a < 3; ++a) {
        const T lo = T(f.aabb.min[a]), hi = T(f.aabb.max[a]);
        if (!(x[a] >= lo && x[a] <= hi)) return t;
        const T g = (x[a] - lo) / (hi - lo) * T(r - 1);
        cell[a] = std::min(r - 2, static_cast<int>(std::floor(g)));
        frac[a] = g - T(cell[a]);
    }
    t.inside = true;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        t.index[c] = static_cast<std::uint32_t>(f.vertex(cell[0] + dx, cell[1] + dy, cell[2] + dz));
        t.weight[c] = (dx ? frac[0] : T(1) - frac[0]) * (dy ? frac[1] : T(1) - frac[1]) *
                      (dz ? frac[2] : T(1) - frac[2]);
    }
    return t;
}

template <typename T> struct FieldSample {
    Vec3<T> rgb = Vec3<T>::Zero();
    T sigma = T(0);
};

namespace detail {

template <typename T> void head_input(const VoxelField<T>& f, const Trilinear<T>& tri, const Vec3<T>& d, T* col) {
    for (int k = 0; k < kFeatureDim; ++k) col[k] = T(0);
    for (int c = 0; c < 8; ++c) {
        const T* v = &f.features[static_cast<std::size_t>(tri.index[c]) * kFeatureDim];
        for (int k = 0; k < kFeatureDim; ++k) col[k] += tri.weight[c] * v[k];
    }
    const VecX<T> pe = geom::positional_encoding(d, kDirFreqs);
    for (Eigen::Index k = 0; k < pe.size(); ++k) col[kFeatureDim + k] = pe[k];
}

template <typename T> T raw_density(const VoxelField<T>& f, const Trilinear<T>& tri) {
    T raw = T(0);
    for (int c = 0; c < 8; ++c) raw += tri.weight[c] * f.density[tri.index[c]];
    return raw;
}

} // namespace detail

/// Color and density at x seen along d. Outside the box: sigma = 0, rgb = 0.
template <typename T> FieldSample<T> field_query(const VoxelField<T>& f, const Vec3<T>& x, const Vec3<T>& d) {
    FieldSample<T> s;
    const auto tri = locate(f, x);
    if (!tri.inside) return s;
    s.sigma = softplus(detail::raw_density(f, tri));
    MatX<T> in(kHeadInput, 1);
    detail::head_input(f, tri, d, in.data());
    const MatX<T> out = f.head.forward(in);
    for (int a = 0; a < 3; ++a) s.rgb[a] = sigmoid(out(a, 0));
    return s;
}

struct RenderSettings {
    int samples = 64;
    bool jitter = false; // stratified jitter inside each bin; bin midpoints otherwise
    std::uint64_t seed = 0;
    int threads = 1;
    Vec3d background = Vec3d::Zero(); // seen through the remaining transmittance
};

template <typename T> struct RayResult {
    Vec3<T> color = Vec3<T>::Zero();
    T depth = T(0);
    T opacity = T(0);
};

/// Everything the reverse pass needs, per worker chunk.
template <typename T> struct RayBatchCache {
    struct Chunk {
        std::size_t begin = 0, end = 0;
        std::vector<Trilinear<T>> tri;      // rays x samples
        std::vector<T> t, delta, sigma, raw; // rays x samples
        std::vector<Vec3<T>> rgb;           // rays x samples
        std::vector<std::int32_t> column;   // head column per sample, -1 outside
        typename nets::Mlp<T>::Cache mlp;
        MatX<T> head_out; // 3 x columns, pre-sigmoid
    };
    std::vector<Chunk> chunks;
    int samples = 0;
    Vec3<T> background = Vec3<T>::Zero();
};

/// Volume-renders a batch of rays. Sample i of a ray sits in bin
/// [t_near + i*delta, t_near + (i+1)*delta]; alpha_i = 1 - exp(-sigma_i * delta).
template <typename T>
std::vector<RayResult<T>> render_rays(const VoxelField<T>& f, const std::vector<Ray>& rays, const RenderSettings& rs,
                                      RayBatchCache<T>* cache = nullptr) {
    if (rs.samples < 2) throw std::invalid_argument("volume rendering needs at least 2 samples per ray");
    const int ns = rs.samples;
    std::vector<RayResult<T>> results(rays.size());
    const int workers = std::max(1, std::min<int>(rs.threads, static_cast<int>(rays.size())));
    std::vector<typename RayBatchCache<T>::Chunk> local(workers);
    const Vec3<T> bg = rs.background.cast<T>();
    if (cache) {
        cache->samples = ns;
        cache->background = bg;
    }
    parallel_for(rays.size(), workers, [&](std::size_t b, std::size_t e, int w) {
        auto& ch = local[w];
        ch.begin = b;
        ch.end = e;
        const std::size_t count = (e - b) * ns;
        ch.tri.assign(count, Trilinear<T>());
        ch.t.assign(count, T(0));
        ch.delta.assign(count, T(0));
        ch.sigma.assign(count, T(0));
        ch.raw.assign(count, T(0));
        ch.rgb.assign(count, Vec3<T>::Zero());
        ch.column.assign(count, -1);
        std::size_t columns = 0;
        for (std::size_t r = b; r < e; ++r) {
            const Ray& ray = rays[r];
            std::mt19937_64 rng(rs.seed ^ (0x9E3779B97F4A7C15ull * (r + 1)));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const double delta = (ray.t_far - ray.t_near) / ns;
            const Vec3<T> o = ray.origin.cast<T>(), d = ray.direction.cast<T>();
            for (int i = 0; i < ns; ++i) {
                const std::size_t s = (r - b) * ns + i;
                const double off = rs.jitter ? u(rng) : 0.5;
                ch.t[s] = T(ray.t_near + (i + off) * delta);
                ch.delta[s] = T(delta);
                ch.tri[s] = locate(f, Vec3<T>(o + ch.t[s] * d));
                if (ch.tri[s].inside) ch.column[s] = static_cast<std::int32_t>(columns++);
            }
        }
        MatX<T> in(kHeadInput, static_cast<Eigen::Index>(columns));
        for (std::size_t r = b; r < e; ++r) {
            const Vec3<T> d = rays[r].direction.cast<T>();
            for (int i = 0; i < ns; ++i) {
                const std::size_t s = (r - b) * ns + i;
                if (ch.column[s] < 0) continue;
                ch.raw[s] = detail::raw_density(f, ch.tri[s]);
                ch.sigma[s] = softplus(ch.raw[s]);
                detail::head_input(f, ch.tri[s], d, in.col(ch.column[s]).data());
            }
        }
        ch.head_out = f.head.forward(in, cache ? &ch.mlp : nullptr);
        for (std::size_t r = b; r < e; ++r) {
            RayResult<T>& out = results[r];
            T tr = T(1), depth = T(0);
            for (int i = 0; i < ns; ++i) {
                const std::size_t s = (r - b) * ns + i;
                if (ch.column[s] < 0) continue;
                for (int a = 0; a < 3; ++a) ch.rgb[s][a] = sigmoid(ch.head_out(a, ch.column[s]));
                const T alpha = T(1) - std::exp(-ch.sigma[s] * ch.delta[s]);
                const T wgt = tr * alpha;
                out.color += wgt * ch.rgb[s];
                depth += wgt * ch.t[s];
                out.opacity += wgt;
                tr *= T(1) - alpha;
            }
            out.color += tr * bg;
            out.depth = depth / std::max(out.opacity, T(1e-8));
        }
    });
    if (cache) cache->chunks = std::move(local);
    return results;
}

template <typename T> struct FieldGradients {
    std::vector<T> density;
    std::vector<T> features;
    std::vector<T> head;

    void reset(const VoxelField<T>& f) {
        density.assign(f.density.size(), T(0));
        features.assign(f.features.size(), T(0));
        head.assign(f.head.params().size(), T(0));
    }
};

/// Reverse pass of render_rays for d(loss)/d(color) per ray. The depth and opacity outputs
/// carry no gradient. Scattering to the grid happens serially in ray order, so the result
/// does not depend on scheduling.
template <typename T>
void render_rays_backward(const VoxelField<T>& f, const RayBatchCache<T>& cache, const std::vector<Vec3<T>>& dcolor,
                          FieldGradients<T>& grads) {
    const int ns = cache.samples;
    if (grads.density.size() != f.density.size()) grads.reset(f);
    for (const auto& ch : cache.chunks) {
        MatX<T> dout = MatX<T>::Zero(3, ch.head_out.cols());
        std::vector<T> draw(ch.t.size(), T(0));
        for (std::size_t r = ch.begin; r < ch.end; ++r) {
            std::vector<T> alpha(ns, T(0)), trans(ns);
            T tr = T(1);
            for (int i = 0; i < ns; ++i) {
                const std::size_t s = (r - ch.begin) * ns + i;
                trans[i] = tr;
                if (ch.column[s] < 0) continue;
                alpha[i] = T(1) - std::exp(-ch.sigma[s] * ch.delta[s]);
                tr *= T(1) - alpha[i];
            }
            // dC/dalpha_i = T_i (c_i - S_i), S_i = sum_{j>i} prod_{i<k<j}(1 - alpha_k) alpha_j c_j
            // plus the background behind the last sample.
            const Vec3<T>& dc = dcolor[r];
            Vec3<T> suffix = cache.background;
            for (int i = ns - 1; i >= 0; --i) {
                const std::size_t s = (r - ch.begin) * ns + i;
                if (ch.column[s] < 0) continue;
                const T dalpha = trans[i] * dc.dot(ch.rgb[s] - suffix);
                draw[s] = dalpha * ch.delta[s] * (T(1) - alpha[i]) * sigmoid(ch.raw[s]);
                const T w = trans[i] * alpha[i];
                for (int a = 0; a < 3; ++a) {
                    const T c = ch.rgb[s][a];
                    dout(a, ch.column[s]) = w * dc[a] * c * (T(1) - c);
                }
                suffix = alpha[i] * ch.rgb[s] + (T(1) - alpha[i]) * suffix;
            }
        }
        const MatX<T> din = f.head.backward(ch.mlp, dout, std::span<T>(grads.head));
        for (std::size_t s = 0; s < ch.t.size(); ++s) {
            if (ch.column[s] < 0) continue;
            const auto& tri = ch.tri[s];
            for (int c = 0; c < 8; ++c) {
                grads.density[tri.index[c]] += tri.weight[c] * draw[s];
                T* g = &grads.features[static_cast<std::size_t>(tri.index[c]) * kFeatureDim];
                for (int k = 0; k < kFeatureDim; ++k) g[k] += tri.weight[c] * din(k, ch.column[s]);
            }
        }
    }
}

template <typename T> RayResult<T> volume_render_ray(const VoxelField<T>& f, const Ray& ray, int n_samples) {
    RenderSettings rs;
    rs.samples = n_samples;
    return render_rays(f, std::vector<Ray>{ray}, rs).front();
}

/// Expected depth along the ray, or none when the ray mostly escapes (opacity < 0.5).
template <typename T> std::optional<T> estimate_termination(const VoxelField<T>& f, const Ray& ray, int n_samples = 128) {
    const auto r = volume_render_ray(f, ray, n_samples);
    if (!(r.opacity >= T(kEscapeOpacity))) return std::nullopt;
    return r.depth;
}

struct FieldTrainConfig {
    int resolution = 128;
    int steps = 5000;
    int rays_per_batch = 4096;
    int samples = 64;
    double grid_lr = 1e-2;
    double head_lr = 1e-3;
    std::uint64_t seed = 0;
    int threads = 1;
    Vec3d background = Vec3d::Zero();
};

struct FieldTrainReport {
    double final_loss = 0.0;
    int steps = 0;
};

/// Fits a field to posed images by MSE on random ray batches (Adam). `progress` is called
/// with (step, batch loss) after every step. Throws NumericalError if the loss diverges.
VoxelField<float> train_field(const std::vector<geom::Camera>& cameras, const std::vector<Image<float>>& images,
                              const Aabb& box, const FieldTrainConfig& config,
                              const std::function<void(int, double)>& progress = {},
                              FieldTrainReport* report = nullptr);

} // namespace pygs::field
