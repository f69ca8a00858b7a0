// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"
#include "pygs/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace pygs::splat {

inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kCutoffMahalanobis = 9.0; // 3 sigma
inline constexpr int kDefaultTileSize = 8;

/// Screen-space attributes of every Gaussian for one view.
template <typename T> struct SplatInputs {
    std::vector<Vec2<T>> mean2d;
    std::vector<Mat2<T>> cov2d;
    std::vector<T> depth;
    std::vector<T> radius;
    std::vector<std::uint8_t> valid;
    std::vector<Vec3<T>> color; // corrected color c' = max(c, 0) + dc
    std::vector<T> opacity;
    std::vector<int> level;   // 1-based
    std::vector<int> cluster; // row of the weight table

    std::size_t size() const { return mean2d.size(); }
    void resize(std::size_t n) {
        mean2d.assign(n, Vec2<T>::Zero());
        cov2d.assign(n, Mat2<T>::Identity());
        depth.assign(n, T(0));
        radius.assign(n, T(0));
        valid.assign(n, 0);
        color.assign(n, Vec3<T>::Zero());
        opacity.assign(n, T(0));
        level.assign(n, 1);
        cluster.assign(n, 0);
    }
};

template <typename T> struct RenderJob {
    int width = 0;
    int height = 0;
    int levels = 1;
    Vec3<T> background = Vec3<T>::Zero();
    bool plain = false; // plain compositing: every level weight is 1
    MatX<T> weights;    // clusters x levels, used unless `plain`
    SplatInputs<T> gaussians;
    int tile_size = kDefaultTileSize;
    int threads = 1;

    T weight_of(std::size_t i) const {
        if (plain) return T(1);
        return weights(gaussians.cluster[i], gaussians.level[i] - 1);
    }
};

/// Per-pixel state retained for the backward pass.
struct RenderCache {
    std::vector<std::uint32_t> order;                   // depth-sorted valid Gaussians
    std::vector<std::vector<std::uint32_t>> tile_lists; // per tile, in depth order
    std::vector<std::uint32_t> last;                    // per pixel: entries of its tile list consumed
    int tiles_x = 0;
    int tiles_y = 0;
    int tile_size = kDefaultTileSize;
};

template <typename T> struct RenderOutput {
    Image<T> color;              // H x W x 3, clamped to [0, 1]
    Image<T> alpha;              // H x W x 1, accumulated opacity
    Image<T> level_mass;         // H x W x L, sum of a_i T_i per level
    Image<std::uint8_t> dominant; // H x W x 1, argmax level (1-based), 0 where nothing was drawn
    RenderCache cache;
};

template <typename T> struct SplatGradients {
    std::vector<Vec2<T>> mean2d;
    std::vector<Mat2<T>> cov2d;
    std::vector<Vec3<T>> color;
    std::vector<T> opacity;
    std::vector<T> weight; // d loss / d w_{k_i}[l_i] for each Gaussian

    void resize(std::size_t n) {
        mean2d.assign(n, Vec2<T>::Zero());
        cov2d.assign(n, Mat2<T>::Zero());
        color.assign(n, Vec3<T>::Zero());
        opacity.assign(n, T(0));
        weight.assign(n, T(0));
    }
};

/// Stable ascending depth order of the valid Gaussians.
template <typename T> std::vector<std::uint32_t> sort_gaussians(const SplatInputs<T>& g) {
    std::vector<std::uint32_t> order;
    order.reserve(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g.valid[i]) order.push_back(static_cast<std::uint32_t>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return g.depth[a] < g.depth[b]; });
    return order;
}

/// Assigns each Gaussian (in `order`) to every tile overlapped by the bounding box of its
/// 3-sigma ellipse (padded by one pixel).
template <typename T>
std::vector<std::vector<std::uint32_t>> tile_bin(const SplatInputs<T>& g, const std::vector<std::uint32_t>& order,
                                                 int width, int height, int tile_size, int* tiles_x_out = nullptr,
                                                 int* tiles_y_out = nullptr) {
    const int tx = (width + tile_size - 1) / tile_size;
    const int ty = (height + tile_size - 1) / tile_size;
    if (tiles_x_out) *tiles_x_out = tx;
    if (tiles_y_out) *tiles_y_out = ty;
    std::vector<std::vector<std::uint32_t>> lists(static_cast<std::size_t>(tx) * ty);
    for (std::uint32_t i : order) {
        const double sigma = std::sqrt(kCutoffMahalanobis);
        const double rx = std::min(static_cast<double>(g.radius[i]), sigma * std::sqrt(static_cast<double>(g.cov2d[i](0, 0)))) + 1.0;
        const double ry = std::min(static_cast<double>(g.radius[i]), sigma * std::sqrt(static_cast<double>(g.cov2d[i](1, 1)))) + 1.0;
        const double mx = static_cast<double>(g.mean2d[i].x());
        const double my = static_cast<double>(g.mean2d[i].y());
        const int x0 = std::max(0, static_cast<int>(std::floor((mx - rx) / tile_size)));
        const int x1 = std::min(tx - 1, static_cast<int>(std::floor((mx + rx) / tile_size)));
        const int y0 = std::max(0, static_cast<int>(std::floor((my - ry) / tile_size)));
        const int y1 = std::min(ty - 1, static_cast<int>(std::floor((my + ry) / tile_size)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) lists[static_cast<std::size_t>(y) * tx + x].push_back(i);
    }
    return lists;
}

namespace detail {

// Everything compositing reads about one Gaussian, packed so a tile walks memory linearly.
template <typename T> struct Splat {
    T mx, my;
    T qxx, qxy, qyy; // conic (inverse covariance)
    T wo;            // level weight times opacity
    T w, opacity;
    Vec3<T> color;
    int level;
};

template <typename T> std::vector<Splat<T>> make_splats(const RenderJob<T>& job) {
    const auto& g = job.gaussians;
    std::vector<Splat<T>> s(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g.valid[i]) continue;
        const Mat2<T>& c = g.cov2d[i];
        const T det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        s[i].mx = g.mean2d[i].x();
        s[i].my = g.mean2d[i].y();
        s[i].qxx = c(1, 1) / det;
        s[i].qxy = -c(0, 1) / det;
        s[i].qyy = c(0, 0) / det;
        s[i].w = job.weight_of(i);
        s[i].opacity = g.opacity[i];
        s[i].wo = s[i].w * s[i].opacity;
        s[i].color = g.color[i];
        s[i].level = g.level[i];
    }
    return s;
}

template <typename T>
void gather(const std::vector<Splat<T>>& splats, const std::vector<std::uint32_t>& list, std::vector<Splat<T>>& out) {
    out.resize(list.size());
    for (std::size_t j = 0; j < list.size(); ++j) out[j] = splats[list[j]];
}

// Composites one pixel over `n` packed splats. Returns the number of entries consumed.
template <typename T>
std::uint32_t composite_pixel(const Splat<T>* splats, std::uint32_t n, T px, T py, Vec3<T>& color, T& transmittance,
                              T* mass) {
    const T max_alpha = T(kMaxAlpha), min_t = T(kMinTransmittance), cutoff = T(kCutoffMahalanobis);
    T tr = T(1);
    Vec3<T> c = Vec3<T>::Zero();
    std::uint32_t consumed = 0;
    for (std::uint32_t j = 0; j < n; ++j) {
        const Splat<T>& s = splats[j];
        const T dx = px - s.mx, dy = py - s.my;
        const T maha = s.qxx * dx * dx + T(2) * s.qxy * dx * dy + s.qyy * dy * dy;
        if (maha > cutoff || !(maha >= T(0))) {
            consumed = j + 1;
            continue;
        }
        const T a = std::min(max_alpha, s.wo * std::exp(T(-0.5) * maha));
        const T next = tr * (T(1) - a);
        if (next < min_t) break;
        c += s.color * (a * tr);
        if (mass) mass[s.level - 1] += a * tr;
        tr = next;
        consumed = j + 1;
    }
    color = c;
    transmittance = tr;
    return consumed;
}

template <typename T>
void finish_pixel(const RenderJob<T>& job, RenderOutput<T>& out, int x, int y, const Vec3<T>& c, T tr,
                  const T* mass) {
    for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = std::clamp(c[ch] + tr * job.background[ch], T(0), T(1));
    out.alpha.at(x, y) = T(1) - tr;
    int best = 0;
    T best_mass = T(0);
    for (int l = 0; l < job.levels; ++l) {
        out.level_mass.at(x, y, l) = mass[l];
        if (mass[l] > best_mass) {
            best_mass = mass[l];
            best = l + 1;
        }
    }
    out.dominant.at(x, y) = static_cast<std::uint8_t>(best);
}

template <typename T> RenderOutput<T> allocate_output(const RenderJob<T>& job) {
    RenderOutput<T> out;
    out.color = Image<T>(job.width, job.height, 3);
    out.alpha = Image<T>(job.width, job.height, 1);
    out.level_mass = Image<T>(job.width, job.height, job.levels);
    out.dominant = Image<std::uint8_t>(job.width, job.height, 1);
    return out;
}

} // namespace detail

/// Front-to-back compositing of the job, tiled. Fills the color image, aux buffers and
/// the cache needed by render_backward.
template <typename T> RenderOutput<T> render_forward(const RenderJob<T>& job) {
    if (job.width <= 0 || job.height <= 0) throw std::invalid_argument("render: empty image");
    RenderOutput<T> out = detail::allocate_output(job);
    RenderCache& cache = out.cache;
    cache.tile_size = job.tile_size;
    cache.order = sort_gaussians(job.gaussians);
    cache.tile_lists = tile_bin(job.gaussians, cache.order, job.width, job.height, job.tile_size, &cache.tiles_x,
                                &cache.tiles_y);
    cache.last.assign(static_cast<std::size_t>(job.width) * job.height, 0);
    const auto splats = detail::make_splats(job);

    const std::size_t tiles = cache.tile_lists.size();
    parallel_for(tiles, job.threads, [&](std::size_t b, std::size_t e, int) {
        std::vector<T> mass(job.levels);
        std::vector<detail::Splat<T>> packed;
        for (std::size_t t = b; t < e; ++t) {
            const int tx = static_cast<int>(t % cache.tiles_x), ty = static_cast<int>(t / cache.tiles_x);
            detail::gather(splats, cache.tile_lists[t], packed);
            const auto n = static_cast<std::uint32_t>(packed.size());
            for (int y = ty * job.tile_size; y < std::min(job.height, (ty + 1) * job.tile_size); ++y)
                for (int x = tx * job.tile_size; x < std::min(job.width, (tx + 1) * job.tile_size); ++x) {
                    std::fill(mass.begin(), mass.end(), T(0));
                    Vec3<T> c;
                    T tr;
                    cache.last[static_cast<std::size_t>(y) * job.width + x] = detail::composite_pixel(
                        packed.data(), n, T(x) + T(0.5), T(y) + T(0.5), c, tr, mass.data());
                    detail::finish_pixel(job, out, x, y, c, tr, mass.data());
                }
        }
    });
    return out;
}

/// Non-tiled reference: every pixel walks the full depth-sorted list.
template <typename T> RenderOutput<T> render_untiled(const RenderJob<T>& job) {
    RenderOutput<T> out = detail::allocate_output(job);
    std::vector<detail::Splat<T>> packed;
    detail::gather(detail::make_splats(job), sort_gaussians(job.gaussians), packed);
    const auto n = static_cast<std::uint32_t>(packed.size());
    std::vector<T> mass(job.levels);
    for (int y = 0; y < job.height; ++y)
        for (int x = 0; x < job.width; ++x) {
            std::fill(mass.begin(), mass.end(), T(0));
            Vec3<T> c;
            T tr;
            detail::composite_pixel(packed.data(), n, T(x) + T(0.5), T(y) + T(0.5), c, tr, mass.data());
            detail::finish_pixel(job, out, x, y, c, tr, mass.data());
        }
    return out;
}

/// Exact reverse pass of render_forward. `dcolor` is d(loss)/d(output color), H x W x 3.
template <typename T>
SplatGradients<T> render_backward(const RenderJob<T>& job, const RenderOutput<T>& out, const Image<T>& dcolor) {
    const RenderCache& cache = out.cache;
    const auto& g = job.gaussians;
    if (cache.last.size() != static_cast<std::size_t>(job.width) * job.height ||
        cache.tile_lists.size() != static_cast<std::size_t>(cache.tiles_x) * cache.tiles_y ||
        !dcolor.same_shape(out.color))
        throw std::logic_error("render_backward: forward cache does not match the job");

    const auto splats = detail::make_splats(job);
    const std::size_t n = g.size();
    const int workers = std::max(1, std::min<int>(job.threads, static_cast<int>(cache.tile_lists.size())));
    std::vector<SplatGradients<T>> partial(workers);
    for (auto& p : partial) p.resize(n);

    struct Entry {
        std::uint32_t j; // position in the tile list
        T a, tr, gauss, dx, dy;
        bool clamped;
    };
    struct Local {
        Vec3<T> color;
        T weight, opacity;
        Vec2<T> mean2d;
        T cxx, cxy, cyy; // conic gradient
    };
    const T max_alpha = T(kMaxAlpha), cutoff = T(kCutoffMahalanobis);

    parallel_for(cache.tile_lists.size(), workers, [&](std::size_t b, std::size_t e, int worker) {
        SplatGradients<T>& acc = partial[worker];
        std::vector<Entry> entries;
        std::vector<detail::Splat<T>> packed;
        std::vector<Local> local;
        for (std::size_t t = b; t < e; ++t) {
            const int tx = static_cast<int>(t % cache.tiles_x), ty = static_cast<int>(t / cache.tiles_x);
            const auto& list = cache.tile_lists[t];
            detail::gather(splats, list, packed);
            local.assign(list.size(), Local{Vec3<T>::Zero(), T(0), T(0), Vec2<T>::Zero(), T(0), T(0), T(0)});
            for (int y = ty * cache.tile_size; y < std::min(job.height, (ty + 1) * cache.tile_size); ++y)
                for (int x = tx * cache.tile_size; x < std::min(job.width, (tx + 1) * cache.tile_size); ++x) {
                    const T px = T(x) + T(0.5), py = T(y) + T(0.5);
                    const std::uint32_t last = cache.last[static_cast<std::size_t>(y) * job.width + x];
                    entries.clear();
                    T tr = T(1);
                    Vec3<T> c = Vec3<T>::Zero();
                    for (std::uint32_t j = 0; j < last; ++j) {
                        const auto& s = packed[j];
                        const T dx = px - s.mx, dy = py - s.my;
                        const T maha = s.qxx * dx * dx + T(2) * s.qxy * dx * dy + s.qyy * dy * dy;
                        if (maha > cutoff || !(maha >= T(0))) continue;
                        const T gauss = std::exp(T(-0.5) * maha);
                        const T raw = s.wo * gauss;
                        const T a = std::min(max_alpha, raw);
                        entries.push_back({j, a, tr, gauss, dx, dy, raw > max_alpha});
                        c += s.color * (a * tr);
                        tr *= T(1) - a;
                    }
                    Vec3<T> dc;
                    for (int ch = 0; ch < 3; ++ch) {
                        const T v = c[ch] + tr * job.background[ch];
                        dc[ch] = (v < T(0) || v > T(1)) ? T(0) : dcolor.at(x, y, ch);
                    }
                    if (dc.isZero()) continue;
                    const Vec3<T> tail_bg = job.background * tr;
                    Vec3<T> suffix = Vec3<T>::Zero();
                    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
                        const auto& s = packed[it->j];
                        Local& l = local[it->j];
                        l.color += dc * (it->a * it->tr);
                        const T da = dc.dot(s.color * it->tr - (suffix + tail_bg) / (T(1) - it->a));
                        suffix += s.color * (it->a * it->tr);
                        if (it->clamped) continue;
                        l.weight += da * s.opacity * it->gauss;
                        l.opacity += da * s.w * it->gauss;
                        const T dpower = da * s.w * s.opacity * it->gauss;
                        // power = -0.5 d^T Q d, d = pixel - mean
                        l.mean2d += dpower * Vec2<T>(s.qxx * it->dx + s.qxy * it->dy, s.qxy * it->dx + s.qyy * it->dy);
                        l.cxx += T(-0.5) * dpower * (it->dx * it->dx);
                        l.cxy += T(-0.5) * dpower * (it->dx * it->dy);
                        l.cyy += T(-0.5) * dpower * (it->dy * it->dy);
                    }
                }
            for (std::size_t j = 0; j < list.size(); ++j) {
                const std::uint32_t i = list[j];
                const Local& l = local[j];
                acc.color[i] += l.color;
                acc.weight[i] += l.weight;
                acc.opacity[i] += l.opacity;
                acc.mean2d[i] += l.mean2d;
                Mat2<T> dq;
                dq << l.cxx, l.cxy, l.cxy, l.cyy;
                acc.cov2d[i] += dq; // conic gradient for now
            }
        }
    });

    SplatGradients<T> grads = std::move(partial[0]);
    for (int w = 1; w < workers; ++w)
        for (std::size_t i = 0; i < n; ++i) {
            grads.mean2d[i] += partial[w].mean2d[i];
            grads.cov2d[i] += partial[w].cov2d[i];
            grads.color[i] += partial[w].color[i];
            grads.opacity[i] += partial[w].opacity[i];
            grads.weight[i] += partial[w].weight[i];
        }
    // conic gradient -> covariance gradient: dSigma = -Q dQ Q
    for (std::size_t i = 0; i < n; ++i) {
        if (!g.valid[i]) continue;
        const auto& s = splats[i];
        Mat2<T> q;
        q << s.qxx, s.qxy, s.qxy, s.qyy;
        grads.cov2d[i] = -q * grads.cov2d[i] * q;
    }
    return grads;
}

} // namespace pygs::splat
