// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/init.hpp"

#include "pygs/spatial.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <random>

namespace pygs::init {

io::PointCloud generate_point_cloud(const field::VoxelField<float>& f, const std::vector<geom::Camera>& cameras,
                                    const PointCloudConfig& config, PointCloudReport* report) {
    if (cameras.empty()) throw DataError("point cloud generation needs at least one camera");
    if (config.target == 0) throw ConfigError("point cloud target must be positive");
    const auto budget = static_cast<std::size_t>(std::ceil(config.ray_budget * static_cast<double>(config.target)));
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick_cam(0, cameras.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    field::RenderSettings rs;
    rs.samples = config.samples;
    rs.threads = config.threads;

    io::PointCloud cloud;
    std::size_t drawn = 0;
    while (drawn < budget && cloud.size() < config.target) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, config.batch)), budget - drawn);
        std::vector<field::Ray> rays;
        rays.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& cam = cameras[pick_cam(rng)];
            const double u = std::floor(unit(rng) * cam.width) + unit(rng);
            const double v = std::floor(unit(rng) * cam.height) + unit(rng);
            if (auto r = field::camera_ray(cam, u, v, f.aabb)) rays.push_back(*r);
        }
        drawn += n;
        const auto results = field::render_rays(f, rays, rs);
        for (std::size_t i = 0; i < rays.size() && cloud.size() < config.target; ++i) {
            if (!(results[i].opacity >= field::kEscapeOpacity)) continue;
            const Vec3d x = rays[i].origin + static_cast<double>(results[i].depth) * rays[i].direction;
            const Vec3f xf = x.cast<float>();
            const auto s = field::field_query(f, xf, Vec3f(rays[i].direction.cast<float>()));
            cloud.positions.push_back(xf);
            cloud.colors.push_back(s.rgb.cwiseMax(0.0f).cwiseMin(1.0f));
        }
    }
    if (report) {
        report->rays = drawn;
        report->terminated = cloud.size();
    }
    if (cloud.size() == 0 || static_cast<double>(cloud.size()) < 0.01 * static_cast<double>(drawn))
        throw DataError(fmt::format("field is degenerate: only {} of {} rays terminated", cloud.size(), drawn));
    if (cloud.size() < config.target)
        spdlog::warn("point cloud has {} points, fewer than the target {} (ray budget exhausted)", cloud.size(),
                     config.target);
    return cloud;
}

std::vector<io::PointCloud> sample_multiscale(const io::PointCloud& cloud, const PyramidSpec& spec, std::uint64_t seed) {
    if (spec.levels < 1 || spec.base == 0) throw ConfigError("pyramid needs at least one level and a positive base size");
    const std::size_t largest = spec.level_size(spec.levels);
    if (largest > cloud.size())
        throw DataError(fmt::format("largest level needs {} points but the cloud has {}", largest, cloud.size()));
    std::vector<io::PointCloud> out;
    std::vector<std::uint32_t> idx(cloud.size());
    for (int l = 1; l <= spec.levels; ++l) {
        std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(l));
        std::iota(idx.begin(), idx.end(), 0u);
        const std::size_t n = spec.level_size(l);
        // Partial Fisher-Yates: the first n entries are a uniform sample without replacement.
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        io::PointCloud subset;
        subset.positions.reserve(n);
        subset.colors.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            subset.positions.push_back(cloud.positions[idx[i]]);
            subset.colors.push_back(cloud.colors[idx[i]]);
        }
        out.push_back(std::move(subset));
    }
    return out;
}

GaussianSet<float> init_gaussians_from_points(const io::PointCloud& subset, int level, float scene_extent, int threads) {
    if (subset.size() == 0) throw DataError("cannot initialize Gaussians from an empty subset");
    if (level < 1 || level > 255) throw ConfigError("level index out of range");
    const double lo = std::log(1e-6), hi = std::log(0.1 * scene_extent);
    GaussianSet<float> g;
    g.resize(subset.size());
    const KdTree tree(subset.positions);
    const float dc_scale = static_cast<float>(1.0 / geom::sh::C0);
    parallel_for(subset.size(), resolve_threads(threads), [&](std::size_t b, std::size_t e, int) {
        for (std::size_t i = b; i < e; ++i) {
            const auto d2 = tree.nearest(subset.positions[i], 3, static_cast<std::int64_t>(i));
            double log_scale = std::log(0.01 * scene_extent);
            if (!d2.empty()) {
                double mean = 0.0;
                for (double v : d2) mean += std::sqrt(v);
                log_scale = std::log(mean / static_cast<double>(d2.size()));
            }
            log_scale = std::clamp(log_scale, lo, std::max(lo, hi));
            for (int a = 0; a < 3; ++a) {
                g.positions[3 * i + a] = subset.positions[i][a];
                g.log_scales[3 * i + a] = static_cast<float>(log_scale);
                g.sh_dc[3 * i + a] = (subset.colors[i][a] - 0.5f) * dc_scale;
            }
            g.rotations[4 * i] = 1.0f;
            g.opacity_logits[i] = logit(0.1f);
            g.levels[i] = static_cast<std::uint8_t>(level);
        }
    });
    return g;
}

double inertia(const std::vector<Vec3f>& points, const std::vector<Vec3f>& centroids, int threads) {
    const auto assign = assign_clusters(points, centroids, threads);
    double sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) sum += squared_distance(points[i], centroids[assign[i]]);
    return sum;
}

std::vector<std::uint32_t> assign_clusters(const std::vector<Vec3f>& points, const std::vector<Vec3f>& centroids,
                                           int threads) {
    if (centroids.empty()) throw ConfigError("cluster table is empty");
    const CentroidGrid grid(centroids);
    std::vector<std::uint32_t> out(points.size());
    parallel_for(points.size(), resolve_threads(threads), [&](std::size_t b, std::size_t e, int) {
        for (std::size_t i = b; i < e; ++i) out[i] = grid.nearest(points[i]);
    });
    return out;
}

std::vector<Vec3f> positions_of(const GaussianSet<float>& g) {
    std::vector<Vec3f> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g.position(i);
    return out;
}

std::vector<std::uint32_t> assign_clusters(const GaussianSet<float>& gaussians, const std::vector<Vec3f>& centroids,
                                           int threads) {
    return assign_clusters(positions_of(gaussians), centroids, threads);
}

namespace {

std::vector<Vec3f> kmeans_plus_plus(const std::vector<Vec3f>& pts, int k, std::mt19937_64& rng) {
    std::vector<Vec3f> centers;
    centers.reserve(k);
    std::uniform_int_distribution<std::size_t> first(0, pts.size() - 1);
    centers.push_back(pts[first(rng)]);
    std::vector<double> d2(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = squared_distance(pts[i], centers[0]);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (static_cast<int>(centers.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (!(total > 0.0)) throw DataError("k-means seeding ran out of distinct points");
        double target = unit(rng) * total;
        std::size_t pick = pts.size();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (d2[i] <= 0.0) continue;
            pick = i;
            target -= d2[i];
            if (target < 0.0) break;
        }
        centers.push_back(pts[pick]);
        for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = std::min(d2[i], squared_distance(pts[i], centers.back()));
    }
    return centers;
}

} // namespace

KMeansResult kmeans_centroids(const std::vector<Vec3f>& points, int k, const KMeansConfig& config) {
    if (k < 1) throw ConfigError("cluster count must be positive");
    if (points.empty()) throw DataError("k-means needs points");
    std::mt19937_64 rng(config.seed);
    const int threads = resolve_threads(config.threads);

    std::vector<Vec3f> work;
    if (points.size() <= config.subset) {
        work = points;
    } else {
        std::vector<std::uint32_t> idx(points.size());
        std::iota(idx.begin(), idx.end(), 0u);
        for (std::size_t i = 0; i < config.subset; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        work.reserve(config.subset);
        for (std::size_t i = 0; i < config.subset; ++i) work.push_back(points[idx[i]]);
    }

    auto sorted = work;
    std::sort(sorted.begin(), sorted.end(), [](const Vec3f& a, const Vec3f& b) {
        return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
    });
    const auto distinct = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
    if (static_cast<std::size_t>(k) > distinct)
        throw DataError(fmt::format("{} clusters requested but the working set has only {} distinct points", k, distinct));

    KMeansResult result;
    result.centroids = kmeans_plus_plus(work, k, rng);
    auto& centers = result.centroids;

    if (config.lloyd) {
        for (int it = 0; it < config.iterations; ++it) {
            const auto assign = assign_clusters(work, centers, threads);
            double total = 0.0;
            std::vector<Vec3d> sum(k, Vec3d::Zero());
            std::vector<std::size_t> count(k, 0);
            for (std::size_t i = 0; i < work.size(); ++i) {
                total += squared_distance(work[i], centers[assign[i]]);
                sum[assign[i]] += work[i].cast<double>();
                ++count[assign[i]];
            }
            result.inertia.push_back(total);
            bool moved = false;
            for (int c = 0; c < k; ++c) {
                if (count[c] == 0) continue;
                const Vec3f next = (sum[c] / static_cast<double>(count[c])).cast<float>();
                moved = moved || next != centers[c];
                centers[c] = next;
            }
            if (!moved) break;
        }
        return result;
    }

    // Mini-batch updates with a per-centroid step of 1 / (points seen).
    std::vector<std::uint64_t> seen(k, 0);
    std::uniform_int_distribution<std::size_t> pick(0, work.size() - 1);
    std::vector<Vec3f> batch(std::min(config.batch, work.size()));
    for (int it = 0; it < config.iterations; ++it) {
        for (auto& p : batch) p = work[pick(rng)];
        const auto assign = assign_clusters(batch, centers, threads);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto c = assign[i];
            const float eta = 1.0f / static_cast<float>(++seen[c]);
            centers[c] += eta * (batch[i] - centers[c]);
        }
    }
    return result;
}

Model<float> create_model(GaussianSet<float> gaussians, std::vector<Vec3f> centroids, const ModelConfig& config,
                          int threads) {
    if (centroids.empty()) throw ConfigError("model needs at least one cluster");
    if (config.levels < 1) throw ConfigError("model needs at least one level");
    if (config.embedding_dim < 1) throw ConfigError("embedding dimension must be positive");
    for (auto l : gaussians.levels)
        if (l < 1 || l > config.levels) throw ConfigError("Gaussian level outside the pyramid");
    std::mt19937_64 rng(config.seed ^ 0x5DEECE66Dull);
    Model<float> m;
    m.levels = config.levels;
    m.gaussians = std::move(gaussians);
    m.gaussians.clusters = assign_clusters(m.gaussians, centroids, threads);
    m.centroids = std::move(centroids);
    m.embeddings = nets::Embeddings<float>::random(static_cast<int>(m.centroids.size()), config.cameras,
                                                   config.embedding_dim, rng);
    m.weighting = nets::make_weighting_net<float>(config.embedding_dim, config.levels);
    m.weighting.init(rng, 0.1f);
    m.correction = nets::make_correction_net<float>(config.embedding_dim);
    m.correction.init(rng, 0.1f);
    m.scene_aabb = config.scene_box;
    m.scene_extent = config.scene_extent;
    m.weighting_mode = config.weighting_mode;
    m.color_correction = config.color_correction;
    return m;
}

} // namespace pygs::init
