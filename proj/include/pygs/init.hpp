// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/field.hpp"
#include "pygs/io.hpp"
#include "pygs/model.hpp"

#include <cstdint>
#include <vector>

namespace pygs::init {

struct PointCloudConfig {
    std::size_t target = 100000;
    int samples = 128; // per-ray samples for the termination estimate
    double ray_budget = 10.0; // rays drawn at most, as a multiple of the target
    int batch = 4096;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct PointCloudReport {
    std::size_t rays = 0;
    std::size_t terminated = 0;
};

/// Samples surface points at the expected ray termination of the field, colored by the
/// field at that point. Throws DataError when fewer than 1% of the drawn rays terminate.
io::PointCloud generate_point_cloud(const field::VoxelField<float>& f, const std::vector<geom::Camera>& cameras,
                                    const PointCloudConfig& config, PointCloudReport* report = nullptr);

struct PyramidSpec {
    int levels = 3;
    std::size_t base = 1000; // N_1
    std::size_t level_size(int l) const { return static_cast<std::size_t>(l) * base; }
    std::size_t total() const { return base * static_cast<std::size_t>(levels) * (levels + 1) / 2; }
};

/// One uniform subset per level (level l has l * N_1 points), drawn without replacement
/// within a subset and independently across subsets.
std::vector<io::PointCloud> sample_multiscale(const io::PointCloud& cloud, const PyramidSpec& spec, std::uint64_t seed);

/// Isotropic Gaussians at the subset points, sized by the mean distance to their three
/// nearest neighbors within the subset.
GaussianSet<float> init_gaussians_from_points(const io::PointCloud& subset, int level, float scene_extent,
                                              int threads = 1);

struct KMeansConfig {
    std::size_t subset = 100000; // working-set cap
    std::size_t batch = 8192;
    int iterations = 100;
    bool lloyd = false; // full-batch Lloyd iterations instead of mini-batches
    std::uint64_t seed = 0;
    int threads = 1;
};

struct KMeansResult {
    std::vector<Vec3f> centroids;
    std::vector<double> inertia; // Lloyd mode: working-set inertia after each assignment step
};

KMeansResult kmeans_centroids(const std::vector<Vec3f>& points, int k, const KMeansConfig& config);

/// Sum of squared distances to the nearest centroid.
double inertia(const std::vector<Vec3f>& points, const std::vector<Vec3f>& centroids, int threads = 1);

/// Nearest centroid per point (lowest index on ties), grid accelerated.
std::vector<std::uint32_t> assign_clusters(const std::vector<Vec3f>& points, const std::vector<Vec3f>& centroids,
                                           int threads = 1);
std::vector<std::uint32_t> assign_clusters(const GaussianSet<float>& gaussians, const std::vector<Vec3f>& centroids,
                                           int threads = 1);

std::vector<Vec3f> positions_of(const GaussianSet<float>& gaussians);

struct ModelConfig {
    int levels = 3;
    int embedding_dim = nets::kDefaultEmbeddingDim;
    int cameras = 1;
    Aabb scene_box;
    float scene_extent = 1.0f;
    WeightingMode weighting_mode = WeightingMode::Learned;
    bool color_correction = true;
    std::uint64_t seed = 0;
};

/// Assembles a model: assigns clusters and creates embeddings and networks.
Model<float> create_model(GaussianSet<float> gaussians, std::vector<Vec3f> centroids, const ModelConfig& config,
                          int threads = 1);

} // namespace pygs::init
