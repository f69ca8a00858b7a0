// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/splat.hpp"

#include <cmath>
#include <random>

namespace pygs::testing {

inline void add_splat(splat::RenderJob<double>& job, Vec2<double> mean, Mat2<double> cov, double depth, Vec3<double> color,
                      double opacity, int level = 1, int cluster = 0) {
    auto& g = job.gaussians;
    g.mean2d.push_back(mean);
    g.cov2d.push_back(cov);
    g.depth.push_back(depth);
    const double lmax = 0.5 * (cov(0, 0) + cov(1, 1)) +
                        std::sqrt(0.25 * (cov(0, 0) - cov(1, 1)) * (cov(0, 0) - cov(1, 1)) + cov(0, 1) * cov(0, 1));
    g.radius.push_back(std::ceil(3.0 * std::sqrt(lmax)));
    g.valid.push_back(1);
    g.color.push_back(color);
    g.opacity.push_back(opacity);
    g.level.push_back(level);
    g.cluster.push_back(cluster);
}

inline splat::RenderJob<double> random_job(std::mt19937_64& rng, int n, int w, int h, int levels, int clusters, double max_opacity) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    splat::RenderJob<double> job;
    job.width = w;
    job.height = h;
    job.levels = levels;
    job.background = {u(rng), u(rng), u(rng)};
    job.weights = MatX<double>(clusters, levels);
    for (Eigen::Index i = 0; i < job.weights.size(); ++i) job.weights.data()[i] = 0.2 + 0.8 * u(rng);
    for (int i = 0; i < n; ++i) {
        const double sx = 0.8 + 4.0 * u(rng), sy = 0.8 + 4.0 * u(rng), rho = 0.8 * (u(rng) - 0.5);
        Mat2<double> cov;
        cov << sx * sx, rho * sx * sy, rho * sx * sy, sy * sy;
        add_splat(job, {u(rng) * w, u(rng) * h}, cov, 1.0 + 9.0 * u(rng), {u(rng), u(rng), u(rng)},
                  max_opacity * u(rng), 1 + static_cast<int>(u(rng) * levels) % levels,
                  static_cast<int>(u(rng) * clusters) % clusters);
    }
    return job;
}

} // namespace pygs::testing
