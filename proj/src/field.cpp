// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/field.hpp"

namespace pygs::field {

VoxelField<float> train_field(const std::vector<geom::Camera>& cameras, const std::vector<Image<float>>& images,
                              const Aabb& box, const FieldTrainConfig& config,
                              const std::function<void(int, double)>& progress, FieldTrainReport* report) {
    if (cameras.empty() || images.size() != cameras.size()) throw DataError("field training needs posed images");
    if (config.steps < 0 || config.rays_per_batch < 1) throw ConfigError("field training: invalid step or batch count");
    for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].width != cameras[i].width || images[i].height != cameras[i].height || images[i].channels < 3)
            throw DataError("field training: image " + std::to_string(i) + " does not match its camera");

    std::mt19937_64 rng(config.seed);
    auto f = VoxelField<float>::create(box, config.resolution, rng);
    AdamState<float> adam_density, adam_features, adam_head;
    AdamParams grid_p, head_p;
    grid_p.lr = config.grid_lr;
    grid_p.eps = 1e-8;
    head_p.lr = config.head_lr;
    head_p.eps = 1e-8;

    std::uniform_int_distribution<std::size_t> pick_cam(0, cameras.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FieldGradients<float> grads;
    std::vector<Ray> rays;
    std::vector<Vec3<float>> targets, dcolor;
    double loss = 0.0;
    for (int step = 0; step < config.steps; ++step) {
        rays.clear();
        targets.clear();
        double miss_loss = 0.0;
        int misses = 0;
        for (int r = 0; r < config.rays_per_batch; ++r) {
            const std::size_t c = pick_cam(rng);
            const auto& cam = cameras[c];
            const int px = std::min(cam.width - 1, static_cast<int>(unit(rng) * cam.width));
            const int py = std::min(cam.height - 1, static_cast<int>(unit(rng) * cam.height));
            const Vec3<float> target(images[c].at(px, py, 0), images[c].at(px, py, 1), images[c].at(px, py, 2));
            const auto ray = camera_ray(cam, px + 0.5, py + 0.5, box);
            if (!ray) {
                miss_loss += (target - config.background.cast<float>()).squaredNorm();
                ++misses;
                continue;
            }
            rays.push_back(*ray);
            targets.push_back(target);
        }
        RenderSettings rs;
        rs.samples = config.samples;
        rs.jitter = true;
        rs.seed = rng();
        rs.threads = config.threads;
        rs.background = config.background;
        RayBatchCache<float> cache;
        const auto results = render_rays(f, rays, rs, &cache);
        const double norm = 1.0 / (3.0 * config.rays_per_batch);
        loss = miss_loss * norm;
        dcolor.resize(rays.size());
        for (std::size_t r = 0; r < rays.size(); ++r) {
            const Vec3<float> diff = results[r].color - targets[r];
            loss += diff.squaredNorm() * norm;
            dcolor[r] = diff * static_cast<float>(2.0 * norm);
        }
        if (!std::isfinite(loss)) throw NumericalError("field training diverged at step " + std::to_string(step));
        grads.reset(f);
        render_rays_backward(f, cache, dcolor, grads);
        adam_density.step_update(f.density, grads.density, grid_p);
        adam_features.step_update(f.features, grads.features, grid_p);
        adam_head.step_update(f.head.params(), grads.head, head_p);
        if (progress) progress(step, loss);
    }
    if (report) {
        report->final_loss = loss;
        report->steps = config.steps;
    }
    return f;
}

} // namespace pygs::field
