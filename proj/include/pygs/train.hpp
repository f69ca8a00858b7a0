// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/adam.hpp"
#include "pygs/io.hpp"
#include "pygs/metrics.hpp"
#include "pygs/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace pygs::train {

enum class Preset { Desk, Full };
Preset preset_from_string(std::string_view s);
std::string_view to_string(Preset p);

struct LearningRates {
    double position_init = 1.6e-4; // multiplied by the scene extent
    double position_final = 1.6e-6;
    double sh_dc = 2.5e-3;
    double sh_rest = 2.5e-3 / 20.0;
    double opacity = 0.05;
    double scale = 5e-3;
    double rotation = 1e-3;
    double networks = 3e-4;
    double embeddings = 0.1;
};

struct TrainConfig {
    double lambda = 0.8;
    metrics::SsimTerm ssim_term = metrics::SsimTerm::Dissimilarity;
    int iterations = 30000;
    LearningRates lr;
    int densify_interval = 100;
    double densify_threshold = 2e-4;
    int densify_from = 500;
    int densify_until = 15000; // capped at half the iterations
    double clone_scale = 0.01;  // fraction of the scene extent separating clone from split
    double prune_scale = 0.1;   // fraction of the scene extent
    double prune_opacity = 0.005;
    int opacity_reset_interval = 3000;
    int reassign_interval = 1000;
    int sh_degree_interval = 1000;
    std::size_t max_gaussians = 0; // 0 = unlimited
    Vec3f background = Vec3f::Zero();
    int log_interval = 100;
    std::uint64_t seed = 0;
    bool deterministic = false;
    int threads = 1;

    static TrainConfig preset(Preset p);
    int effective_densify_until() const { return std::min(densify_until, iterations / 2); }
    double position_lr(int iteration, float scene_extent) const;
    /// Throws ConfigError on out-of-range values.
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Adam state for every parameter group. Per-Gaussian groups stay row-aligned with the
/// Gaussians through densification.
struct Optimizers {
    AdamState<float> positions, rotations, log_scales, opacity_logits, sh_dc, sh_rest;
    AdamState<float> cluster_embedding, appearance_embedding, weighting, correction;

    template <typename Fn> void for_each_gaussian_group(Fn&& fn) {
        fn(positions, 3);
        fn(rotations, 4);
        fn(log_scales, 3);
        fn(opacity_logits, 1);
        fn(sh_dc, 3);
        fn(sh_rest, 3 * kShRestCoeffs);
    }
    std::vector<io::OptimizerMoments> export_moments() const;
    void import_moments(const std::vector<io::OptimizerMoments>& moments);
};

struct DensifyReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    // For each Gaussian after densification: index of the Gaussian it came from (itself for
    // survivors, the parent for clones and split children).
    std::vector<std::uint32_t> source;
    std::vector<bool> created;
};

struct StepResult {
    double loss = 0.0;
    double psnr = 0.0;
};

struct TrainState {
    Model<float> model;
    Optimizers optim;
    std::uint64_t iteration = 0;
    std::vector<float> grad_accum;
    std::vector<std::uint32_t> grad_count;
};

/// Level populations proportional to 1:2:...:L for n Gaussians (cumulative rounding).
std::vector<std::size_t> level_targets(std::size_t n, int levels);

/// Sorts by max log-scale (descending, ties by index) and relabels contiguous groups with
/// level populations from level_targets. Returns how many labels changed.
std::size_t reassign_levels(GaussianSet<float>& gaussians, int levels);

/// Clone / split / prune step. `rng_seed` drives the split sampling; `position_lr` sets
/// the clone offset (one optimizer step along the accumulated position moment).
DensifyReport densify(TrainState& state, const TrainConfig& config, double position_lr, std::uint64_t rng_seed);

/// Caps every opacity at 0.01 and clears the opacity moments.
void reset_opacity(TrainState& state);

class Trainer {
public:
    Trainer(TrainState state, std::vector<geom::Camera> cameras, std::vector<Image<float>> images, TrainConfig config);

    /// One optimization step on the next image of the epoch order. Throws NumericalError on a
    /// non-finite loss or gradient (state untouched) and when the scene is empty.
    StepResult step();

    /// Runs until `config.iterations`, applying the density, opacity and level schedules.
    /// `log` receives tab-separated progress lines; `probe` is the held-out view.
    void run(std::ostream* log, const geom::Camera* probe_camera = nullptr, const Image<float>* probe_image = nullptr,
             const std::function<void(const Trainer&)>& on_interval = {});

    /// Applies the schedules that follow iteration `state.iteration` (called by run()).
    void after_step();

    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<geom::Camera>& cameras() const { return cameras_; }

    ViewOptions view_options(const geom::Camera& cam) const;
    double probe_psnr(const geom::Camera& cam, const Image<float>& gt) const;

    io::Checkpoint checkpoint() const;
    static Trainer from_checkpoint(const io::Checkpoint& ckpt, std::vector<Image<float>> images);

    std::function<void(const DensifyReport&, const GaussianSet<float>& before)> on_densify;

private:
    int image_for_iteration(std::uint64_t iteration) const;
    int threads() const { return config_.deterministic ? 1 : resolve_threads(config_.threads); }

    TrainState state_;
    std::vector<geom::Camera> cameras_;
    std::vector<Image<float>> images_;
    TrainConfig config_;
};

std::string progress_header(int levels);

} // namespace pygs::train
