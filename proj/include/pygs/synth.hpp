// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/io.hpp"
#include "pygs/model.hpp"

#include <string_view>

namespace pygs::synth {

enum class SceneKind {
    Random,     // a cloud of random opaque Gaussians seen from an orbit
    Multiscale, // finely textured patch seen close up, large smooth blobs seen from afar
};
SceneKind scene_kind_from_string(std::string_view s);
std::string_view to_string(SceneKind k);

struct SynthConfig {
    SceneKind kind = SceneKind::Random;
    int gaussians = 500;
    int views = 64;
    int width = 128;
    int height = 128;
    double exposure_jitter = 0.0; // per-image gain drawn from [1 - j, 1 + j], training views only
    int test_every = 8;           // views with index % test_every == 0 keep unit gain
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

struct SyntheticDataset {
    Model<float> truth;
    std::vector<geom::Camera> cameras;
    std::vector<Image<float>> images; // linear RGB, gain applied
    std::vector<float> gains;
    Aabb aabb;
};

SyntheticDataset make_dataset(const SynthConfig& config);

/// Renders the ground truth without gain (used to score held-out views).
Image<float> render_truth(const Model<float>& truth, const geom::Camera& cam, int threads = 1);

void write_dataset(const SyntheticDataset& data, const io::fs::path& dir);

} // namespace pygs::synth
