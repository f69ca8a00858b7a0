// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/synth.hpp"

#include "support/temp_dir.hpp"

#include <gtest/gtest.h>

using namespace pygs;

namespace {

synth::SynthConfig small(synth::SceneKind kind) {
    synth::SynthConfig c;
    c.kind = kind;
    c.gaussians = 80;
    c.views = 16;
    c.width = 32;
    c.height = 24;
    c.seed = 3;
    return c;
}

} // namespace

TEST(Synth, RandomSceneHasRequestedShape) {
    const auto d = synth::make_dataset(small(synth::SceneKind::Random));
    EXPECT_EQ(d.truth.gaussians.size(), 80u);
    ASSERT_EQ(d.cameras.size(), 16u);
    ASSERT_EQ(d.images.size(), 16u);
    for (std::size_t i = 0; i < d.cameras.size(); ++i) {
        EXPECT_EQ(d.cameras[i].index, static_cast<int>(i));
        EXPECT_EQ(d.images[i].width, 32);
        EXPECT_EQ(d.images[i].height, 24);
        EXPECT_NEAR(d.cameras[i].center().norm(), 3.5, 1e-9);
        EXPECT_EQ(d.gains[i], 1.0f);
    }
    double lit = 0.0;
    for (float v : d.images[0].data) lit += v > 0.01f;
    EXPECT_GT(lit, 0.2 * d.images[0].data.size());
}

TEST(Synth, SameSeedSameImages) {
    const auto a = synth::make_dataset(small(synth::SceneKind::Multiscale));
    const auto b = synth::make_dataset(small(synth::SceneKind::Multiscale));
    for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].data, b.images[i].data);
}

TEST(Synth, ExposureJitterScalesTrainingViewsOnly) {
    auto c = small(synth::SceneKind::Random);
    c.exposure_jitter = 0.2;
    const auto d = synth::make_dataset(c);
    int jittered = 0;
    for (std::size_t i = 0; i < d.cameras.size(); ++i) {
        const float g = d.gains[i];
        if (i % 8 == 0) {
            EXPECT_EQ(g, 1.0f);
        } else {
            EXPECT_GE(g, 0.8f);
            EXPECT_LE(g, 1.2f);
            jittered += g != 1.0f;
        }
        const auto clean = synth::render_truth(d.truth, d.cameras[i]);
        for (std::size_t k = 0; k < clean.data.size(); ++k)
            ASSERT_FLOAT_EQ(d.images[i].data[k], std::clamp(clean.data[k] * g, 0.0f, 1.0f));
    }
    EXPECT_EQ(jittered, 14);
}

TEST(Synth, MultiscaleViewsMixNearAndFar) {
    const auto d = synth::make_dataset(small(synth::SceneKind::Multiscale));
    int near = 0, far = 0;
    for (const auto& cam : d.cameras) {
        const double r = cam.center().norm();
        near += r < 2.0;
        far += r > 5.0;
    }
    EXPECT_EQ(near, 8);
    EXPECT_EQ(far, 8);
    EXPECT_LT(d.cameras[0].center().norm(), 2.0);
    EXPECT_GT(d.cameras[8].center().norm(), 5.0);
}

TEST(Synth, WrittenDatasetLoadsBack) {
    pygs::testing::TempDir dir;
    const auto d = synth::make_dataset(small(synth::SceneKind::Random));
    synth::write_dataset(d, dir.path());
    const auto back = io::load_dataset(dir.path());
    ASSERT_EQ(back.cameras.size(), d.cameras.size());
    ASSERT_TRUE(back.aabb.has_value());
    EXPECT_EQ(back.aabb->min, d.aabb.min);
    EXPECT_EQ(back.test.size(), 2u);
    for (std::size_t i = 0; i < d.cameras.size(); ++i)
        EXPECT_LT((back.cameras[i].rotation - d.cameras[i].rotation).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Synth, RejectsBadConfig) {
    auto c = small(synth::SceneKind::Random);
    c.exposure_jitter = 1.5;
    EXPECT_THROW(synth::make_dataset(c), ConfigError);
    EXPECT_THROW(synth::scene_kind_from_string("cube"), ConfigError);
}
