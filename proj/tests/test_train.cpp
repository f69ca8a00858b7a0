// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/train.hpp"

#include "support/random_model.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace pygs;
using namespace pygs::train;
using pygs::testing::front_camera;
using pygs::testing::random_model;

namespace {

struct Scene {
    std::vector<geom::Camera> cameras;
    std::vector<Image<float>> images;
};

// Targets rendered from a reference model seen by slightly shifted front cameras.
Scene toy_scene(std::uint64_t seed, int views = 3, int size = 24) {
    std::mt19937_64 rng(seed);
    auto ref = random_model(rng, 30, 2, 3, views, 8).cast<float>();
    ref.weighting_mode = WeightingMode::Uniform;
    ref.color_correction = false;
    Scene s;
    for (int v = 0; v < views; ++v) {
        auto cam = front_camera(size, size, v);
        cam.translation = Eigen::Vector3d(0.1 * v, -0.05 * v, 0.0);
        s.cameras.push_back(cam);
        ViewOptions opt;
        opt.plain = true;
        s.images.push_back(render_frame(ref, cam, opt).output.color);
    }
    return s;
}

TrainState initial_state(std::uint64_t seed, int views = 3) {
    std::mt19937_64 rng(seed + 1000);
    TrainState st;
    st.model = random_model(rng, 25, 2, 3, views, 8).cast<float>();
    auto& g = st.model.gaussians;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float n = g.rotation(i).norm();
        for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] /= n;
    }
    return st;
}

TrainConfig small_config() {
    TrainConfig c;
    c.iterations = 60;
    c.densify_from = 10;
    c.densify_interval = 10;
    c.reassign_interval = 20;
    c.opacity_reset_interval = 1000;
    c.sh_degree_interval = 10;
    c.log_interval = 20;
    c.seed = 5;
    c.deterministic = true;
    return c;
}

TrainConfig zero_lr(TrainConfig c) {
    c.lr = LearningRates{0, 0, 0, 0, 0, 0, 0, 0, 0};
    return c;
}

bool same_model(const Model<float>& a, const Model<float>& b) {
    bool same = a.gaussians.levels == b.gaussians.levels && a.gaussians.clusters == b.gaussians.clusters &&
                a.embeddings.cluster == b.embeddings.cluster && a.embeddings.appearance == b.embeddings.appearance &&
                a.weighting.params() == b.weighting.params() && a.correction.params() == b.correction.params();
    std::vector<const std::vector<float>*> pa;
    a.gaussians.for_each_attribute([&](const std::vector<float>& v, int) { pa.push_back(&v); });
    std::size_t k = 0;
    b.gaussians.for_each_attribute([&](const std::vector<float>& v, int) { same = same && v == *pa[k++]; });
    return same;
}

} // namespace

TEST(TrainConfig, JsonRoundTripAndValidation) {
    auto c = TrainConfig::preset(Preset::Full);
    c.lambda = 0.6;
    c.background = Vec3f(0.1f, 0.2f, 0.3f);
    c.ssim_term = metrics::SsimTerm::Raw;
    c.max_gaussians = 1234;
    const auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.iterations, 200000);
    EXPECT_DOUBLE_EQ(back.lr.position_init, 1.6e-5);
    c.lambda = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(TrainConfig::from_json("{\"densify_interval\": 0}"), ConfigError);
    EXPECT_THROW(TrainConfig::from_json("not json"), ConfigError);
    EXPECT_THROW(preset_from_string("laptop"), ConfigError);
}

TEST(TrainConfig, PositionRateDecaysExponentially) {
    TrainConfig c;
    c.iterations = 1000;
    EXPECT_NEAR(c.position_lr(0, 2.0f), 3.2e-4, 1e-12);
    EXPECT_NEAR(c.position_lr(1000, 2.0f), 3.2e-6, 1e-14);
    EXPECT_NEAR(c.position_lr(500, 2.0f), 2.0 * std::sqrt(1.6e-4 * 1.6e-6), 1e-12);
    c.iterations = 5000;
    EXPECT_EQ(c.effective_densify_until(), 2500);
}

TEST(LevelTargets, FollowLinearProportionsWithinRounding) {
    EXPECT_EQ(level_targets(6, 3), (std::vector<std::size_t>{1, 2, 3}));
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = rng() % 5000;
        const int levels = 1 + static_cast<int>(rng() % 6);
        const auto t = level_targets(n, levels);
        EXPECT_EQ(std::accumulate(t.begin(), t.end(), std::size_t{0}), n);
        const double total = levels * (levels + 1) / 2.0;
        for (int l = 1; l <= levels; ++l) EXPECT_LE(std::abs(static_cast<double>(t[l - 1]) - n * l / total), levels - 1.0 + 1e-9);
    }
}

TEST(ReassignLevels, DistinctScalesGiveLinearPopulations) {
    GaussianSet<float> g;
    g.resize(6);
    const float s[6] = {0.3f, 0.9f, 0.1f, 0.5f, 0.7f, 0.2f};
    for (int i = 0; i < 6; ++i) g.log_scales[3 * i] = std::log(s[i]);
    for (int i = 0; i < 6; ++i) g.log_scales[3 * i + 1] = g.log_scales[3 * i + 2] = std::log(0.01f);
    reassign_levels(g, 3);
    EXPECT_EQ(g.levels, (std::vector<std::uint8_t>{3, 1, 3, 2, 2, 3}));
    EXPECT_EQ(reassign_levels(g, 3), 0u);
}

TEST(ReassignLevels, EqualScalesFallBackToIndexOrder) {
    GaussianSet<float> g;
    g.resize(6);
    reassign_levels(g, 3);
    EXPECT_EQ(g.levels, (std::vector<std::uint8_t>{1, 2, 2, 3, 3, 3}));
}

TEST(ReassignLevels, OnlyLevelsChangeAndScalesAreOrdered) {
    std::mt19937_64 rng(2);
    auto m = random_model(rng, 200, 4, 5, 1, 4).cast<float>();
    const auto before = m.gaussians;
    reassign_levels(m.gaussians, 4);
    EXPECT_EQ(m.gaussians.positions, before.positions);
    EXPECT_EQ(m.gaussians.clusters, before.clusters);
    EXPECT_EQ(m.gaussians.log_scales, before.log_scales);
    std::vector<float> lo(4, 1e9f), hi(4, -1e9f);
    for (std::size_t i = 0; i < m.gaussians.size(); ++i) {
        const int l = m.gaussians.levels[i] - 1;
        const float s = m.gaussians.max_scale(i);
        lo[l] = std::min(lo[l], s);
        hi[l] = std::max(hi[l], s);
    }
    for (int l = 0; l + 1 < 4; ++l) EXPECT_GE(lo[l], hi[l + 1]);
}

TEST(Densify, NothingOverThresholdOnlyPrunes) {
    auto st = initial_state(3);
    st.model.gaussians.opacity_logits[4] = logit(0.001f);
    st.grad_accum.assign(st.model.gaussians.size(), 0.0f);
    st.grad_count.assign(st.model.gaussians.size(), 1);
    const auto before = st.model.gaussians.size();
    const auto r = densify(st, small_config(), 1e-3, 1);
    EXPECT_EQ(r.cloned + r.split, 0u);
    EXPECT_EQ(r.pruned, 1u);
    EXPECT_EQ(st.model.gaussians.size(), before - 1);
}

TEST(Densify, SplitAddsOneAndChildrenInherit) {
    auto st = initial_state(4);
    auto& g = st.model.gaussians;
    const std::size_t n = g.size();
    for (int a = 0; a < 3; ++a) g.log_scales[3 * 7 + a] = std::log(0.05f * st.model.scene_extent);
    st.grad_accum.assign(n, 0.0f);
    st.grad_count.assign(n, 1);
    st.grad_accum[7] = 1.0f;
    const auto parent = g.get(7);
    const auto r = densify(st, small_config(), 1e-3, 2);
    EXPECT_EQ(r.split, 1u);
    EXPECT_EQ(st.model.gaussians.size(), n + 1);
    int children = 0;
    for (std::size_t j = 0; j < r.source.size(); ++j) {
        if (!r.created[j]) continue;
        ++children;
        const auto c = st.model.gaussians.get(j);
        EXPECT_EQ(c.level, parent.level);
        EXPECT_EQ(c.cluster, parent.cluster);
        EXPECT_NEAR(c.log_scale[0], parent.log_scale[0] - std::log(1.6f), 1e-6f);
        EXPECT_NE(c.position, parent.position);
    }
    EXPECT_EQ(children, 2);
}

TEST(Densify, SmallGaussiansAreClonedWithInheritance) {
    auto st = initial_state(5);
    auto& g = st.model.gaussians;
    const std::size_t n = g.size();
    for (int a = 0; a < 3; ++a) g.log_scales[3 * 2 + a] = std::log(0.001f * st.model.scene_extent);
    st.grad_accum.assign(n, 0.0f);
    st.grad_count.assign(n, 1);
    st.grad_accum[2] = 1.0f;
    const auto parent = g.get(2);
    const auto r = densify(st, small_config(), 1e-3, 3);
    EXPECT_EQ(r.cloned, 1u);
    EXPECT_EQ(st.model.gaussians.size(), n + 1);
    EXPECT_EQ(st.model.gaussians.levels.back(), parent.level);
    EXPECT_EQ(st.model.gaussians.clusters.back(), static_cast<std::uint32_t>(parent.cluster));
}

TEST(Densify, MaxGaussianCapLimitsGrowth) {
    auto st = initial_state(6);
    const std::size_t n = st.model.gaussians.size();
    st.grad_accum.assign(n, 1.0f);
    st.grad_count.assign(n, 1);
    auto c = small_config();
    c.max_gaussians = n + 3;
    c.prune_opacity = 0.0;
    densify(st, c, 1e-3, 4);
    EXPECT_LE(st.model.gaussians.size(), n + 3);
}

TEST(Densify, MomentsStayAlignedSoZeroRateStepIsNoOp) {
    const auto scene = toy_scene(7);
    auto c = small_config();
    Trainer t(initial_state(7), scene.cameras, scene.images, c);
    for (int i = 0; i < 5; ++i) t.step();
    auto& st = t.state();
    const std::size_t n = st.model.gaussians.size();
    st.grad_accum.assign(n, 0.0f);
    st.grad_accum[0] = st.grad_accum[3] = 1.0f;
    st.grad_count.assign(n, 1);
    densify(st, c, 1e-3, 9);
    st.optim.for_each_gaussian_group([&](AdamState<float>& s, int w) {
        EXPECT_EQ(s.m.size(), st.model.gaussians.size() * static_cast<std::size_t>(w));
    });
    Trainer frozen(st, scene.cameras, scene.images, zero_lr(c));
    const auto before = frozen.state().model;
    frozen.step();
    EXPECT_TRUE(same_model(before, frozen.state().model));
}

TEST(Densify, EmptiedSceneFailsOnNextStep) {
    const auto scene = toy_scene(8);
    auto st = initial_state(8);
    for (auto& o : st.model.gaussians.opacity_logits) o = logit(0.001f);
    densify(st, small_config(), 1e-3, 1);
    EXPECT_TRUE(st.model.gaussians.empty());
    Trainer t(st, scene.cameras, scene.images, small_config());
    EXPECT_THROW(t.step(), NumericalError);
}

TEST(ResetOpacity, CapsOpacityAndClearsMoments) {
    auto st = initial_state(9);
    st.optim.opacity_logits.resize(st.model.gaussians.size());
    std::fill(st.optim.opacity_logits.m.begin(), st.optim.opacity_logits.m.end(), 1.0f);
    reset_opacity(st);
    for (std::size_t i = 0; i < st.model.gaussians.size(); ++i) EXPECT_LE(st.model.gaussians.opacity(i), 0.01f + 1e-6f);
    for (float m : st.optim.opacity_logits.m) EXPECT_EQ(m, 0.0f);
}

TEST(TrainStep, ZeroLearningRatesLeaveStateUnchanged) {
    auto scene = toy_scene(10, 1);
    Trainer t(initial_state(10, 1), scene.cameras, scene.images, zero_lr(small_config()));
    const auto before = t.state().model;
    const double l1 = t.step().loss;
    const double l2 = t.step().loss;
    EXPECT_EQ(l1, l2);
    EXPECT_TRUE(same_model(before, t.state().model));
}

TEST(TrainStep, SingleGaussianFitsConstantTarget) {
    TrainState st;
    st.model = random_model(*std::make_unique<std::mt19937_64>(11), 1, 1, 1, 1, 4).cast<float>();
    st.model.weighting_mode = WeightingMode::Uniform;
    auto& g = st.model.gaussians;
    g.positions = {0.0f, 0.0f, 3.0f};
    for (int a = 0; a < 3; ++a) g.log_scales[a] = std::log(2.0f);
    const auto cam = front_camera(16, 16, 0);
    Image<float> target(16, 16, 3);
    for (std::size_t i = 0; i < target.data.size(); i += 3) {
        target.data[i] = 0.8f;
        target.data[i + 1] = 0.3f;
        target.data[i + 2] = 0.5f;
    }
    auto c = small_config();
    c.lambda = 1.0;
    c.iterations = 100;
    c.lr = LearningRates{0, 0, 0.002, 0, 0, 0, 0, 0, 0};
    c.sh_degree_interval = 1000;
    Trainer t(st, {cam}, {target}, c);
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        const double l = t.step().loss;
        EXPECT_LT(l, prev) << "step " << i;
        prev = l;
    }
}

TEST(TrainStep, NonFiniteLossAbortsWithoutTouchingState) {
    auto scene = toy_scene(12, 1);
    scene.images[0].data[5] = std::numeric_limits<float>::quiet_NaN();
    Trainer t(initial_state(12, 1), scene.cameras, scene.images, small_config());
    const auto before = t.state().model;
    EXPECT_THROW(t.step(), NumericalError);
    EXPECT_TRUE(same_model(before, t.state().model));
    EXPECT_EQ(t.state().iteration, 0u);
}

TEST(Trainer, SameSeedGivesIdenticalRunsAndLog) {
    const auto scene = toy_scene(13);
    auto run = [&] {
        Trainer t(initial_state(13), scene.cameras, scene.images, small_config());
        std::ostringstream log;
        t.run(&log);
        return std::make_pair(log.str(), io::serialize_checkpoint(t.checkpoint()));
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    std::istringstream lines(a.first);
    std::string header, line;
    std::getline(lines, header);
    EXPECT_EQ(header, "iteration\tloss\ttrain_psnr\tprobe_psnr\tgaussians\tlevel_1\tlevel_2");
    int rows = 0;
    while (std::getline(lines, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 6);
        ++rows;
    }
    EXPECT_EQ(rows, 3);
}

TEST(Trainer, ResumeFromCheckpointMatchesContinuousRun) {
    const auto scene = toy_scene(14);
    Trainer full(initial_state(14), scene.cameras, scene.images, small_config());
    full.run(nullptr);

    auto c = small_config();
    Trainer first(initial_state(14), scene.cameras, scene.images, c);
    while (first.state().iteration < 30) {
        first.step();
        first.after_step();
    }
    const auto ck = io::deserialize_checkpoint(io::serialize_checkpoint(first.checkpoint()));
    auto resumed = Trainer::from_checkpoint(ck, scene.images);
    resumed.run(nullptr);
    EXPECT_TRUE(same_model(full.state().model, resumed.state().model));
}

TEST(Trainer, DensifyHookSeesInheritance) {
    const auto scene = toy_scene(15);
    auto c = small_config();
    c.densify_threshold = 0.0;
    Trainer t(initial_state(15), scene.cameras, scene.images, c);
    std::size_t events = 0, mismatches = 0;
    t.on_densify = [&](const DensifyReport& r, const GaussianSet<float>& before) {
        for (std::size_t j = 0; j < r.source.size(); ++j) {
            if (!r.created[j]) continue;
            ++events;
            mismatches += t.state().model.gaussians.levels[j] != before.levels[r.source[j]];
            mismatches += t.state().model.gaussians.clusters[j] != before.clusters[r.source[j]];
        }
    };
    t.run(nullptr);
    EXPECT_GT(events, 0u);
    EXPECT_EQ(mismatches, 0u);
}

TEST(Trainer, LossDecreasesOnToyScene) {
    const auto scene = toy_scene(16);
    auto c = small_config();
    c.iterations = 150;
    Trainer t(initial_state(16), scene.cameras, scene.images, c);
    const double start = t.probe_psnr(scene.cameras[0], scene.images[0]);
    t.run(nullptr);
    EXPECT_GT(t.probe_psnr(scene.cameras[0], scene.images[0]), start + 1.0);
}

TEST(Trainer, RejectsMismatchedInputs) {
    auto scene = toy_scene(17);
    scene.images.pop_back();
    EXPECT_THROW(Trainer(initial_state(17), scene.cameras, scene.images, small_config()), DataError);
    scene = toy_scene(17);
    scene.cameras[0].index = 10;
    EXPECT_THROW(Trainer(initial_state(17), scene.cameras, scene.images, small_config()), DataError);
}
