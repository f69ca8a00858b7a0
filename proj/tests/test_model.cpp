// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/model.hpp"

#include "oracles/finite_diff.hpp"
#include "support/random_model.hpp"

#include <gtest/gtest.h>

using namespace pygs;
using pygs::testing::compare_gradients;
using pygs::testing::front_camera;
using pygs::testing::random_model;

namespace {

struct Probe {
    Image<double> weights;
    double operator()(const Image<double>& img) const {
        double s = 0.0;
        for (std::size_t i = 0; i < img.data.size(); ++i) s += img.data[i] * weights.data[i];
        return s;
    }
};

Probe random_probe(std::mt19937_64& rng, int w, int h) {
    std::normal_distribution<double> n(0.0, 1.0);
    Probe p{Image<double>(w, h, 3)};
    for (auto& v : p.weights.data) v = n(rng);
    return p;
}

// Collects (pointer, analytic gradient) pairs for every parameter of the model, taking every
// `net_stride`-th network weight to keep the finite-difference pass short.
void collect(Model<double>& m, const ModelGradients<double>& g, std::size_t net_stride, std::vector<double*>& slots,
             std::vector<double>& analytic) {
    std::vector<std::vector<double>*> params;
    m.gaussians.for_each_attribute([&](std::vector<double>& v, int) { params.push_back(&v); });
    std::vector<const std::vector<double>*> grads;
    g.gaussians.for_each_attribute([&](const std::vector<double>& v, int) { grads.push_back(&v); });
    for (std::size_t a = 0; a < params.size(); ++a)
        for (std::size_t i = 0; i < params[a]->size(); ++i) {
            slots.push_back(&(*params[a])[i]);
            analytic.push_back((*grads[a])[i]);
        }
    for (Eigen::Index i = 0; i < m.embeddings.cluster.size(); ++i) {
        slots.push_back(m.embeddings.cluster.data() + i);
        analytic.push_back(g.cluster_embedding.data()[i]);
    }
    for (Eigen::Index i = 0; i < m.embeddings.appearance.size(); ++i) {
        slots.push_back(m.embeddings.appearance.data() + i);
        analytic.push_back(g.appearance_embedding.data()[i]);
    }
    for (std::size_t i = 0; i < m.weighting.params().size(); i += net_stride) {
        slots.push_back(&m.weighting.params()[i]);
        analytic.push_back(g.weighting[i]);
    }
    for (std::size_t i = 0; i < m.correction.params().size(); i += net_stride) {
        slots.push_back(&m.correction.params()[i]);
        analytic.push_back(g.correction[i]);
    }
}

std::vector<double> numeric_gradient(const std::vector<double*>& slots, const std::function<double()>& f,
                                     double h = 1e-6) {
    std::vector<double> out;
    out.reserve(slots.size());
    for (double* s : slots) {
        const double old = *s;
        *s = old + h;
        const double fp = f();
        *s = old - h;
        const double fm = f();
        *s = old;
        out.push_back((fp - fm) / (2 * h));
    }
    return out;
}

void check_full_gradient(WeightingMode mode, const ViewOptions& opt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto m = random_model(rng, 16, 3, 4, 3, 6);
    m.weighting_mode = mode;
    const auto cam = front_camera(8, 8, 1);
    const Probe probe = random_probe(rng, 8, 8);
    auto loss = [&] { return probe(render_frame(m, cam, opt).output.color); };
    const auto frame = render_frame(m, cam, opt);
    const auto grads = render_frame_backward(m, frame, probe.weights);
    std::vector<double*> slots;
    std::vector<double> analytic;
    collect(m, grads, 5, slots, analytic);
    const auto numeric = numeric_gradient(slots, loss);
    const auto check = compare_gradients(analytic, numeric, 1e-7);
    EXPECT_TRUE(check.nonzero);
    EXPECT_LT(check.max_rel, 1e-4) << "slot " << check.worst << " analytic " << analytic[check.worst] << " numeric "
                                   << numeric[check.worst];
}

} // namespace

TEST(RenderFrame, FullGradientLearnedWeights) { check_full_gradient(WeightingMode::Learned, ViewOptions{}, 1); }

TEST(RenderFrame, FullGradientMeanAppearance) {
    ViewOptions opt;
    opt.appearance = -1;
    check_full_gradient(WeightingMode::Learned, opt, 2);
}

TEST(RenderFrame, FullGradientUniformWeights) { check_full_gradient(WeightingMode::Uniform, ViewOptions{}, 3); }

TEST(RenderFrame, FullGradientWithDisabledLevel) {
    ViewOptions opt;
    opt.enabled_levels = 0b101;
    check_full_gradient(WeightingMode::Learned, opt, 4);
}

TEST(RenderFrame, FullGradientLowSpectralDegree) {
    ViewOptions opt;
    opt.active_sh_degree = 1;
    check_full_gradient(WeightingMode::Learned, opt, 5);
}

TEST(RenderFrame, UniformWithoutCorrectionEqualsPlain) {
    std::mt19937_64 rng(6);
    auto m = random_model(rng, 30, 3, 4, 2, 6);
    m.weighting_mode = WeightingMode::Uniform;
    m.color_correction = false;
    const auto cam = front_camera(32, 24);
    ViewOptions plain;
    plain.plain = true;
    EXPECT_EQ(render_frame(m, cam, ViewOptions{}).output.color.data, render_frame(m, cam, plain).output.color.data);
}

TEST(RenderFrame, DisabledLevelsMatchRemovedGaussians) {
    std::mt19937_64 rng(7);
    auto m = random_model(rng, 30, 3, 4, 2, 6);
    const auto cam = front_camera(32, 24);
    ViewOptions opt;
    opt.enabled_levels = 0b011;
    const auto masked = render_frame(m, cam, opt);

    std::vector<std::uint32_t> keep;
    for (std::uint32_t i = 0; i < m.gaussians.size(); ++i)
        if (m.gaussians.levels[i] != 3) keep.push_back(i);
    auto pruned = m;
    pruned.gaussians = m.gaussians.select(keep);
    const auto ref = render_frame(pruned, cam, ViewOptions{});
    for (std::size_t i = 0; i < ref.output.color.data.size(); ++i)
        EXPECT_NEAR(masked.output.color.data[i], ref.output.color.data[i], 1e-12);
    for (int k = 0; k < m.clusters(); ++k) EXPECT_EQ(masked.job.weights(k, 2), 0.0);
}

TEST(RenderFrame, Top1IsOneHotOfLearnedArgmax) {
    std::mt19937_64 rng(8);
    auto m = random_model(rng, 10, 3, 5, 2, 6);
    const auto cam = front_camera(16, 16);
    m.weighting_mode = WeightingMode::Learned;
    const MatX<double> soft = render_frame(m, cam, ViewOptions{}).job.weights;
    m.weighting_mode = WeightingMode::Top1;
    const MatX<double> hard = render_frame(m, cam, ViewOptions{}).job.weights;
    for (int k = 0; k < m.clusters(); ++k) {
        Eigen::Index best;
        soft.row(k).maxCoeff(&best);
        EXPECT_EQ(hard.row(k).sum(), 1.0);
        EXPECT_EQ(hard(k, best), 1.0);
    }
}

TEST(RenderFrame, Top1PassesGradientStraightThrough) {
    std::mt19937_64 rng(9);
    auto m = random_model(rng, 16, 3, 4, 2, 6);
    m.weighting_mode = WeightingMode::Top1;
    const auto cam = front_camera(8, 8);
    const Probe probe = random_probe(rng, 8, 8);
    const auto grads = render_frame_backward(m, render_frame(m, cam, ViewOptions{}), probe.weights);
    double norm = 0.0;
    for (double v : grads.weighting) norm += v * v;
    EXPECT_GT(norm, 0.0);
}

TEST(RenderFrame, RandomModeIsSeededAndNormalized) {
    std::mt19937_64 rng(10);
    auto m = random_model(rng, 10, 3, 4, 2, 6);
    m.weighting_mode = WeightingMode::Random;
    const auto cam = front_camera(8, 8);
    ViewOptions a, b;
    a.random_seed = 1;
    b.random_seed = 2;
    const MatX<double> wa = render_frame(m, cam, a).job.weights;
    const MatX<double> wa2 = render_frame(m, cam, a).job.weights;
    const MatX<double> wb = render_frame(m, cam, b).job.weights;
    EXPECT_EQ(wa, wa2);
    EXPECT_NE(wa, wb);
    for (int k = 0; k < m.clusters(); ++k) {
        EXPECT_NEAR(wa.row(k).sum(), 1.0, 1e-12);
        EXPECT_EQ(wa.row(k), wa.row(0));
    }
}

TEST(RenderFrame, ThreadCountDoesNotChangeImage) {
    std::mt19937_64 rng(11);
    auto m = random_model(rng, 60, 3, 4, 2, 6);
    const auto cam = front_camera(40, 30);
    ViewOptions one, many;
    many.threads = 3;
    EXPECT_EQ(render_frame(m, cam, one).output.color.data, render_frame(m, cam, many).output.color.data);
}

TEST(WeightingModeNames, RoundTrip) {
    for (auto mode : {WeightingMode::Learned, WeightingMode::Uniform, WeightingMode::Random, WeightingMode::Top1})
        EXPECT_EQ(weighting_mode_from_string(to_string(mode)), mode);
    EXPECT_THROW(weighting_mode_from_string("bogus"), ConfigError);
}

TEST(GaussianSet, SelectAndAppendPreserveAttributes) {
    std::mt19937_64 rng(12);
    auto m = random_model(rng, 5, 2, 2, 1, 4);
    const auto picked = m.gaussians.select({4, 1, 1});
    ASSERT_EQ(picked.size(), 3u);
    EXPECT_EQ(picked.position(0), m.gaussians.position(4));
    EXPECT_EQ(picked.levels[1], m.gaussians.levels[1]);
    EXPECT_EQ(picked.sh_rest[3 * kShRestCoeffs * 2 + 7], m.gaussians.sh_rest[3 * kShRestCoeffs * 1 + 7]);
    auto all = m.gaussians;
    all.append(picked);
    EXPECT_EQ(all.size(), 8u);
    EXPECT_EQ(all.get(7).position, m.gaussians.get(1).position);
}
