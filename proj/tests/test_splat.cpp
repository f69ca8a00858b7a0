// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/splat.hpp"

#include "oracles/finite_diff.hpp"
#include "support/random_job.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

#include <random>

using namespace pygs;
using namespace pygs::splat;
using pygs::testing::central_differences;
using pygs::testing::compare_gradients;
using pygs::testing::add_splat;
using pygs::testing::random_job;

namespace {

double mahalanobis(const Mat2<double>& cov, Vec2<double> d) { return d.dot(cov.inverse() * d); }

} // namespace

TEST(Render, EmptySceneShowsBackground) {
    RenderJob<double> job;
    job.width = 5;
    job.height = 4;
    job.background = {0.2, 0.4, 0.6};
    job.plain = true;
    const auto out = render_forward(job);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
            EXPECT_DOUBLE_EQ(out.color.at(x, y, 1), 0.4);
            EXPECT_EQ(out.alpha.at(x, y), 0.0);
            EXPECT_EQ(out.dominant.at(x, y), 0);
        }
}

TEST(Render, SingleGaussianAtPixelCenter) {
    RenderJob<double> job;
    job.width = job.height = 3;
    job.plain = true;
    job.background = {0, 0, 1};
    add_splat(job, {1.5, 1.5}, Mat2<double>::Identity(), 1.0, {1, 0, 0}, 0.5);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.color.at(1, 1, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.color.at(1, 1, 2), 0.5, 1e-15);
    const double a = 0.5 * std::exp(-0.5); // neighbour one pixel away
    EXPECT_NEAR(out.color.at(0, 1, 0), a, 1e-15);
    EXPECT_NEAR(out.color.at(0, 1, 2), 1 - a, 1e-15);
}

TEST(Render, FrontGaussianOccludes) {
    RenderJob<double> job;
    job.width = job.height = 1;
    job.plain = true;
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 5.0, {0, 1, 0}, 0.6);
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 1.0, {1, 0, 0}, 0.5);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.color.at(0, 0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.color.at(0, 0, 1), 0.5 * 0.6, 1e-15);
    EXPECT_NEAR(out.alpha.at(0, 0), 1 - 0.5 * 0.4, 1e-15);
}

TEST(Render, AlphaIsClampedBelowOne) {
    RenderJob<double> job;
    job.width = job.height = 1;
    job.plain = true;
    job.background = {1, 1, 1};
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 1.0, {0, 0, 0}, 1.0);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.alpha.at(0, 0), 0.99, 1e-15);
    EXPECT_NEAR(out.color.at(0, 0, 0), 0.01, 1e-15);
}

TEST(Render, StopsOnceTransmittanceIsExhausted) {
    RenderJob<double> job;
    job.width = job.height = 1;
    job.plain = true;
    // Two 0.99 layers leave T = 1e-4 * (1 - ...) below the threshold, so the second is dropped.
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 1.0, {1, 0, 0}, 1.0);
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 2.0, {0, 1, 0}, 1.0);
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 3.0, {0, 0, 1}, 1.0);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.color.at(0, 0, 0), 0.99, 1e-15);
    EXPECT_NEAR(out.color.at(0, 0, 1), 0.01 * 0.99, 1e-15);
    EXPECT_EQ(out.color.at(0, 0, 2), 0.0);
    EXPECT_EQ(out.cache.last[0], 2u);
}

TEST(Render, LevelWeightScalesOpacity) {
    RenderJob<double> job;
    job.width = job.height = 1;
    job.levels = 2;
    job.weights = MatX<double>(1, 2);
    job.weights << 0.25, 0.75;
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 1.0, {1, 1, 1}, 0.8, 2);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.color.at(0, 0, 0), 0.6, 1e-15);
    EXPECT_NEAR(out.level_mass.at(0, 0, 1), 0.6, 1e-15);
    EXPECT_EQ(out.level_mass.at(0, 0, 0), 0.0);
    EXPECT_EQ(out.dominant.at(0, 0), 2);
}

TEST(Render, ZeroWeightEqualsRemoval) {
    std::mt19937_64 rng(1);
    auto job = random_job(rng, 30, 40, 30, 3, 4, 0.9);
    job.weights.col(1).setZero();
    auto pruned = job;
    pruned.gaussians = SplatInputs<double>();
    for (std::size_t i = 0; i < job.gaussians.size(); ++i)
        if (job.gaussians.level[i] != 2)
            add_splat(pruned, job.gaussians.mean2d[i], job.gaussians.cov2d[i], job.gaussians.depth[i],
                      job.gaussians.color[i], job.gaussians.opacity[i], job.gaussians.level[i],
                      job.gaussians.cluster[i]);
    const auto a = render_forward(job), b = render_forward(pruned);
    for (std::size_t i = 0; i < a.color.data.size(); ++i) EXPECT_NEAR(a.color.data[i], b.color.data[i], 1e-14);
}

TEST(Render, TiledMatchesUntiledBitExact) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto job = random_job(rng, 60, 37 + trial, 29 + 2 * trial, 3, 5, 0.99);
        job.tile_size = (trial % 3 == 0) ? 16 : (trial % 3 == 1 ? 8 : 5);
        job.threads = 1 + trial % 3;
        const auto tiled = render_forward(job), ref = render_untiled(job);
        EXPECT_EQ(tiled.color.data, ref.color.data) << "trial " << trial;
        EXPECT_EQ(tiled.alpha.data, ref.alpha.data);
        EXPECT_EQ(tiled.level_mass.data, ref.level_mass.data);
        EXPECT_EQ(tiled.dominant.data, ref.dominant.data);
    }
}

TEST(Render, CutoffBeyondThreeSigma) {
    RenderJob<double> job;
    job.width = 20;
    job.height = 1;
    job.plain = true;
    Mat2<double> cov;
    cov << 4.0, 0.0, 0.0, 1.0;
    add_splat(job, {0.5, 0.5}, cov, 1.0, {1, 1, 1}, 0.9);
    const auto out = render_forward(job);
    for (int x = 0; x < 20; ++x) {
        const double m = mahalanobis(cov, {x, 0.0});
        if (m > 9.0)
            EXPECT_EQ(out.alpha.at(x, 0), 0.0) << x;
        else
            EXPECT_NEAR(out.alpha.at(x, 0), 0.9 * std::exp(-0.5 * m), 1e-15) << x;
    }
}

TEST(Render, AuxiliaryBuffersAreConsistent) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto job = random_job(rng, 80, 48, 40, 3, 4, 0.99);
        const auto out = render_forward(job);
        for (int y = 0; y < job.height; ++y)
            for (int x = 0; x < job.width; ++x) {
                double total = 0.0, best = 0.0;
                int arg = 0;
                for (int l = 0; l < 3; ++l) {
                    const double m = out.level_mass.at(x, y, l);
                    EXPECT_GE(m, 0.0);
                    total += m;
                    if (m > best) {
                        best = m;
                        arg = l + 1;
                    }
                }
                EXPECT_NEAR(total, out.alpha.at(x, y), 1e-12);
                EXPECT_EQ(out.dominant.at(x, y), arg);
                for (int c = 0; c < 3; ++c) {
                    EXPECT_GE(out.color.at(x, y, c), 0.0);
                    EXPECT_LE(out.color.at(x, y, c), 1.0);
                }
            }
    }
}

TEST(Render, DepthOrderIsStableForTies) {
    RenderJob<double> job;
    job.width = job.height = 1;
    job.plain = true;
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 2.0, {1, 0, 0}, 0.5);
    add_splat(job, {0.5, 0.5}, Mat2<double>::Identity(), 2.0, {0, 1, 0}, 0.5);
    const auto out = render_forward(job);
    EXPECT_NEAR(out.color.at(0, 0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.color.at(0, 0, 1), 0.25, 1e-15);
}

TEST(RenderBackward, RejectsStaleCache) {
    std::mt19937_64 rng(4);
    auto job = random_job(rng, 10, 16, 16, 1, 1, 0.5);
    const auto out = render_forward(job);
    job.width = 20;
    EXPECT_THROW(render_backward(job, out, Image<double>(20, 16, 3)), std::logic_error);
}

TEST(RenderBackward, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    auto job = random_job(rng, 12, 14, 11, 2, 3, 0.6);
    job.tile_size = 8;
    Image<double> dcolor(job.width, job.height, 3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : dcolor.data) v = n(rng);
    // Keep composite values away from the [0, 1] clamp.
    for (auto& c : job.gaussians.color) c = 0.3 * c + Vec3<double>::Constant(0.2);
    job.background *= 0.3;

    auto loss = [&] {
        const auto out = render_forward(job);
        double l = 0.0;
        for (std::size_t i = 0; i < out.color.data.size(); ++i) l += out.color.data[i] * dcolor.data[i];
        return l;
    };
    const auto out = render_forward(job);
    const auto grads = render_backward(job, out, dcolor);

    auto& g = job.gaussians;
    std::vector<double> params, analytic;
    std::vector<double*> slots;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int a = 0; a < 2; ++a) {
            slots.push_back(&g.mean2d[i][a]);
            analytic.push_back(grads.mean2d[i][a]);
        }
        for (int a = 0; a < 3; ++a) {
            slots.push_back(&g.color[i][a]);
            analytic.push_back(grads.color[i][a]);
        }
        slots.push_back(&g.opacity[i]);
        analytic.push_back(grads.opacity[i]);
        slots.push_back(&g.cov2d[i](0, 0));
        analytic.push_back(grads.cov2d[i](0, 0));
        slots.push_back(&g.cov2d[i](1, 1));
        analytic.push_back(grads.cov2d[i](1, 1));
    }
    std::vector<double> numeric;
    for (double* s : slots) {
        const double old = *s, h = 1e-6;
        *s = old + h;
        const double fp = loss();
        *s = old - h;
        const double fm = loss();
        *s = old;
        numeric.push_back((fp - fm) / (2 * h));
    }
    // Symmetric off-diagonal perturbation: the analytic full-matrix gradient sums both entries.
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double old = g.cov2d[i](0, 1), h = 1e-6;
        g.cov2d[i](0, 1) = g.cov2d[i](1, 0) = old + h;
        const double fp = loss();
        g.cov2d[i](0, 1) = g.cov2d[i](1, 0) = old - h;
        const double fm = loss();
        g.cov2d[i](0, 1) = g.cov2d[i](1, 0) = old;
        numeric.push_back((fp - fm) / (2 * h));
        analytic.push_back(grads.cov2d[i](0, 1) + grads.cov2d[i](1, 0));
    }
    const auto check = compare_gradients(analytic, numeric, 1e-7);
    EXPECT_TRUE(check.nonzero);
    EXPECT_LT(check.max_rel, 1e-4) << "entry " << check.worst << " a=" << analytic[check.worst]
                                   << " n=" << numeric[check.worst];

    // Level weights, through the table.
    std::vector<double> wa(job.weights.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i)
        wa[(g.level[i] - 1) * job.weights.rows() + g.cluster[i]] += grads.weight[i];
    const auto wn = central_differences(job.weights.data(), job.weights.size(), loss);
    EXPECT_LT(compare_gradients(wa, wn, 1e-7).max_rel, 1e-4);
}

TEST(RenderBackward, ThreadCountDoesNotChangeGradients) {
    std::mt19937_64 rng(6);
    auto job = random_job(rng, 50, 40, 40, 2, 2, 0.7);
    job.tile_size = 8;
    Image<double> dcolor(40, 40, 3);
    for (auto& v : dcolor.data) v = 1.0;
    job.threads = 1;
    const auto g1 = render_backward(job, render_forward(job), dcolor);
    job.threads = 4;
    const auto g4 = render_backward(job, render_forward(job), dcolor);
    for (std::size_t i = 0; i < g1.opacity.size(); ++i) {
        EXPECT_NEAR(g1.opacity[i], g4.opacity[i], 1e-12);
        EXPECT_LT((g1.mean2d[i] - g4.mean2d[i]).cwiseAbs().maxCoeff(), 1e-12);
    }
}
