// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/metrics.hpp"

#include "oracles/finite_diff.hpp"
#include "oracles/ssim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pygs;
using namespace pygs::metrics;
using pygs::testing::central_differences;
using pygs::testing::compare_gradients;
using pygs::testing::brute_force_ssim;

namespace {

// Integer-hash pattern; reproducible bit-for-bit in any language.
Image<double> hashed_image(int w, int h, int seed) {
    Image<double> img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const long i = (static_cast<long>(y) * w + x) * 3 + c;
                img.at(x, y, c) = static_cast<double>((i * 7919 + seed * 104729L + c * 31) % 1000) / 999.0;
            }
    return img;
}

Image<double> smooth_image(int w, int h, double phase) {
    Image<double> img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y * (c + 1) + phase);
    return img;
}

} // namespace

TEST(Psnr, IdenticalImagesAreCapped) {
    const auto a = smooth_image(8, 8, 0.0);
    EXPECT_EQ(compute_psnr(a, a), 100.0);
}

TEST(Psnr, KnownMse) {
    Image<double> a(4, 4, 3), b(4, 4, 3);
    for (auto& v : b.data) v = 0.1; // MSE = 0.01
    EXPECT_NEAR(compute_psnr(a, b), 20.0, 1e-9);
}

TEST(Ssim, IdenticalImagesGiveOne) {
    const auto a = hashed_image(16, 16, 3);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesBruteForceWindow) {
    for (auto [w, h] : {std::pair{11, 11}, {16, 16}, {23, 17}, {12, 30}}) {
        const auto a = hashed_image(w, h, 1), b = hashed_image(w, h, 2);
        EXPECT_NEAR(ssim(a, b), brute_force_ssim(a, b), 1e-12);
        const auto s1 = smooth_image(w, h, 0.0), s2 = smooth_image(w, h, 0.7);
        EXPECT_NEAR(ssim(s1, s2), brute_force_ssim(s1, s2), 1e-12);
    }
}

// Reference values from skimage.metrics.structural_similarity(gaussian_weights=True,
// sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=2).
TEST(Ssim, MatchesFrozenReferenceValues) {
    EXPECT_NEAR(ssim(hashed_image(16, 16, 1), hashed_image(16, 16, 2)), -0.17695263414467713, 1e-9);
    EXPECT_NEAR(ssim(smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.3)), 0.9215364508073002, 1e-9);
    EXPECT_NEAR(ssim(hashed_image(23, 17, 1), hashed_image(23, 17, 2)), -0.17872886718192313, 1e-9);
    EXPECT_NEAR(ssim(smooth_image(23, 17, 0.0), smooth_image(23, 17, 0.3)), 0.9266818433926289, 1e-9);
}

TEST(Ssim, SymmetricAndBounded) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Image<double> a(13, 14, 3), b(13, 14, 3);
        for (auto& v : a.data) v = u(rng);
        for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = std::clamp(a.data[i] + 0.3 * (u(rng) - 0.5), 0.0, 1.0);
        const double s = ssim(a, b);
        EXPECT_NEAR(s, ssim(b, a), 1e-12);
        EXPECT_LE(s, 1.0);
        EXPECT_GE(s, -1.0);
    }
}

TEST(Ssim, RejectsSmallImages) {
    Image<double> a(10, 20, 3);
    EXPECT_THROW(ssim(a, a), std::invalid_argument);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
    auto a = smooth_image(13, 12, 0.0);
    auto b = hashed_image(13, 12, 5);
    Image<double> g;
    ssim(a, b, &g);
    auto loss = [&] { return ssim(a, b); };
    const auto numeric = central_differences(b.data.data(), b.data.size(), loss, 1e-5);
    EXPECT_LT(compare_gradients(g.data, numeric, 1e-6).max_rel, 1e-5);
}

TEST(Loss, MseOnlyWhenLambdaIsOne) {
    const auto a = hashed_image(8, 8, 1), b = hashed_image(8, 8, 2);
    LossOptions opt;
    opt.lambda = 1.0;
    EXPECT_NEAR(photometric_loss(a, b, opt), mse(a, b), 1e-15);
}

TEST(Loss, IdenticalImagesGiveZero) {
    const auto a = hashed_image(12, 12, 1);
    EXPECT_NEAR(photometric_loss(a, a, LossOptions{}), 0.0, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    for (auto term : {SsimTerm::Dissimilarity, SsimTerm::Raw}) {
        const auto gt = smooth_image(12, 12, 0.2);
        auto r = hashed_image(12, 12, 7);
        LossOptions opt;
        opt.ssim_term = term;
        Image<double> g;
        photometric_loss(gt, r, opt, &g);
        auto loss = [&] { return photometric_loss(gt, r, opt); };
        const auto numeric = central_differences(r.data.data(), r.data.size(), loss, 1e-5);
        EXPECT_LT(compare_gradients(g.data, numeric, 1e-6).max_rel, 1e-5);
    }
}
