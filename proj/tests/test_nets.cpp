// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/nets.hpp"

#include "oracles/finite_diff.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pygs;
using namespace pygs::nets;
using pygs::testing::central_differences;
using pygs::testing::compare_gradients;

namespace {

MatX<double> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
    std::normal_distribution<double> n(0.0, s);
    MatX<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

} // namespace

TEST(Mlp, ShapesAndParameterCount) {
    const auto net = Mlp<double>::with_hidden(10, 64, 3, 4);
    EXPECT_EQ(net.layer_count(), 4);
    EXPECT_EQ(net.params().size(), std::size_t(64 * 11 + 64 * 65 * 2 + 4 * 65));
    std::mt19937_64 rng(1);
    const MatX<double> y = net.forward(random_matrix(10, 5, rng));
    EXPECT_EQ(y.rows(), 4);
    EXPECT_EQ(y.cols(), 5);
}

TEST(Mlp, InitBoundsAndZeroBias) {
    std::mt19937_64 rng(2);
    auto net = Mlp<double>::with_hidden(16, 32, 2, 3);
    net.init(rng, 0.1);
    for (int l = 0; l < net.layer_count(); ++l) {
        double bound = std::sqrt(6.0 / net.dims()[l]);
        if (l + 1 == net.layer_count()) bound *= 0.1;
        EXPECT_LE(net.weight(l).cwiseAbs().maxCoeff(), bound);
        EXPECT_GT(net.weight(l).cwiseAbs().maxCoeff(), 0.5 * bound);
        EXPECT_EQ(net.bias(l).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Mlp, RejectsWrongInputDimension) {
    const auto net = Mlp<double>::with_hidden(4, 8, 1, 2);
    EXPECT_THROW(net.forward(MatX<double>::Zero(3, 1)), std::invalid_argument);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    auto net = Mlp<double>::with_hidden(5, 8, 2, 3);
    net.init(rng);
    for (int l = 0; l < net.layer_count(); ++l) net.bias(l) = random_matrix(net.dims()[l + 1], 1, rng, 0.1);
    MatX<double> x = random_matrix(5, 4, rng);
    const MatX<double> w = random_matrix(3, 4, rng);
    auto loss = [&] { return (net.forward(x).array() * w.array()).sum(); };

    typename Mlp<double>::Cache cache;
    net.forward(x, &cache);
    std::vector<double> grad(net.params().size(), 0.0);
    const MatX<double> dx = net.backward(cache, w, grad);

    const auto check = compare_gradients(grad, central_differences(net.params(), loss), 1e-7);
    EXPECT_LT(check.max_rel, 1e-5) << "param " << check.worst;
    const auto numeric_x = central_differences(x.data(), x.size(), loss);
    const auto check_x = compare_gradients(std::vector<double>(dx.data(), dx.data() + dx.size()), numeric_x, 1e-7);
    EXPECT_LT(check_x.max_rel, 1e-5);
}

TEST(Weighting, ColumnsAreProbabilityVectors) {
    std::mt19937_64 rng(4);
    auto net = make_weighting_net<double>(8, 3);
    net.init(rng);
    for (int trial = 0; trial < 50; ++trial) {
        const MatX<double> emb = random_matrix(6, 8, rng, trial % 5 == 0 ? 30.0 : 1.0);
        const Vec3<double> xcam = random_matrix(3, 1, rng).col(0);
        const MatX<double> w = weighting_forward(net, emb, xcam);
        ASSERT_EQ(w.rows(), 3);
        ASSERT_EQ(w.cols(), 6);
        EXPECT_GE(w.minCoeff(), 0.0);
        for (Eigen::Index c = 0; c < w.cols(); ++c) EXPECT_NEAR(w.col(c).sum(), 1.0, 1e-12);
    }
}

TEST(Weighting, SingleRowMatchesBatch) {
    std::mt19937_64 rng(5);
    auto net = make_weighting_net<double>(4, 2);
    net.init(rng);
    const MatX<double> emb = random_matrix(3, 4, rng);
    const Vec3<double> xcam(0.2, -0.5, 0.9);
    const MatX<double> batch = weighting_forward(net, emb, xcam);
    for (int k = 0; k < 3; ++k) {
        const VecX<double> row = cluster_weights<double>(net, emb.row(k).transpose(), xcam);
        EXPECT_LT((row - batch.col(k)).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Weighting, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    auto net = make_weighting_net<double>(4, 3);
    net.init(rng);
    MatX<double> emb = random_matrix(5, 4, rng);
    const Vec3<double> xcam(0.3, 0.1, -0.7);
    const MatX<double> dw = random_matrix(3, 5, rng);
    auto loss = [&] { return (weighting_forward(net, emb, xcam).array() * dw.array()).sum(); };

    WeightingCache<double> cache;
    weighting_forward(net, emb, xcam, &cache);
    std::vector<double> grad(net.params().size(), 0.0);
    MatX<double> demb = MatX<double>::Zero(5, 4);
    weighting_backward(net, cache, dw, std::span<double>(grad), demb);

    EXPECT_LT(compare_gradients(grad, central_differences(net.params(), loss), 1e-7).max_rel, 1e-5);
    const auto numeric = central_differences(emb.data(), emb.size(), loss);
    EXPECT_LT(compare_gradients(std::vector<double>(demb.data(), demb.data() + demb.size()), numeric, 1e-7).max_rel,
              1e-5);
}

TEST(Correction, OutputIsBounded) {
    std::mt19937_64 rng(7);
    auto net = make_correction_net<double>(6);
    net.init(rng, 10.0);
    for (int trial = 0; trial < 20; ++trial) {
        const MatX<double> emb = random_matrix(9, 6, rng, 20.0);
        const VecX<double> app = random_matrix(6, 1, rng, 20.0).col(0);
        const MatX<double> out = color_correction(net, emb, app);
        ASSERT_EQ(out.rows(), 3);
        ASSERT_EQ(out.cols(), 9);
        EXPECT_LE(out.cwiseAbs().maxCoeff(), 0.5);
    }
}

TEST(Correction, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    auto net = make_correction_net<double>(4);
    net.init(rng);
    MatX<double> emb = random_matrix(3, 4, rng);
    VecX<double> app = random_matrix(4, 1, rng).col(0);
    const MatX<double> dout = random_matrix(3, 3, rng);
    auto loss = [&] { return (color_correction(net, emb, app).array() * dout.array()).sum(); };

    CorrectionCache<double> cache;
    color_correction(net, emb, app, &cache);
    std::vector<double> grad(net.params().size(), 0.0);
    MatX<double> demb = MatX<double>::Zero(3, 4);
    VecX<double> dapp = VecX<double>::Zero(4);
    color_correction_backward(net, cache, dout, std::span<double>(grad), demb, dapp);

    EXPECT_LT(compare_gradients(grad, central_differences(net.params(), loss), 1e-7).max_rel, 1e-5);
    EXPECT_LT(compare_gradients(std::vector<double>(demb.data(), demb.data() + demb.size()),
                                central_differences(emb.data(), emb.size(), loss), 1e-7)
                  .max_rel,
              1e-5);
    EXPECT_LT(compare_gradients(std::vector<double>(dapp.data(), dapp.data() + dapp.size()),
                                central_differences(app.data(), app.size(), loss), 1e-7)
                  .max_rel,
              1e-5);
}

TEST(Embeddings, RandomInitStatistics) {
    std::mt19937_64 rng(9);
    const auto e = Embeddings<double>::random(200, 50, 64, rng);
    EXPECT_EQ(e.cluster.rows(), 200);
    EXPECT_EQ(e.appearance.rows(), 50);
    const double sd = std::sqrt(e.cluster.array().square().mean());
    EXPECT_NEAR(sd, 0.01, 0.001);
    EXPECT_LT((e.mean_appearance() - e.appearance.colwise().mean().transpose()).norm(), 1e-15);
}
