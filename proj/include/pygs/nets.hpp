// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"
#include "pygs/geom.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace pygs::nets {

inline constexpr int kCameraFreqs = 4;
inline constexpr int kDefaultWidth = 64;
inline constexpr int kDefaultHiddenLayers = 3;
inline constexpr int kDefaultEmbeddingDim = 64;

/// Fully connected ReLU network with a linear output layer. Parameters live in one
/// flat buffer (per layer: column-major weight matrix, then bias) so optimizers and
/// checkpoints can treat them as a single array.
template <typename T> class Mlp {
public:
    struct Cache {
        std::vector<MatX<T>> inputs; // input of each layer (post-activation of the previous one)
    };

    Mlp() = default;
    explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
        if (dims_.size() < 2) throw ConfigError("mlp needs at least input and output dimensions");
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) n += static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
        params_.assign(n, T(0));
    }

    static Mlp with_hidden(int in, int width, int hidden_layers, int out) {
        std::vector<int> dims{in};
        for (int i = 0; i < hidden_layers; ++i) dims.push_back(width);
        dims.push_back(out);
        return Mlp(std::move(dims));
    }

    /// Kaiming-uniform fan-in init for hidden layers, zero biases; the output layer is
    /// additionally scaled by `output_gain`.
    template <typename Rng> void init(Rng& rng, T output_gain = T(1)) {
        for (int l = 0; l < layer_count(); ++l) {
            const T bound = std::sqrt(T(6) / T(dims_[l])) * (l + 1 == layer_count() ? output_gain : T(1));
            std::uniform_real_distribution<double> dist(-1.0, 1.0);
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * T(dist(rng));
            bias(l).setZero();
        }
    }

    int layer_count() const { return static_cast<int>(dims_.size()) - 1; }
    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    const std::vector<int>& dims() const { return dims_; }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }

    Eigen::Map<MatX<T>> weight(int l) { return {params_.data() + offset(l), dims_[l + 1], dims_[l]}; }
    Eigen::Map<const MatX<T>> weight(int l) const { return {params_.data() + offset(l), dims_[l + 1], dims_[l]}; }
    Eigen::Map<VecX<T>> bias(int l) { return {params_.data() + offset(l) + dims_[l + 1] * dims_[l], dims_[l + 1]}; }
    Eigen::Map<const VecX<T>> bias(int l) const {
        return {params_.data() + offset(l) + dims_[l + 1] * dims_[l], dims_[l + 1]};
    }

    /// x: input_dim x batch. Returns output_dim x batch.
    MatX<T> forward(const MatX<T>& x, Cache* cache = nullptr) const {
        if (x.rows() != input_dim()) throw std::invalid_argument("mlp forward: input dimension mismatch");
        if (cache) cache->inputs.assign(layer_count(), MatX<T>());
        MatX<T> h = x;
        for (int l = 0; l < layer_count(); ++l) {
            if (cache) cache->inputs[l] = h;
            MatX<T> z = weight(l) * h;
            z.colwise() += bias(l);
            if (l + 1 < layer_count()) z = z.cwiseMax(T(0));
            h = std::move(z);
        }
        return h;
    }

    /// Reverse pass for the matching forward. Accumulates parameter gradients into `grad`
    /// (same layout as params()) and returns d(loss)/d(input).
    MatX<T> backward(const Cache& cache, const MatX<T>& dy, std::span<T> grad) const {
        if (static_cast<int>(cache.inputs.size()) != layer_count())
            throw std::logic_error("mlp backward: missing forward cache");
        if (grad.size() != params_.size()) throw std::invalid_argument("mlp backward: gradient buffer size mismatch");
        MatX<T> g = dy;
        for (int l = layer_count() - 1; l >= 0; --l) {
            const MatX<T>& in = cache.inputs[l];
            Eigen::Map<MatX<T>> gw(grad.data() + offset(l), dims_[l + 1], dims_[l]);
            Eigen::Map<VecX<T>> gb(grad.data() + offset(l) + dims_[l + 1] * dims_[l], dims_[l + 1]);
            gw += g * in.transpose();
            gb += g.rowwise().sum();
            MatX<T> gin = weight(l).transpose() * g;
            if (l > 0) gin = (in.array() > T(0)).select(gin, T(0));
            g = std::move(gin);
        }
        return g;
    }

    template <typename U> Mlp<U> cast() const {
        Mlp<U> out(dims_);
        for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
        return out;
    }

private:
    std::size_t offset(int l) const {
        std::size_t o = 0;
        for (int i = 0; i < l; ++i) o += static_cast<std::size_t>(dims_[i + 1]) * (dims_[i] + 1);
        return o;
    }

    std::vector<int> dims_;
    std::vector<T> params_;
};

/// Cluster embedding E_c (K x D) and per-camera appearance embedding E_app (N_cam x D).
template <typename T> struct Embeddings {
    MatX<T> cluster;
    MatX<T> appearance;

    int dim() const { return static_cast<int>(cluster.cols()); }

    template <typename Rng> static Embeddings random(int clusters, int cameras, int dim, Rng& rng, double sigma = 0.01) {
        std::normal_distribution<double> dist(0.0, sigma);
        Embeddings e;
        e.cluster.resize(clusters, dim);
        e.appearance.resize(cameras, dim);
        for (Eigen::Index i = 0; i < e.cluster.size(); ++i) e.cluster.data()[i] = T(dist(rng));
        for (Eigen::Index i = 0; i < e.appearance.size(); ++i) e.appearance.data()[i] = T(dist(rng));
        return e;
    }

    // Appearance row for cameras outside the training set.
    VecX<T> mean_appearance() const {
        if (appearance.rows() == 0) return VecX<T>::Zero(cluster.cols());
        return appearance.colwise().mean().transpose();
    }
};

template <typename T> Mlp<T> make_weighting_net(int embedding_dim, int levels) {
    return Mlp<T>::with_hidden(embedding_dim + geom::positional_encoding_size(kCameraFreqs), kDefaultWidth,
                               kDefaultHiddenLayers, levels);
}

template <typename T> Mlp<T> make_correction_net(int embedding_dim) {
    return Mlp<T>::with_hidden(2 * embedding_dim, kDefaultWidth, kDefaultHiddenLayers, 3);
}

/// Column-wise softmax of a (L x batch) logit matrix.
template <typename T> MatX<T> softmax_columns(const MatX<T>& logits) {
    MatX<T> out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const T mx = logits.col(c).maxCoeff();
        VecX<T> e = (logits.col(c).array() - mx).exp().matrix();
        out.col(c) = e / e.sum();
    }
    return out;
}

template <typename T> struct WeightingCache {
    typename Mlp<T>::Cache mlp;
    MatX<T> weights; // L x K
};

/// Level weights for every cluster row of `cluster` (K x D) seen from the normalized
/// camera center `xcam`. Returns L x K; each column sums to 1.
template <typename T>
MatX<T> weighting_forward(const Mlp<T>& net, const MatX<T>& cluster, const Vec3<T>& xcam,
                          WeightingCache<T>* cache = nullptr) {
    const VecX<T> pe = geom::positional_encoding(xcam, kCameraFreqs);
    const Eigen::Index k = cluster.rows(), d = cluster.cols();
    MatX<T> in(d + pe.size(), k);
    in.topRows(d) = cluster.transpose();
    in.bottomRows(pe.size()) = pe.replicate(1, k);
    MatX<T> w = softmax_columns(net.forward(in, cache ? &cache->mlp : nullptr));
    if (cache) cache->weights = w;
    return w;
}

/// Single-row convenience form: softmax(F(concat(e, PE(xcam)))).
template <typename T> VecX<T> cluster_weights(const Mlp<T>& net, const VecX<T>& e, const Vec3<T>& xcam) {
    MatX<T> row = e.transpose();
    return weighting_forward(net, row, xcam).col(0);
}

/// `dweights` is L x K. Accumulates into net gradient and `dcluster` (K x D).
template <typename T>
void weighting_backward(const Mlp<T>& net, const WeightingCache<T>& cache, const MatX<T>& dweights,
                        std::span<T> net_grad, MatX<T>& dcluster) {
    const MatX<T>& w = cache.weights;
    MatX<T> dlogits(w.rows(), w.cols());
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const T dotp = w.col(c).dot(dweights.col(c));
        dlogits.col(c) = w.col(c).cwiseProduct((dweights.col(c).array() - dotp).matrix());
    }
    const MatX<T> din = net.backward(cache.mlp, dlogits, net_grad);
    dcluster += din.topRows(dcluster.cols()).transpose();
}

template <typename T> struct CorrectionCache {
    typename Mlp<T>::Cache mlp;
    MatX<T> output; // 3 x K, after the bounded activation
};

/// Per-cluster color offsets 0.5 * tanh(F(concat(E_c[k], a))). Returns 3 x K in (-0.5, 0.5).
template <typename T>
MatX<T> color_correction(const Mlp<T>& net, const MatX<T>& cluster, const VecX<T>& appearance,
                         CorrectionCache<T>* cache = nullptr) {
    const Eigen::Index k = cluster.rows(), d = cluster.cols();
    MatX<T> in(2 * d, k);
    in.topRows(d) = cluster.transpose();
    in.bottomRows(d) = appearance.replicate(1, k);
    MatX<T> out = (T(0.5) * net.forward(in, cache ? &cache->mlp : nullptr).array().tanh()).matrix();
    if (cache) cache->output = out;
    return out;
}

template <typename T> Vec3<T> cluster_correction(const Mlp<T>& net, const VecX<T>& e, const VecX<T>& appearance) {
    MatX<T> row = e.transpose();
    return color_correction(net, row, appearance).col(0);
}

/// `doutput` is 3 x K. Accumulates into net gradient, `dcluster` (K x D) and `dappearance` (D).
template <typename T>
void color_correction_backward(const Mlp<T>& net, const CorrectionCache<T>& cache, const MatX<T>& doutput,
                               std::span<T> net_grad, MatX<T>& dcluster, VecX<T>& dappearance) {
    // d/dz 0.5 tanh(z) = 0.5 (1 - tanh^2) = 0.5 - 2 out^2
    const MatX<T> dz = (doutput.array() * (T(0.5) - T(2) * cache.output.array().square())).matrix();
    const MatX<T> din = net.backward(cache.mlp, dz, net_grad);
    const Eigen::Index d = dcluster.cols();
    dcluster += din.topRows(d).transpose();
    dappearance += din.bottomRows(d).rowwise().sum();
}

} // namespace pygs::nets
