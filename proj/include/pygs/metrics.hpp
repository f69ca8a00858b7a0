// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"
#include "pygs/image.hpp"

#include <array>
#include <cmath>

namespace pygs::metrics {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 100.0;

inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace detail {

// Separable valid-region correlation of one channel: out is (h-10) x (w-10).
template <typename T>
void filter_valid(const std::vector<T>& in, int w, int h, std::vector<T>& out, std::vector<T>& tmp) {
    static const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1;
    const int oh = h - kSsimWindow + 1;
    tmp.assign(static_cast<std::size_t>(oh) * w, T(0));
    for (int y = 0; y < oh; ++y)
        for (int t = 0; t < kSsimWindow; ++t) {
            const T kt = T(k[t]);
            const T* row = &in[static_cast<std::size_t>(y + t) * w];
            T* dst = &tmp[static_cast<std::size_t>(y) * w];
            for (int x = 0; x < w; ++x) dst[x] += kt * row[x];
        }
    out.assign(static_cast<std::size_t>(oh) * ow, T(0));
    for (int y = 0; y < oh; ++y) {
        const T* src = &tmp[static_cast<std::size_t>(y) * w];
        T* dst = &out[static_cast<std::size_t>(y) * ow];
        for (int x = 0; x < ow; ++x) {
            T acc = T(0);
            for (int t = 0; t < kSsimWindow; ++t) acc += T(k[t]) * src[x + t];
            dst[x] = acc;
        }
    }
}

// Adjoint of filter_valid: accumulates into din (h x w).
template <typename T>
void filter_valid_adjoint(const std::vector<T>& dout, int w, int h, std::vector<T>& din, std::vector<T>& tmp) {
    static const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1;
    const int oh = h - kSsimWindow + 1;
    tmp.assign(static_cast<std::size_t>(oh) * w, T(0));
    for (int y = 0; y < oh; ++y) {
        const T* src = &dout[static_cast<std::size_t>(y) * ow];
        T* dst = &tmp[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < ow; ++x)
            for (int t = 0; t < kSsimWindow; ++t) dst[x + t] += T(k[t]) * src[x];
    }
    for (int y = 0; y < oh; ++y)
        for (int t = 0; t < kSsimWindow; ++t) {
            const T kt = T(k[t]);
            const T* src = &tmp[static_cast<std::size_t>(y) * w];
            T* dst = &din[static_cast<std::size_t>(y + t) * w];
            for (int x = 0; x < w; ++x) dst[x] += kt * src[x];
        }
}

} // namespace detail

/// Mean single-scale SSIM over valid window positions, averaged over channels.
/// When `grad_b` is non-null it receives d(ssim)/d(b).
template <typename T> T ssim(const Image<T>& a, const Image<T>& b, Image<T>* grad_b = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: image shapes differ");
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw std::invalid_argument("ssim: images must be at least 11x11");
    const int w = a.width, h = a.height, nc = a.channels;
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const std::size_t on = static_cast<std::size_t>(ow) * oh;
    const T c1 = T(kSsimC1), c2 = T(kSsimC2);
    const T norm = T(1) / (T(nc) * T(on));

    if (grad_b) *grad_b = Image<T>(w, h, nc);
    std::vector<T> xa(n), xb(n), prod(n), tmp;
    std::vector<T> mu_a, mu_b, s_aa, s_bb, s_ab;
    T total = T(0);
    for (int c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            xa[i] = a.data[i * nc + c];
            xb[i] = b.data[i * nc + c];
        }
        detail::filter_valid(xa, w, h, mu_a, tmp);
        detail::filter_valid(xb, w, h, mu_b, tmp);
        for (std::size_t i = 0; i < n; ++i) prod[i] = xa[i] * xa[i];
        detail::filter_valid(prod, w, h, s_aa, tmp);
        for (std::size_t i = 0; i < n; ++i) prod[i] = xb[i] * xb[i];
        detail::filter_valid(prod, w, h, s_bb, tmp);
        for (std::size_t i = 0; i < n; ++i) prod[i] = xa[i] * xb[i];
        detail::filter_valid(prod, w, h, s_ab, tmp);

        std::vector<T> d_mu, d_sbb, d_sab;
        if (grad_b) {
            d_mu.resize(on);
            d_sbb.resize(on);
            d_sab.resize(on);
        }
        for (std::size_t i = 0; i < on; ++i) {
            const T ma = mu_a[i], mb = mu_b[i];
            const T var_a = s_aa[i] - ma * ma;
            const T var_b = s_bb[i] - mb * mb;
            const T cov = s_ab[i] - ma * mb;
            const T a1 = T(2) * ma * mb + c1;
            const T a2 = T(2) * cov + c2;
            const T b1 = ma * ma + mb * mb + c1;
            const T b2 = var_a + var_b + c2;
            const T s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad_b) {
                d_sab[i] = norm * T(2) * a1 / (b1 * b2);
                d_sbb[i] = -norm * s / b2;
                d_mu[i] = norm * (T(2) * ma * (a2 - a1) / (b1 * b2) - T(2) * mb * s * (T(1) / b1 - T(1) / b2));
            }
        }
        if (grad_b) {
            std::vector<T> g_mu(n, T(0)), g_sbb(n, T(0)), g_sab(n, T(0));
            detail::filter_valid_adjoint(d_mu, w, h, g_mu, tmp);
            detail::filter_valid_adjoint(d_sbb, w, h, g_sbb, tmp);
            detail::filter_valid_adjoint(d_sab, w, h, g_sab, tmp);
            for (std::size_t i = 0; i < n; ++i)
                grad_b->data[i * nc + c] = g_mu[i] + T(2) * xb[i] * g_sbb[i] + xa[i] * g_sab[i];
        }
    }
    return total * norm;
}

template <typename T> T compute_ssim(const Image<T>& a, const Image<T>& b) { return ssim(a, b); }

template <typename T> T mse(const Image<T>& a, const Image<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: image shapes differ");
    T acc = T(0);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const T d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / T(a.data.size());
}

/// 10 log10(1 / MSE) for [0, 1] images; identical images report kPsnrCap.
template <typename T> double compute_psnr(const Image<T>& a, const Image<T>& b) {
    const double m = static_cast<double>(mse(a, b));
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

enum class SsimTerm { Dissimilarity, Raw };

struct LossOptions {
    double lambda = 0.8;
    SsimTerm ssim_term = SsimTerm::Dissimilarity;
};

/// lambda * MSE + (1 - lambda) * (1 - SSIM) between ground truth `gt` and `rendered`.
/// `grad` (optional) receives d(loss)/d(rendered). Images smaller than the SSIM window
/// only support lambda == 1.
template <typename T>
T photometric_loss(const Image<T>& gt, const Image<T>& rendered, const LossOptions& opt, Image<T>* grad = nullptr) {
    if (!gt.same_shape(rendered)) throw std::invalid_argument("loss: image shapes differ");
    const T lambda = T(opt.lambda);
    const T n = T(gt.data.size());
    T loss = lambda * mse(gt, rendered);
    if (grad) {
        *grad = Image<T>(gt.width, gt.height, gt.channels);
        for (std::size_t i = 0; i < gt.data.size(); ++i)
            grad->data[i] = lambda * T(2) * (rendered.data[i] - gt.data[i]) / n;
    }
    if (opt.lambda < 1.0) {
        Image<T> g_ssim;
        const T s = ssim(gt, rendered, grad ? &g_ssim : nullptr);
        const T sign = opt.ssim_term == SsimTerm::Dissimilarity ? T(-1) : T(1);
        loss += (T(1) - lambda) * (opt.ssim_term == SsimTerm::Dissimilarity ? T(1) - s : s);
        if (grad)
            for (std::size_t i = 0; i < gt.data.size(); ++i) grad->data[i] += (T(1) - lambda) * sign * g_ssim.data[i];
    }
    return loss;
}

} // namespace pygs::metrics
