// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace pygs {

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// First and second moments for one parameter group. The step counter is shared by the
/// group, so rows added later (densification) start with zero moments but the group's
/// bias correction.
template <typename T> struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step = 0;

    void resize(std::size_t n) {
        m.resize(n, T(0));
        v.resize(n, T(0));
    }

    void step_update(std::span<T> params, std::span<const T> grad, const AdamParams& p) {
        if (params.size() != grad.size()) throw std::invalid_argument("adam: gradient size mismatch");
        if (m.size() != params.size()) resize(params.size());
        ++step;
        const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
        const T step_size = static_cast<T>(p.lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T b1 = static_cast<T>(p.beta1), b2 = static_cast<T>(p.beta2), eps = static_cast<T>(p.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const T g = grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            params[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
        }
    }
};

} // namespace pygs
