// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Central finite differences, used as the independent oracle for every analytic gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace pygs::testing {

// Perturbs params[i] in place, evaluates f at +h and -h, restores it.
inline std::vector<double> central_differences(std::vector<double>& params, const std::function<double()>& f,
                                               double h = 1e-6) {
    std::vector<double> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double old = params[i];
        params[i] = old + h;
        const double fp = f();
        params[i] = old - h;
        const double fm = f();
        params[i] = old;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Same, but over a raw buffer of doubles.
inline std::vector<double> central_differences(double* data, std::size_t n, const std::function<double()>& f,
                                               double h = 1e-6) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double old = data[i];
        data[i] = old + h;
        const double fp = f();
        data[i] = old - h;
        const double fm = f();
        data[i] = old;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t worst = 0;
    std::size_t count = 0;
    bool nonzero = false;
};

// Relative error per entry: |a - n| / max(|a|, |n|, floor), where the floor is at least
// 1e-4 of the largest numeric entry. Entries that are tiny compared with the gradient as a
// whole are dominated by finite-difference round-off and would otherwise decide the statistic.
inline GradCheck compare_gradients(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                   double floor = 1e-8) {
    GradCheck r;
    for (double n : numeric) floor = std::max(floor, 1e-4 * std::abs(n));
    r.count = analytic.size();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        const double rel = std::abs(a - n) / denom;
        if (std::abs(a) > floor) r.nonzero = true;
        if (rel > r.max_rel) {
            r.max_rel = rel;
            r.worst = i;
        }
    }
    return r;
}

} // namespace pygs::testing
