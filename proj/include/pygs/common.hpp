// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pygs {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T> using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T> using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

// Malformed or missing input data (files, datasets, checkpoints).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Optimization diverged or produced non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration supplied by the caller.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Aabb {
    Vec3f min = Vec3f::Constant(-1.0f);
    Vec3f max = Vec3f::Constant(1.0f);

    Vec3f extent() const { return max - min; }
    Vec3f center() const { return 0.5f * (min + max); }
    bool contains(const Vec3f& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    // Maps the box onto [-1, 1]^3.
    template <typename T> Vec3<T> normalize(const Vec3<T>& p) const {
        Vec3<T> out;
        for (int a = 0; a < 3; ++a) {
            const T lo = static_cast<T>(min[a]);
            const T hi = static_cast<T>(max[a]);
            out[a] = T(2) * (p[a] - lo) / (hi - lo) - T(1);
        }
        return out;
    }
};

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static contiguous partition of [0, n) over `threads` workers. fn(begin, end, worker).
// The partition depends only on n and the thread count, so per-worker reductions are reproducible.
template <typename Fn> void parallel_for(std::size_t n, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n < 2) {
        fn(std::size_t{0}, n, 0);
        return;
    }
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e, w] { fn(b, e, static_cast<int>(w)); });
    }
    fn(std::size_t{0}, std::min(n, chunk), 0);
    for (auto& t : pool) t.join();
}

template <typename T> inline T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

template <typename T> inline T logit(T p) { return std::log(p / (T(1) - p)); }

template <typename T> inline T softplus(T x) {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

} // namespace pygs
