// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/common.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace pygs {

inline double squared_distance(const Vec3f& a, const Vec3f& b) {
    const double dx = static_cast<double>(a[0]) - b[0];
    const double dy = static_cast<double>(a[1]) - b[1];
    const double dz = static_cast<double>(a[2]) - b[2];
    return dx * dx + dy * dy + dz * dz;
}

/// Static 3-d tree over a point set for k-nearest-neighbor queries.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3f>& points);

    /// Squared distances to the k nearest points other than `exclude` (ascending). Fewer
    /// than k entries when the set is smaller.
    std::vector<double> nearest(const Vec3f& query, int k, std::int64_t exclude = -1) const;

private:
    struct Node {
        std::uint32_t begin, end; // range in order_
        std::int32_t left = -1, right = -1;
        int axis = 0;
        float split = 0.0f;
    };
    std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);

    const std::vector<Vec3f>& points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Uniform grid over a centroid table. nearest() returns the exact argmin of squared
/// distance with ties going to the lowest index, identical to an exhaustive scan.
class CentroidGrid {
public:
    explicit CentroidGrid(const std::vector<Vec3f>& centroids);

    std::uint32_t nearest(const Vec3f& p) const;

private:
    std::array<int, 3> cell_of(const Vec3f& p) const;

    std::vector<Vec3f> centroids_;
    Vec3f origin_ = Vec3f::Zero();
    Vec3f cell_size_ = Vec3f::Ones();
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::uint32_t> cell_start_; // CSR over cells
    std::vector<std::uint32_t> items_;
};

} // namespace pygs
