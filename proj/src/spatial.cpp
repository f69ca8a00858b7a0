// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace pygs {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(const std::vector<Vec3f>& points) : points_(points), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points.empty()) {
        nodes_.reserve(2 * points.size() / kLeafSize + 2);
        build(0, static_cast<std::uint32_t>(points.size()), 0);
    }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize || depth > 64) return id;
    Vec3f lo = Vec3f::Constant(std::numeric_limits<float>::max());
    Vec3f hi = Vec3f::Constant(std::numeric_limits<float>::lowest());
    for (std::uint32_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    const float spread = (hi - lo).maxCoeff(&axis);
    if (spread <= 0.0f) return id;
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const auto left = build(begin, mid, depth + 1);
    const auto right = build(mid, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<double> KdTree::nearest(const Vec3f& query, int k, std::int64_t exclude) const {
    std::priority_queue<double> best; // max-heap of the k smallest distances
    if (nodes_.empty() || k <= 0) return {};
    auto worst = [&] { return static_cast<int>(best.size()) < k ? std::numeric_limits<double>::infinity() : best.top(); };
    // Iterative descent with an explicit stack of (node, lower bound on distance).
    std::vector<std::pair<std::int32_t, double>> stack{{0, 0.0}};
    while (!stack.empty()) {
        const auto [id, bound] = stack.back();
        stack.pop_back();
        if (bound >= worst()) continue;
        const Node& n = nodes_[id];
        if (n.left < 0) {
            for (std::uint32_t i = n.begin; i < n.end; ++i) {
                if (static_cast<std::int64_t>(order_[i]) == exclude) continue;
                const double d = squared_distance(query, points_[order_[i]]);
                if (d < worst()) {
                    best.push(d);
                    if (static_cast<int>(best.size()) > k) best.pop();
                }
            }
            continue;
        }
        const double diff = static_cast<double>(query[n.axis]) - n.split;
        const std::int32_t near = diff < 0.0 ? n.left : n.right;
        const std::int32_t far = diff < 0.0 ? n.right : n.left;
        stack.emplace_back(far, std::max(bound, diff * diff));
        stack.emplace_back(near, bound);
    }
    std::vector<double> out;
    while (!best.empty()) {
        out.push_back(best.top());
        best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

CentroidGrid::CentroidGrid(const std::vector<Vec3f>& centroids) : centroids_(centroids) {
    if (centroids_.empty()) throw std::invalid_argument("centroid grid needs at least one centroid");
    Vec3f lo = centroids_[0], hi = centroids_[0];
    for (const auto& c : centroids_) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    // About two centroids per occupied cell for a volumetric spread.
    const int per_axis = std::max(1, static_cast<int>(std::cbrt(centroids_.size() / 2.0)));
    for (int a = 0; a < 3; ++a) {
        const float ext = hi[a] - lo[a];
        dims_[a] = ext > 0.0f ? per_axis : 1;
        cell_size_[a] = ext > 0.0f ? ext / static_cast<float>(dims_[a]) : 1.0f;
    }
    origin_ = lo;
    const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    std::vector<std::uint32_t> cell(centroids_.size());
    cell_start_.assign(cells + 1, 0);
    for (std::size_t i = 0; i < centroids_.size(); ++i) {
        const auto c = cell_of(centroids_[i]);
        cell[i] = static_cast<std::uint32_t>((static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0]);
        ++cell_start_[cell[i] + 1];
    }
    std::partial_sum(cell_start_.begin(), cell_start_.end(), cell_start_.begin());
    items_.resize(centroids_.size());
    std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < centroids_.size(); ++i) items_[fill[cell[i]]++] = static_cast<std::uint32_t>(i);
}

std::array<int, 3> CentroidGrid::cell_of(const Vec3f& p) const {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a) {
        const double f = std::floor((static_cast<double>(p[a]) - origin_[a]) / cell_size_[a]);
        c[a] = static_cast<int>(std::clamp(f, 0.0, static_cast<double>(dims_[a] - 1)));
    }
    return c;
}

std::uint32_t CentroidGrid::nearest(const Vec3f& p) const {
    const auto home = cell_of(p);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_index = 0;
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int r = 0; r <= max_ring; ++r) {
        std::array<int, 3> lo, hi;
        bool covers_all = true;
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, home[a] - r);
            hi[a] = std::min(dims_[a] - 1, home[a] + r);
            covers_all = covers_all && lo[a] == 0 && hi[a] == dims_[a] - 1;
        }
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    // Only the shell of the cube is new at ring r.
                    if (std::max({std::abs(x - home[0]), std::abs(y - home[1]), std::abs(z - home[2])}) != r) continue;
                    const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
                    for (std::uint32_t j = cell_start_[cell]; j < cell_start_[cell + 1]; ++j) {
                        const std::uint32_t idx = items_[j];
                        const double d = squared_distance(p, centroids_[idx]);
                        if (d < best || (d == best && idx < best_index)) {
                            best = d;
                            best_index = idx;
                        }
                    }
                }
        if (covers_all) break;
        // Anything outside the searched cube is at least this far away; a centroid at
        // exactly this distance could still win a tie, hence the strict comparison.
        double margin = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            if (lo[a] > 0) margin = std::min(margin, static_cast<double>(p[a]) - (origin_[a] + lo[a] * static_cast<double>(cell_size_[a])));
            if (hi[a] < dims_[a] - 1)
                margin = std::min(margin, origin_[a] + (hi[a] + 1) * static_cast<double>(cell_size_[a]) - p[a]);
        }
        margin -= 1e-6 * cell_size_.minCoeff(); // slack for rounding in cell_of
        if (margin > 0.0 && best < margin * margin) break;
    }
    return best_index;
}

} // namespace pygs
