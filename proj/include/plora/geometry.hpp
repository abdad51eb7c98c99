// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "plora/common.hpp"

namespace plora {

template <typename T>
struct PointCloud {
    std::vector<std::array<T, 3>> points;
    int label = -1;

    std::size_t size() const { return points.size(); }
};

// Centered neighborhoods around sampled centers. neighbors holds g*k rows of
// (point - center); un-centering with the stored center indices reconstructs
// the source coordinates exactly.
template <typename T>
struct PatchSet {
    std::size_t group_count = 0;
    std::size_t group_size = 0;
    std::vector<std::size_t> center_indices;            // g
    std::vector<std::array<T, 3>> centers;              // g
    std::vector<std::size_t> neighbor_indices;          // g*k
    std::vector<std::array<T, 3>> centered_neighbors;   // g*k
};

template <typename T>
inline T squared_distance(const std::array<T, 3>& a, const std::array<T, 3>& b) {
    const T dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Greedy max-min selection: starts at seed_index, then repeatedly picks the
// point farthest from the already selected set. Distances are squared
// euclidean; ties break toward the lower index. Returns indices in selection
// order.
template <typename T>
std::vector<std::size_t> farthest_point_sampling(const PointCloud<T>& cloud, std::size_t g,
                                                 std::size_t seed_index = 0) {
    const std::size_t n = cloud.size();
    if (n == 0) throw ContractError("farthest_point_sampling on empty cloud");
    if (g < 1 || g > n)
        throw RangeError("farthest_point_sampling: g=" + std::to_string(g) +
                         " out of range for cloud of " + std::to_string(n));
    if (seed_index >= n) throw RangeError("farthest_point_sampling: seed index out of range");

    std::vector<std::size_t> selected;
    selected.reserve(g);
    std::vector<T> min_dist(n, std::numeric_limits<T>::max());
    std::vector<char> chosen(n, 0);
    std::size_t current = seed_index;
    selected.push_back(current);
    chosen[current] = 1;
    for (std::size_t step = 1; step < g; ++step) {
        std::size_t best = n;
        T best_dist = -T(1);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = squared_distance(cloud.points[i], cloud.points[current]);
            if (d < min_dist[i]) min_dist[i] = d;
            if (!chosen[i] && min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push_back(current);
        chosen[current] = 1;
    }
    return selected;
}

// For each center, the k nearest points by squared euclidean distance, the
// center itself eligible. Rows are sorted by ascending distance, ties toward
// the lower index.
template <typename T>
std::vector<std::size_t> k_nearest_neighbors(const PointCloud<T>& cloud,
                                             const std::vector<std::size_t>& centers,
                                             std::size_t k) {
    const std::size_t n = cloud.size();
    if (k < 1 || k > n)
        throw RangeError("k_nearest_neighbors: k=" + std::to_string(k) +
                         " out of range for cloud of " + std::to_string(n));
    std::vector<std::size_t> result;
    result.reserve(centers.size() * k);
    std::vector<std::pair<T, std::size_t>> order(n);
    for (std::size_t c : centers) {
        if (c >= n) throw RangeError("k_nearest_neighbors: center index out of range");
        for (std::size_t i = 0; i < n; ++i)
            order[i] = {squared_distance(cloud.points[i], cloud.points[c]), i};
        std::partial_sort(order.begin(), order.begin() + k, order.end());
        for (std::size_t i = 0; i < k; ++i) result.push_back(order[i].second);
    }
    return result;
}

template <typename T>
PatchSet<T> group_and_center(const PointCloud<T>& cloud,
                             const std::vector<std::size_t>& center_indices,
                             const std::vector<std::size_t>& neighbor_indices, std::size_t k) {
    const std::size_t g = center_indices.size();
    if (neighbor_indices.size() != g * k)
        throw DimensionError("group_and_center: neighbor list does not match g*k");
    PatchSet<T> patches;
    patches.group_count = g;
    patches.group_size = k;
    patches.center_indices = center_indices;
    patches.neighbor_indices = neighbor_indices;
    patches.centers.reserve(g);
    patches.centered_neighbors.reserve(g * k);
    for (std::size_t gi = 0; gi < g; ++gi) {
        const auto& c = cloud.points.at(center_indices[gi]);
        patches.centers.push_back(c);
        for (std::size_t ki = 0; ki < k; ++ki) {
            const auto& p = cloud.points.at(neighbor_indices[gi * k + ki]);
            patches.centered_neighbors.push_back({p[0] - c[0], p[1] - c[1], p[2] - c[2]});
        }
    }
    return patches;
}

// fps + knn + centering in one call
template <typename T>
PatchSet<T> build_patches(const PointCloud<T>& cloud, std::size_t g, std::size_t k,
                          std::size_t seed_index = 0) {
    auto centers = farthest_point_sampling(cloud, g, seed_index);
    auto neighbors = k_nearest_neighbors(cloud, centers, k);
    return group_and_center(cloud, centers, neighbors, k);
}

}  // namespace plora
