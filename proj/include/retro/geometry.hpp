// Copyright 2026 The retrofpn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Spatial kernels on labeled point clouds: exact K-nearest-neighbor
// search (kd-tree), grid downsampling and voxelization with majority
// labels, and seeded random subsampling.
//
// Farthest-point sampling is not provided.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "retro/errors.hpp"

namespace retro {

using Vec3 = std::array<double, 3>;

inline constexpr int kIgnoreLabel = -1;

struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<int> labels;        // empty when unlabeled
  std::vector<double> features;   // row-major size() x feature_dim, may be empty
  std::size_t feature_dim = 0;

  std::size_t size() const noexcept { return coords.size(); }
  bool empty() const noexcept { return coords.empty(); }
  bool labeled() const noexcept { return !labels.empty(); }
};

/// Throws ArgumentError when coordinates are non-finite or row counts disagree.
inline void validate(const PointCloud& cloud) {
  for (const auto& p : cloud.coords) {
    for (double c : p) {
      if (!std::isfinite(c)) throw ArgumentError("point cloud has non-finite coordinates");
    }
  }
  if (cloud.labeled() && cloud.labels.size() != cloud.size()) {
    throw ArgumentError("point cloud label count differs from point count");
  }
  if (cloud.feature_dim && cloud.features.size() != cloud.size() * cloud.feature_dim) {
    throw ArgumentError("point cloud feature rows differ from point count");
  }
}

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// K neighbors per query row, row-major, distances nondecreasing per row.
struct NeighborMap {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> index;
  std::vector<double> dist2;

  bool empty() const noexcept { return rows == 0; }
  std::span<const std::uint32_t> row(std::size_t i) const { return {index.data() + i * k, k}; }
  std::span<const double> row_dist2(std::size_t i) const { return {dist2.data() + i * k, k}; }
};

namespace detail {

struct Candidate {
  double d2;
  std::uint32_t idx;
  // Lexicographic on (distance, index): equal distances prefer the smaller index.
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && idx < o.idx); }
};

}  // namespace detail

/// Exact kd-tree over a fixed set of points. Median split on the axis of
/// largest extent, 16 points per leaf, plain scan below 64 points.
class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 16;
  static constexpr std::size_t kBruteForceBelow = 64;

  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (points_.size() >= kBruteForceBelow) build(0, order_.size());
  }

  std::size_t size() const noexcept { return points_.size(); }

  /// The k nearest points to q, sorted by (distance, index).
  std::vector<detail::Candidate> query(const Vec3& q, std::size_t k) const {
    if (k == 0 || k > points_.size()) {
      throw ArgumentError("knn: K=" + std::to_string(k) + " must lie in [1," + std::to_string(points_.size()) + "]");
    }
    std::vector<detail::Candidate> heap;
    heap.reserve(k + 1);
    if (nodes_.empty()) {
      for (std::uint32_t i = 0; i < points_.size(); ++i) offer(heap, k, {squared_distance(q, points_[i]), i});
    } else {
      search(0, q, k, heap);
    }
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo{}, hi{};
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    Node node{begin, end};
    node.lo = node.hi = points_[order_[begin]];
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = points_[order_[i]];
      for (int a = 0; a < 3; ++a) {
        node.lo[a] = std::min(node.lo[a], p[a]);
        node.hi[a] = std::max(node.hi[a], p[a]);
      }
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    for (int a = 1; a < 3; ++a) {
      if (node.hi[a] - node.lo[a] > node.hi[axis] - node.lo[axis]) axis = a;
    }
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       return points_[x][axis] < points_[y][axis] ||
                              (points_[x][axis] == points_[y][axis] && x < y);
                     });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static void offer(std::vector<detail::Candidate>& heap, std::size_t k, detail::Candidate c) {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  static double box_distance(const Node& n, const Vec3& q) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double e = q[a] < n.lo[a] ? n.lo[a] - q[a] : (q[a] > n.hi[a] ? q[a] - n.hi[a] : 0.0);
      d += e * e;
    }
    return d;
  }

  void search(std::size_t id, const Vec3& q, std::size_t k, std::vector<detail::Candidate>& heap) const {
    const Node& n = nodes_[id];
    // Equal distance must still be visited: a smaller index may win the tie.
    if (heap.size() == k && box_distance(n, q) > heap.front().d2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        offer(heap, k, {squared_distance(q, points_[order_[i]]), order_[i]});
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    search(go_left ? n.left : n.right, q, k, heap);
    search(go_left ? n.right : n.left, q, k, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// K nearest `source` points for every query point.
inline NeighborMap knn_query(const KdTree& tree, std::span<const Vec3> queries, std::size_t k) {
  if (tree.size() == 0) throw ArgumentError("knn: source cloud is empty");
  if (k == 0 || k > tree.size()) {
    throw ArgumentError("knn: K=" + std::to_string(k) + " exceeds source size " + std::to_string(tree.size()));
  }
  NeighborMap map;
  map.rows = queries.size();
  map.k = k;
  map.index.resize(queries.size() * k);
  map.dist2.resize(queries.size() * k);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto best = tree.query(queries[i], k);
    for (std::size_t j = 0; j < k; ++j) {
      map.index[i * k + j] = best[j].idx;
      map.dist2[i * k + j] = best[j].d2;
    }
  }
  return map;
}

inline NeighborMap knn_query(const PointCloud& source, const PointCloud& queries, std::size_t k) {
  if (source.empty()) throw ArgumentError("knn: source cloud is empty");
  if (k == 0 || k > source.size()) {
    throw ArgumentError("knn: K=" + std::to_string(k) + " exceeds source size " + std::to_string(source.size()));
  }
  KdTree tree(source.coords);
  return knn_query(tree, queries.coords, k);
}

namespace detail {

using CellKey = std::array<std::int64_t, 3>;

inline Vec3 min_corner(const PointCloud& cloud) {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
  return lo;
}

inline CellKey cell_of(const Vec3& p, const Vec3& origin, double cell) {
  return {static_cast<std::int64_t>(std::floor((p[0] - origin[0]) / cell)),
          static_cast<std::int64_t>(std::floor((p[1] - origin[1]) / cell)),
          static_cast<std::int64_t>(std::floor((p[2] - origin[2]) / cell))};
}

/// Mode of member labels, ignore sentinel excluded unless nothing else is
/// present. Ties go to the smallest class id.
inline int majority_label(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) {
    if (l != kIgnoreLabel) ++counts[l];
  }
  if (counts.empty()) return kIgnoreLabel;
  int best = counts.begin()->first;
  std::size_t best_n = counts.begin()->second;
  for (const auto& [l, n] : counts) {
    if (n > best_n) {
      best = l;
      best_n = n;
    }
  }
  return best;
}

/// Occupied cells in key order, members listed by ascending original index.
inline std::map<CellKey, std::vector<std::uint32_t>> bucket(const PointCloud& cloud, double cell) {
  std::map<CellKey, std::vector<std::uint32_t>> cells;
  const Vec3 origin = min_corner(cloud);
  for (std::uint32_t i = 0; i < cloud.size(); ++i) cells[cell_of(cloud.coords[i], origin, cell)].push_back(i);
  return cells;
}

}  // namespace detail

/// One point per occupied cell at the centroid of its members; labels carried
/// by majority vote. Cells are emitted in (x, y, z) key order and members are
/// summed in lexicographic coordinate order, so the output does not depend on
/// input point order.
inline PointCloud grid_downsample(const PointCloud& cloud, double cell) {
  if (!(cell > 0.0)) throw ArgumentError("grid_downsample: cell must be positive");
  validate(cloud);
  PointCloud out;
  if (cloud.empty()) return out;
  const auto cells = detail::bucket(cloud, cell);
  out.coords.reserve(cells.size());
  out.feature_dim = cloud.feature_dim;
  std::vector<int> member_labels;
  for (const auto& [key, members] : cells) {
    std::vector<std::uint32_t> sorted = members;
    std::sort(sorted.begin(), sorted.end(), [&](std::uint32_t a, std::uint32_t b) {
      return std::tie(cloud.coords[a], a) < std::tie(cloud.coords[b], b);
    });
    Vec3 c{0.0, 0.0, 0.0};
    for (auto i : sorted)
      for (int a = 0; a < 3; ++a) c[a] += cloud.coords[i][a];
    for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(sorted.size());
    out.coords.push_back(c);
    if (cloud.feature_dim) {
      const std::size_t d = cloud.feature_dim;
      std::vector<double> f(d, 0.0);
      for (auto i : sorted)
        for (std::size_t j = 0; j < d; ++j) f[j] += cloud.features[i * d + j];
      for (auto& v : f) v /= static_cast<double>(sorted.size());
      out.features.insert(out.features.end(), f.begin(), f.end());
    }
    if (cloud.labeled()) {
      member_labels.clear();
      for (auto i : members) member_labels.push_back(cloud.labels[i]);
      out.labels.push_back(detail::majority_label(member_labels));
    }
  }
  return out;
}

/// Voxel centers with the mode of member labels. Voxels are keyed by
/// floor((p - min_corner) / voxel) on each axis.
inline PointCloud voxelize_majority(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw ArgumentError("voxelize_majority: voxel must be positive");
  if (!cloud.labeled() && !cloud.empty()) throw ArgumentError("voxelize_majority: cloud has no labels");
  validate(cloud);
  PointCloud out;
  if (cloud.empty()) return out;
  const Vec3 origin = detail::min_corner(cloud);
  const auto cells = detail::bucket(cloud, voxel);
  std::vector<int> member_labels;
  for (const auto& [key, members] : cells) {
    out.coords.push_back({origin[0] + (static_cast<double>(key[0]) + 0.5) * voxel,
                          origin[1] + (static_cast<double>(key[1]) + 0.5) * voxel,
                          origin[2] + (static_cast<double>(key[2]) + 0.5) * voxel});
    member_labels.clear();
    for (auto i : members) member_labels.push_back(cloud.labels[i]);
    out.labels.push_back(detail::majority_label(member_labels));
  }
  return out;
}

/// Indices of n points drawn without replacement, ascending.
inline std::vector<std::uint32_t> random_sample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n > total) {
    throw ArgumentError("random_downsample: n=" + std::to_string(n) + " must lie in [1," + std::to_string(total) + "]");
  }
  std::vector<std::uint32_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0u);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline PointCloud select(const PointCloud& cloud, std::span<const std::uint32_t> idx) {
  PointCloud out;
  out.feature_dim = cloud.feature_dim;
  for (auto i : idx) {
    out.coords.push_back(cloud.coords[i]);
    if (cloud.labeled()) out.labels.push_back(cloud.labels[i]);
    if (cloud.feature_dim) {
      out.features.insert(out.features.end(), cloud.features.begin() + i * cloud.feature_dim,
                          cloud.features.begin() + (i + 1) * cloud.feature_dim);
    }
  }
  return out;
}

inline PointCloud random_downsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  const auto idx = random_sample_indices(cloud.size(), n, seed);
  return select(cloud, idx);
}

}  // namespace retro
