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

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "retro/geometry.hpp"

namespace retro {

struct PyramidConfig {
  std::size_t levels = 4;
  // Neighbor count per level (index 0 is level 1). Shorter lists repeat the last entry.
  std::vector<std::size_t> k{8};
  // Cell size for the level 1 -> 2 transition; doubles at each further level.
  double base_cell = 0.2;
  // Random-sampling cap per level, 0 = uncapped. Index 0 (level 1) is ignored.
  std::vector<std::size_t> max_points{0, 512, 128, 48};
  std::uint64_t seed = 0;

  std::size_t k_at(std::size_t level_index) const {
    if (k.empty()) return 8;
    return k[std::min(level_index, k.size() - 1)];
  }
  std::size_t cap_at(std::size_t level_index) const {
    return level_index < max_points.size() ? max_points[level_index] : 0;
  }
};

/// Offsets p_i - p_neighbor for every entry of a neighbor map, [rows*k x 3].
inline std::vector<double> relative_offsets(const PointCloud& queries, const PointCloud& source,
                                            const NeighborMap& map) {
  std::vector<double> out(map.rows * map.k * 3);
  for (std::size_t i = 0; i < map.rows; ++i) {
    for (std::size_t j = 0; j < map.k; ++j) {
      const auto& p = queries.coords[i];
      const auto& q = source.coords[map.index[i * map.k + j]];
      for (int a = 0; a < 3; ++a) out[(i * map.k + j) * 3 + a] = p[a] - q[a];
    }
  }
  return out;
}

struct PyramidLevel {
  std::size_t level = 1;      // 1-based, 1 is the finest
  PointCloud points;          // coordinates and recorded labels Y^l
  NeighborMap neighbors_up;   // into level l+1 (absent at the top)
  std::vector<double> offsets_up;
  NeighborMap self_neighbors; // within this level (top level only)
  std::vector<double> offsets_self;
  NeighborMap pool_neighbors; // into level l-1, used by the encoder (absent at level 1)
};

using Pyramid = std::vector<PyramidLevel>;

/// K nearest `upper` points for each `lower` point.
inline NeighborMap cross_level_neighbors(const PointCloud& lower, const PointCloud& upper, std::size_t k) {
  return knn_query(upper, lower, k);
}

/// Level 1 is the input cloud; level l+1 is a grid downsample of level l at
/// base_cell * 2^(l-1), then randomly capped. Neighbor counts are clamped to
/// the size of the searched level.
inline Pyramid build_pyramid(const PointCloud& cloud, const PyramidConfig& cfg) {
  if (cfg.levels < 1) throw ConfigError("pyramid needs at least one level");
  if (!(cfg.base_cell > 0.0)) throw ConfigError("pyramid base_cell must be positive");
  if (cloud.empty()) throw ConfigError("pyramid level 1 is empty");
  if (!cloud.labeled()) throw ArgumentError("build_pyramid: cloud must be labeled");
  validate(cloud);

  Pyramid pyr(cfg.levels);
  pyr[0].level = 1;
  pyr[0].points = cloud;
  double cell = cfg.base_cell;
  for (std::size_t l = 1; l < cfg.levels; ++l, cell *= 2.0) {
    PointCloud next = grid_downsample(pyr[l - 1].points, cell);
    const std::size_t cap = cfg.cap_at(l);
    if (cap > 0 && next.size() > cap) next = random_downsample(next, cap, cfg.seed * 1000003ULL + l);
    if (next.empty()) throw ConfigError("pyramid level " + std::to_string(l + 1) + " is empty");
    pyr[l].level = l + 1;
    pyr[l].points = std::move(next);
  }

  for (std::size_t l = 0; l < cfg.levels; ++l) {
    auto& lvl = pyr[l];
    if (l + 1 < cfg.levels) {
      const auto& up = pyr[l + 1].points;
      KdTree tree(up.coords);
      lvl.neighbors_up = knn_query(tree, lvl.points.coords, std::min(cfg.k_at(l), up.size()));
      lvl.offsets_up = relative_offsets(lvl.points, up, lvl.neighbors_up);
    } else {
      KdTree tree(lvl.points.coords);
      lvl.self_neighbors = knn_query(tree, lvl.points.coords, std::min(cfg.k_at(l), lvl.points.size()));
      lvl.offsets_self = relative_offsets(lvl.points, lvl.points, lvl.self_neighbors);
    }
    if (l > 0) {
      const auto& down = pyr[l - 1].points;
      KdTree tree(down.coords);
      lvl.pool_neighbors = knn_query(tree, lvl.points.coords, std::min(cfg.k_at(l - 1), down.size()));
    }
  }
  return pyr;
}

/// Debug dump: one "x y z label level" file per pyramid level.
inline void dump_pyramid(const Pyramid& pyr, const std::string& prefix) {
  for (const auto& lvl : pyr) {
    std::ofstream os(prefix + "_level" + std::to_string(lvl.level) + ".txt");
    if (!os) throw std::runtime_error("cannot write pyramid dump at " + prefix);
    os.precision(9);
    for (std::size_t i = 0; i < lvl.points.size(); ++i) {
      const auto& p = lvl.points.coords[i];
      os << p[0] << ' ' << p[1] << ' ' << p[2] << ' '
         << (lvl.points.labeled() ? lvl.points.labels[i] : kIgnoreLabel) << ' ' << lvl.level << '\n';
    }
  }
}

}  // namespace retro
