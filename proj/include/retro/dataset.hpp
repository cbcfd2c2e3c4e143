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

// Synthetic labeled rooms and the plain-text point format.
//
// Text format: one point per line, "x y z label" (label -1 = unlabeled),
// or "x y z label level" for per-level prediction exports. Blank lines and
// anything after '#' are ignored. Coordinates are written with 9
// significant digits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retro/errors.hpp"
#include "retro/geometry.hpp"

namespace retro {

enum SceneClass : int { kFloor = 0, kWall = 1, kBox = 2, kSphere = 3, kPillar = 4 };
inline constexpr std::size_t kSceneClasses = 5;
inline const std::array<const char*, kSceneClasses> kSceneClassNames{"floor", "wall", "box", "sphere", "pillar"};

struct ShareRange {
  double lo, hi;
};

struct SceneSpec {
  // Room extents are drawn uniformly from [min_extent, max_extent] per axis.
  Vec3 min_extent{3.0, 3.0, 2.4};
  Vec3 max_extent{5.0, 5.0, 3.0};
  // Object counts, inclusive ranges.
  std::array<std::size_t, 2> boxes{1, 3};
  std::array<std::size_t, 2> spheres{1, 3};
  std::array<std::size_t, 2> pillars{1, 2};
  // Fraction of points drawn per class. Floor takes the remainder and must
  // stay inside its own range, which validate() checks.
  std::array<ShareRange, kSceneClasses> shares{{{0.15, 0.55}, {0.25, 0.35}, {0.15, 0.25}, {0.05, 0.12}, {0.05, 0.10}}};
  std::size_t points = 2048;
  double noise_sigma = 0.005;
  std::uint64_t seed = 0;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (!(min_extent[a] > 0.0) || max_extent[a] < min_extent[a]) throw ArgumentError("scene: degenerate room extents");
    }
    if (min_extent[0] < 1.5 || min_extent[1] < 1.5 || min_extent[2] < 1.0) {
      throw ArgumentError("scene: room too small to place objects");
    }
    if (points < 100) throw ArgumentError("scene: need at least 100 points");
    if (!(noise_sigma >= 0.0)) throw ArgumentError("scene: noise sigma must be >= 0");
    if (boxes[0] > boxes[1] || spheres[0] > spheres[1] || pillars[0] > pillars[1]) {
      throw ArgumentError("scene: object count range reversed");
    }
    double lo = 1.0, hi = 1.0;
    for (std::size_t c = 1; c < kSceneClasses; ++c) {
      if (shares[c].lo < 0.0 || shares[c].hi < shares[c].lo) throw ArgumentError("scene: bad share range");
      lo -= shares[c].hi;
      hi -= shares[c].lo;
    }
    if (lo < shares[kFloor].lo || hi > shares[kFloor].hi) throw ArgumentError("scene: floor share range inconsistent");
  }
};

namespace detail {

struct Box {
  Vec3 lo, hi;
};
struct Sphere {
  Vec3 center;
  double radius;
};
struct Pillar {
  double x, y, radius, height;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Picks an item with probability proportional to its weight.
inline std::size_t pick_weighted(std::mt19937_64& rng, const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double r = uniform(rng, 0.0, total);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (r < w[i]) return i;
    r -= w[i];
  }
  return w.size() - 1;
}

inline Vec3 sample_box_surface(std::mt19937_64& rng, const Box& b) {
  // Top and four sides; the bottom rests on the floor and is not visible.
  const double dx = b.hi[0] - b.lo[0], dy = b.hi[1] - b.lo[1], dz = b.hi[2] - b.lo[2];
  const std::size_t face = pick_weighted(rng, {dx * dy, dx * dz, dx * dz, dy * dz, dy * dz});
  const double u = uniform(rng, 0.0, 1.0), v = uniform(rng, 0.0, 1.0);
  switch (face) {
    case 0: return {b.lo[0] + u * dx, b.lo[1] + v * dy, b.hi[2]};
    case 1: return {b.lo[0] + u * dx, b.lo[1], b.lo[2] + v * dz};
    case 2: return {b.lo[0] + u * dx, b.hi[1], b.lo[2] + v * dz};
    case 3: return {b.lo[0], b.lo[1] + u * dy, b.lo[2] + v * dz};
    default: return {b.hi[0], b.lo[1] + u * dy, b.lo[2] + v * dz};
  }
}

inline Vec3 sample_sphere_surface(std::mt19937_64& rng, const Sphere& s) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s.center[0] + s.radius * r * std::cos(phi), s.center[1] + s.radius * r * std::sin(phi),
          s.center[2] + s.radius * z};
}

inline Vec3 sample_pillar_surface(std::mt19937_64& rng, const Pillar& p) {
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return {p.x + p.radius * std::cos(phi), p.y + p.radius * std::sin(phi), uniform(rng, 0.0, p.height)};
}

}  // namespace detail

/// Point counts per class for a spec, drawn from the configured shares.
inline std::array<std::size_t, kSceneClasses> class_point_counts(const SceneSpec& spec, std::mt19937_64& rng) {
  std::array<std::size_t, kSceneClasses> counts{};
  std::size_t used = 0;
  for (std::size_t c = 1; c < kSceneClasses; ++c) {
    const double share = detail::uniform(rng, spec.shares[c].lo, spec.shares[c].hi);
    const double n = static_cast<double>(spec.points);
    // Clamp so the realized fraction, not just the drawn share, stays in range.
    const double lo = std::ceil(spec.shares[c].lo * n), hi = std::floor(spec.shares[c].hi * n);
    counts[c] = static_cast<std::size_t>(std::clamp(std::round(share * n), lo, std::max(lo, hi)));
    used += counts[c];
  }
  counts[kFloor] = spec.points - used;
  return counts;
}

/// A rectangular room with floor, four walls, boxes, spheres resting on the
/// floor or on box tops, and floor-to-ceiling pillars. Deterministic per seed.
inline PointCloud generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  using detail::uniform;
  const Vec3 room{uniform(rng, spec.min_extent[0], spec.max_extent[0]),
                  uniform(rng, spec.min_extent[1], spec.max_extent[1]),
                  uniform(rng, spec.min_extent[2], spec.max_extent[2])};
  auto count = [&](const std::array<std::size_t, 2>& r) {
    return std::uniform_int_distribution<std::size_t>(r[0], r[1])(rng);
  };
  const double margin = 0.3;

  std::vector<detail::Box> boxes(count(spec.boxes));
  for (auto& b : boxes) {
    const double w = uniform(rng, 0.4, 1.2), d = uniform(rng, 0.4, 1.0), h = uniform(rng, 0.4, 1.0);
    const double x = uniform(rng, margin, room[0] - margin - w), y = uniform(rng, margin, room[1] - margin - d);
    b = {{x, y, 0.0}, {x + w, y + d, h}};
  }
  std::vector<detail::Sphere> spheres(count(spec.spheres));
  for (auto& s : spheres) {
    const double r = uniform(rng, 0.12, 0.3);
    if (!boxes.empty() && uniform(rng, 0.0, 1.0) < 0.5) {
      const auto& b = boxes[std::uniform_int_distribution<std::size_t>(0, boxes.size() - 1)(rng)];
      s = {{uniform(rng, b.lo[0], b.hi[0]), uniform(rng, b.lo[1], b.hi[1]), b.hi[2] + r}, r};
    } else {
      s = {{uniform(rng, margin + r, room[0] - margin - r), uniform(rng, margin + r, room[1] - margin - r), r}, r};
    }
  }
  std::vector<detail::Pillar> pillars(count(spec.pillars));
  for (auto& p : pillars) {
    const double r = uniform(rng, 0.1, 0.25);
    p = {uniform(rng, margin + r, room[0] - margin - r), uniform(rng, margin + r, room[1] - margin - r), r, room[2]};
  }

  auto counts = class_point_counts(spec, rng);
  // Classes without any object hand their budget to the floor.
  for (auto [cls, n] : {std::pair{kBox, boxes.size()}, std::pair{kSphere, spheres.size()}, std::pair{kPillar, pillars.size()}}) {
    if (n == 0) {
      counts[kFloor] += counts[cls];
      counts[cls] = 0;
    }
  }
  std::normal_distribution<double> jitter(0.0, 1.0);
  PointCloud cloud;
  cloud.coords.reserve(spec.points);
  cloud.labels.reserve(spec.points);
  auto emit = [&](Vec3 p, int label) {
    if (spec.noise_sigma > 0.0)
      for (auto& c : p) c += spec.noise_sigma * jitter(rng);
    cloud.coords.push_back(p);
    cloud.labels.push_back(label);
  };

  for (std::size_t i = 0; i < counts[kFloor]; ++i) emit({uniform(rng, 0.0, room[0]), uniform(rng, 0.0, room[1]), 0.0}, kFloor);
  const std::vector<double> wall_area{room[0] * room[2], room[0] * room[2], room[1] * room[2], room[1] * room[2]};
  for (std::size_t i = 0; i < counts[kWall]; ++i) {
    const std::size_t w = detail::pick_weighted(rng, wall_area);
    const double u = uniform(rng, 0.0, 1.0), z = uniform(rng, 0.0, room[2]);
    switch (w) {
      case 0: emit({u * room[0], 0.0, z}, kWall); break;
      case 1: emit({u * room[0], room[1], z}, kWall); break;
      case 2: emit({0.0, u * room[1], z}, kWall); break;
      default: emit({room[0], u * room[1], z}, kWall); break;
    }
  }
  auto spread = [&](std::size_t n, const std::vector<double>& areas, auto&& sample, int label) {
    for (std::size_t i = 0; i < n; ++i) emit(sample(detail::pick_weighted(rng, areas)), label);
  };
  {
    std::vector<double> areas;
    for (const auto& b : boxes) {
      const double dx = b.hi[0] - b.lo[0], dy = b.hi[1] - b.lo[1], dz = b.hi[2] - b.lo[2];
      areas.push_back(dx * dy + 2 * dx * dz + 2 * dy * dz);
    }
    spread(counts[kBox], areas, [&](std::size_t o) { return detail::sample_box_surface(rng, boxes[o]); }, kBox);
  }
  {
    std::vector<double> areas;
    for (const auto& s : spheres) areas.push_back(s.radius * s.radius);
    spread(counts[kSphere], areas, [&](std::size_t o) { return detail::sample_sphere_surface(rng, spheres[o]); }, kSphere);
  }
  {
    std::vector<double> areas;
    for (const auto& p : pillars) areas.push_back(p.radius * p.height);
    spread(counts[kPillar], areas, [&](std::size_t o) { return detail::sample_pillar_surface(rng, pillars[o]); }, kPillar);
  }
  return cloud;
}

inline void write_cloud(const PointCloud& cloud, const std::string& path, const std::vector<int>* levels = nullptr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.precision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    os << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << (cloud.labeled() ? cloud.labels[i] : kIgnoreLabel);
    if (levels) os << ' ' << (*levels)[i];
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

/// Parses "x y z label" lines (an optional fifth integer column is read into
/// `levels` when given). Label range is not checked here.
inline PointCloud parse_cloud(std::istream& is, std::vector<int>* levels = nullptr) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  bool any_label = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 4 || tok.size() > 5) {
      throw ParseError("expected 'x y z label' (4 or 5 columns), got " + std::to_string(tok.size()), line_no);
    }
    Vec3 p{};
    int label = 0;
    try {
      std::size_t used = 0;
      for (int a = 0; a < 3; ++a) {
        p[a] = std::stod(tok[a], &used);
        if (used != tok[a].size() || !std::isfinite(p[a])) throw std::invalid_argument(tok[a]);
      }
      label = std::stoi(tok[3], &used);
      if (used != tok[3].size()) throw std::invalid_argument(tok[3]);
      if (tok.size() == 5) {
        const int lv = std::stoi(tok[4], &used);
        if (used != tok[4].size()) throw std::invalid_argument(tok[4]);
        if (levels) levels->push_back(lv);
      }
    } catch (const std::exception&) {
      throw ParseError("malformed number", line_no);
    }
    if (label < kIgnoreLabel) throw ParseError("label below -1", line_no);
    cloud.coords.push_back(p);
    cloud.labels.push_back(label);
    any_label = any_label || label != kIgnoreLabel;
  }
  if (!any_label) cloud.labels.clear();
  return cloud;
}

inline PointCloud read_cloud(const std::string& path, std::vector<int>* levels = nullptr) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return parse_cloud(is, levels);
}

/// Throws IndexError when a label falls outside [0, num_classes) and is not -1.
inline void check_labels(const PointCloud& cloud, std::size_t num_classes) {
  for (std::size_t i = 0; i < cloud.labels.size(); ++i) {
    const int l = cloud.labels[i];
    if (l != kIgnoreLabel && (l < 0 || static_cast<std::size_t>(l) >= num_classes)) {
      throw IndexError("point " + std::to_string(i) + " has label " + std::to_string(l) + ", expected < " +
                       std::to_string(num_classes));
    }
  }
}

// Manifest: {"num_classes", "class_names", "points", "scenes": [{"file", "split", "seed"}]}
struct ManifestEntry {
  std::string file;
  std::string split;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::size_t num_classes = kSceneClasses;
  std::vector<std::string> class_names;
  std::size_t points = 0;
  std::vector<ManifestEntry> scenes;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  std::vector<ManifestEntry> split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& s : scenes)
      if (s.split == name) out.push_back(s);
    return out;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ManifestEntry, file, split, seed)

inline void write_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j = {{"num_classes", m.num_classes},
                      {"class_names", m.class_names},
                      {"points", m.points},
                      {"scenes", m.scenes}};
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  os << j.dump(2) << '\n';
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  Manifest m;
  try {
    nlohmann::json j;
    is >> j;
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.points = j.value("points", std::size_t{0});
    m.scenes = j.at("scenes").get<std::vector<ManifestEntry>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest " + path + ": " + e.what());
  }
  m.root = std::filesystem::path(path).parent_path();
  return m;
}

/// Writes train/test scenes and manifest.json into `dir`. Scene seeds are
/// base_seed + running index.
inline Manifest generate_dataset(const std::string& dir, std::size_t train, std::size_t test, SceneSpec spec,
                                 std::uint64_t base_seed) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.points = spec.points;
  for (auto* n : kSceneClassNames) m.class_names.emplace_back(n);
  std::uint64_t next = base_seed;
  auto emit = [&](const std::string& split, std::size_t i) {
    spec.seed = next++;
    std::ostringstream name;
    name << split << '_' << std::setw(3) << std::setfill('0') << i << ".txt";
    write_cloud(generate_scene(spec), (std::filesystem::path(dir) / name.str()).string());
    m.scenes.push_back({name.str(), split, spec.seed});
  };
  for (std::size_t i = 0; i < train; ++i) emit("train", i);
  for (std::size_t i = 0; i < test; ++i) emit("test", i);
  write_manifest(m, (std::filesystem::path(dir) / "manifest.json").string());
  m.root = dir;
  return m;
}

}  // namespace retro
