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

// Random instances shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <random>
#include <vector>

#include "retro/training.hpp"

namespace fixtures {

inline retro::Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0,
                                   bool requires_grad = false) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = d(rng);
  return retro::Tensor({rows, cols}, std::move(v), requires_grad);
}

/// Replaces every bias (initialized to zero) with small random values so
/// that no ReLU sits exactly on its kink.
inline void jitter_biases(const retro::nn::ParamList& params, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> d(0.0, scale);
  for (const auto& [name, t] : params) {
    if (name.size() < 4 || name.compare(name.size() - 4, 4, "bias") != 0) continue;
    retro::Tensor b = t;
    for (auto& x : b.mutable_values()) x = d(rng);
  }
}

inline retro::nn::ParamList collect(const retro::RetroParams& p) {
  retro::nn::ParamList out;
  p.collect("retro/level_1/", out);
  return out;
}

/// Random neighbor map: each row draws `k` source rows (repeats allowed)
/// and nonnegative squared distances, plus offsets in a 1 m box.
struct RandomMap {
  retro::NeighborMap map;
  std::vector<double> offsets;
};

inline RandomMap random_map(std::size_t rows, std::size_t source_rows, std::size_t k, std::mt19937_64& rng) {
  RandomMap r;
  r.map.rows = rows;
  r.map.k = k;
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(source_rows - 1));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (std::size_t i = 0; i < rows * k; ++i) {
    r.map.index.push_back(pick(rng));
    r.map.dist2.push_back(0.0);
  }
  for (std::size_t i = 0; i < rows * k * 3; ++i) r.offsets.push_back(u(rng));
  for (std::size_t i = 0; i < rows * k; ++i) {
    const double* o = r.offsets.data() + 3 * i;
    r.map.dist2[i] = o[0] * o[0] + o[1] * o[1] + o[2] * o[2];
  }
  return r;
}

/// Random labeled cloud in a `size` meter cube.
inline retro::PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, int classes = 5, double size = 1.0) {
  retro::PointCloud c;
  std::uniform_real_distribution<double> u(0.0, size);
  std::uniform_int_distribution<int> l(0, classes - 1);
  for (std::size_t i = 0; i < n; ++i) {
    c.coords.push_back({u(rng), u(rng), u(rng)});
    c.labels.push_back(l(rng));
  }
  return c;
}

/// Two levels over 16 points, C = 8, K = 4.
inline retro::RunConfig tiny_config() {
  retro::RunConfig cfg;
  cfg.levels = 2;
  cfg.k = {4};
  cfg.base_cell = 0.5;
  cfg.max_points = {0, 0};
  cfg.channels = 8;
  cfg.num_classes = 5;
  return cfg;
}

struct TinyProblem {
  retro::RunConfig cfg;
  retro::PointCloud cloud;
  retro::SceneData scene;
};

inline TinyProblem tiny_problem(std::uint64_t seed, std::size_t points = 16) {
  std::mt19937_64 rng(seed);
  TinyProblem t;
  t.cfg = tiny_config();
  t.cfg.seed = seed;
  t.cloud = random_cloud(points, rng);
  t.scene = retro::prepare_scene(t.cloud, t.cfg, seed, "tiny");
  return t;
}

inline retro::Tensor model_loss(const retro::Model& model, const retro::SceneData& scene) {
  auto outs = model.forward(scene);
  std::vector<retro::Tensor> logits;
  for (auto& o : outs) logits.push_back(o.logits);
  const auto lambdas = model.cfg.effective_lambdas();
  return retro::hierarchical_loss(logits, retro::level_labels(scene), lambdas);
}

}  // namespace fixtures
