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

#include <json.hpp>

#include "retro/errors.hpp"
#include "retro/pyramid.hpp"
#include "retro/retro_fpn.hpp"

namespace retro {

struct RunConfig {
  // Pyramid
  std::size_t levels = 4;
  std::vector<std::size_t> k{8};
  double base_cell = 0.2;
  std::vector<std::size_t> max_points{0, 512, 128, 48};
  // Model
  std::size_t channels = 32;
  std::size_t backbone_channels = 0;  // 0: same as channels
  std::size_t num_classes = 5;
  // Per-level loss weights; empty means 1 at every level.
  std::vector<double> lambdas;
  // Ablation switches
  bool hierarchical_supervision = true;
  bool cross_attention = true;
  bool position_embedding = true;
  bool semantic_gate = true;
  // Optimization
  std::string optimizer = "adam";  // "adam" or "sgd"
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 20;
  std::size_t batch_scenes = 1;
  std::uint64_t seed = 0;

  std::size_t region_width() const { return backbone_channels ? backbone_channels : channels; }

  /// Loss weights after applying the hierarchical-supervision switch.
  std::vector<double> effective_lambdas() const {
    std::vector<double> out = lambdas.empty() ? std::vector<double>(levels, 1.0) : lambdas;
    if (!hierarchical_supervision)
      for (std::size_t l = 1; l < out.size(); ++l) out[l] = 0.0;
    return out;
  }

  RetroOptions retro_options() const { return {cross_attention, position_embedding, semantic_gate}; }

  PyramidConfig pyramid(std::uint64_t scene_seed) const {
    return PyramidConfig{levels, k, base_cell, max_points, scene_seed};
  }

  void validate() const {
    if (levels < 1) throw ConfigError("levels must be >= 1");
    if (k.empty()) throw ConfigError("k must list at least one neighbor count");
    for (auto v : k)
      if (v < 1) throw ConfigError("every k must be >= 1");
    if (!(base_cell > 0.0)) throw ConfigError("base_cell must be positive");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!lambdas.empty() && lambdas.size() != levels) {
      throw ConfigError("lambdas has " + std::to_string(lambdas.size()) + " entries for " + std::to_string(levels) +
                        " levels");
    }
    for (double l : lambdas)
      if (!(l >= 0.0)) throw ConfigError("lambdas must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("optimizer must be adam or sgd");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_scenes < 1) throw ConfigError("batch_scenes must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, levels, k, base_cell, max_points, channels,
                                                backbone_channels, num_classes, lambdas, hierarchical_supervision,
                                                cross_attention, position_embedding, semantic_gate, optimizer, lr,
                                                momentum, beta1, beta2, adam_eps, weight_decay, epochs, batch_scenes,
                                                seed)

/// Parses a config object; keys not in RunConfig are rejected.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json known = RunConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig cfg;
  try {
    cfg = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace retro
