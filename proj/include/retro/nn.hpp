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

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "retro/checkpoint.hpp"
#include "retro/ops.hpp"

namespace retro::nn {

/// Named handles to trainable leaves, in registration order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// Fan-in normal initialization with variance gain / in. Gain 2 is He
/// initialization for layers feeding a ReLU; gain 1 keeps the scale of
/// layers whose output is used linearly.
inline Tensor fan_in_weight(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
  std::vector<double> v(in * out);
  for (auto& x : v) x = dist(rng);
  return Tensor({in, out}, std::move(v), true);
}

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [1 x out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0)
      : weight(fan_in_weight(in, out, rng, gain)), bias(Tensor::zeros({1, out}, true)) {}

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  Tensor operator()(const Tensor& x) const {
    if (x.cols() != in_features()) {
      throw ShapeError("linear expects width " + std::to_string(in_features()) + ", got " + shape_str(x.shape()));
    }
    return ops::linear(x, weight, bias);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + "weight", weight);
    out.emplace_back(prefix + "bias", bias);
  }
};

/// Two linear layers with a ReLU between them.
struct Mlp2 {
  Linear first, second;

  Mlp2() = default;
  Mlp2(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng)
      : first(in, hidden, rng, 2.0), second(hidden, out, rng, 1.0) {}

  std::size_t in_features() const { return first.in_features(); }
  std::size_t out_features() const { return second.out_features(); }

  Tensor operator()(const Tensor& x) const { return second(ops::relu(first(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    first.collect(prefix + "0/", out);
    second.collect(prefix + "1/", out);
  }
};

inline TensorMap to_tensor_map(const ParamList& params) {
  TensorMap out;
  for (const auto& [name, t] : params) {
    out[name] = TensorRecord{t.shape(), std::vector<double>(t.values().begin(), t.values().end())};
  }
  return out;
}

/// Copies stored values into matching parameters; every parameter must be present.
inline void load_tensor_map(const TensorMap& stored, const ParamList& params) {
  for (const auto& [name, t] : params) {
    auto it = stored.find(name);
    if (it == stored.end()) throw StructureError("checkpoint is missing parameter " + name);
    if (it->second.shape != t.shape()) {
      throw ShapeError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape) +
                       ", model expects " + shape_str(t.shape()));
    }
    auto dst = Tensor(t).mutable_values();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

}  // namespace retro::nn
