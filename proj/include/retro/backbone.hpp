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

// Small pooling encoder / interpolating decoder that yields a region
// feature F^l at every pyramid level.
//
//   encoder, level 1:   E^1 = stem(x)
//   encoder, level l+1: E^{l+1}_i = MLP([max_k E^l_{n(i,k)} | mean_k E^l_{n(i,k)}])
//   decoder, top:       F^L = E^L
//   decoder, level l:   F^l = MLP([E^l | IDW(F^{l+1})])
//
// IDW weights are 1/(d^2 + 1e-8) normalized per row over the level's
// upward neighbor map.

#include <random>
#include <string>
#include <vector>

#include "retro/nn.hpp"
#include "retro/pyramid.hpp"

namespace retro {

inline constexpr double kIdwEpsilon = 1e-8;

struct BackboneParams {
  std::size_t channels = 0;
  nn::Mlp2 stem;
  std::vector<nn::Mlp2> encoders;  // [l] builds level l+2 from level l+1
  std::vector<nn::Mlp2> decoders;  // [l] produces F at level l+1 (l < L-1)

  BackboneParams() = default;
  BackboneParams(std::size_t input_dim, std::size_t channels_, std::size_t levels, std::mt19937_64& rng)
      : channels(channels_), stem(input_dim, channels_, channels_, rng) {
    for (std::size_t l = 1; l < levels; ++l) encoders.emplace_back(2 * channels, channels, channels, rng);
    for (std::size_t l = 1; l < levels; ++l) decoders.emplace_back(2 * channels, channels, channels, rng);
  }

  std::size_t levels() const { return encoders.size() + 1; }

  void collect(nn::ParamList& out) const {
    stem.collect("backbone/stem/", out);
    for (std::size_t l = 0; l < encoders.size(); ++l)
      encoders[l].collect("backbone/enc_" + std::to_string(l + 2) + "/", out);
    for (std::size_t l = 0; l < decoders.size(); ++l)
      decoders[l].collect("backbone/dec_" + std::to_string(l + 1) + "/", out);
  }
};

/// Per-point input: coordinates centered on the cloud's horizontal bbox
/// center, height above its lowest point. [N x 3]
inline Tensor input_features(const PointCloud& cloud) {
  if (cloud.empty()) throw ArgumentError("input_features: empty cloud");
  Vec3 lo = cloud.coords.front(), hi = cloud.coords.front();
  for (const auto& p : cloud.coords) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double cx = 0.5 * (lo[0] + hi[0]), cy = 0.5 * (lo[1] + hi[1]);
  std::vector<double> v;
  v.reserve(cloud.size() * 3);
  for (const auto& p : cloud.coords) {
    v.push_back(p[0] - cx);
    v.push_back(p[1] - cy);
    v.push_back(p[2] - lo[2]);
  }
  return Tensor({cloud.size(), 3}, std::move(v));
}

inline std::vector<Tensor> encode(const Pyramid& pyr, const Tensor& input, const BackboneParams& params) {
  if (pyr.empty()) throw StructureError("encode: empty pyramid");
  if (pyr.size() != params.levels()) {
    throw StructureError("encode: pyramid has " + std::to_string(pyr.size()) + " levels, backbone " +
                         std::to_string(params.levels()));
  }
  if (input.rows() != pyr[0].points.size()) throw ShapeError("encode: input rows differ from level-1 points");
  std::vector<Tensor> enc;
  enc.push_back(params.stem(input));
  for (std::size_t l = 1; l < pyr.size(); ++l) {
    const auto& map = pyr[l].pool_neighbors;
    if (map.empty()) throw StructureError("encode: level " + std::to_string(l + 1) + " has no pooling map");
    Tensor gathered = ops::gather_rows(enc.back(), map.index);
    Tensor pooled = ops::concat_cols(ops::group_max(gathered, map.k), ops::group_mean(gathered, map.k));
    enc.push_back(params.encoders[l - 1](pooled));
  }
  return enc;
}

/// Normalized inverse-distance weights, one per map entry.
inline std::vector<double> idw_weights(const NeighborMap& map) {
  std::vector<double> w(map.rows * map.k);
  for (std::size_t i = 0; i < map.rows; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < map.k; ++j) {
      w[i * map.k + j] = 1.0 / (map.dist2[i * map.k + j] + kIdwEpsilon);
      total += w[i * map.k + j];
    }
    for (std::size_t j = 0; j < map.k; ++j) w[i * map.k + j] /= total;
  }
  return w;
}

/// IDW interpolation of `source` rows onto the map's query points.
inline Tensor interpolate(const Tensor& source, const NeighborMap& map) {
  Tensor weights({map.rows, map.k}, idw_weights(map));
  return ops::weighted_group_sum(ops::gather_rows(source, map.index), weights);
}

/// Region features F^1..F^L (index 0 is level 1).
inline std::vector<Tensor> decode(const Pyramid& pyr, const std::vector<Tensor>& enc, const BackboneParams& params) {
  if (enc.size() != pyr.size()) throw StructureError("decode: encoder features missing for some level");
  std::vector<Tensor> feats(pyr.size());
  feats.back() = enc.back();
  for (std::size_t l = pyr.size() - 1; l-- > 0;) {
    const auto& map = pyr[l].neighbors_up;
    if (map.empty()) throw StructureError("decode: level " + std::to_string(l + 1) + " has no upward map");
    Tensor up = interpolate(feats[l + 1], map);
    feats[l] = params.decoders[l](ops::concat_cols(enc[l], up));
  }
  return feats;
}

}  // namespace retro
