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

// Retrospective refinement of per-point semantic features.
//
// Each pyramid level l turns its region feature F^l into a point-level
// semantic feature H^l in two stages:
//
//   local cross-attention   q  = MLP_gamma(f_i)
//                           k  = Linear_beta(h^{l+1}),  v = Linear_alpha(h^{l+1})
//                           w_ik = <q_i + e_delta(dp_ik), k_ik + e_theta(dp_ik)> / sqrt(C)
//                           hhat_i = sum_k softmax(w_i)_k v_ik
//
//   semantic gate           o = Linear_mu(f)
//                           z = sigmoid(MLP_sigma(hhat + o))
//                           h = z * hhat + (1 - z) * o
//
// where dp_ik = p_i^l - p_{ik}^{l+1} over the K nearest level-(l+1)
// points. The top level has nothing above it and attends over its own
// K-neighborhood with f^L as query, key and value source. A per-level head
// Linear(ReLU(h)) yields logits, and information only flows from coarse to
// fine levels.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "retro/nn.hpp"
#include "retro/pyramid.hpp"

namespace retro {

/// Ablation switches. All on is the full model.
struct RetroOptions {
  bool cross_attention = true;     // off: hhat is replaced by o
  bool position_embedding = true;  // off: e_delta = e_theta = 0
  bool semantic_gate = true;       // off: h = hhat + o
};

struct RetroParams {
  std::size_t channels = 0;
  nn::Mlp2 gamma;      // query, C_l -> C -> C
  nn::Linear beta;     // key
  nn::Linear alpha;    // value
  nn::Linear mu;       // compaction, C_l -> C
  nn::Mlp2 delta;      // query-side position embedding, 3 -> C -> C
  nn::Mlp2 theta;      // key-side position embedding, 3 -> C -> C
  nn::Mlp2 sigma;      // gate, C -> C -> C, followed by a sigmoid
  nn::Linear head;     // C -> classes, applied after a ReLU

  RetroParams() = default;
  /// `source_width` is the width of the key/value source: C for lower levels,
  /// C_L at the top where the level's own region features are attended.
  RetroParams(std::size_t region_width, std::size_t source_width, std::size_t channels_, std::size_t classes,
              std::mt19937_64& rng)
      : channels(channels_),
        gamma(region_width, channels_, channels_, rng),
        beta(source_width, channels_, rng),
        alpha(source_width, channels_, rng),
        mu(region_width, channels_, rng),
        delta(3, channels_, channels_, rng),
        theta(3, channels_, channels_, rng),
        sigma(channels_, channels_, channels_, rng),
        head(channels_, classes, rng) {}

  void collect(const std::string& prefix, nn::ParamList& out) const {
    gamma.collect(prefix + "gamma/", out);
    beta.collect(prefix + "beta/", out);
    alpha.collect(prefix + "alpha/", out);
    mu.collect(prefix + "mu/", out);
    delta.collect(prefix + "delta/", out);
    theta.collect(prefix + "theta/", out);
    sigma.collect(prefix + "sigma/", out);
    head.collect(prefix + "head/", out);
  }
};

struct AttentionResult {
  Tensor context;  // hhat, [N x C]
  Tensor weights;  // softmax rows, [N x K]
};

namespace detail {

inline AttentionResult attend(const Tensor& region, const Tensor& source, const NeighborMap& map,
                              std::span<const double> offsets, const RetroParams& p, bool position_embedding) {
  const std::size_t n = region.rows(), k = map.k, c = p.channels;
  if (map.rows != n) {
    throw ShapeError("attention: neighbor map has " + std::to_string(map.rows) + " rows for " + std::to_string(n) +
                     " points");
  }
  if (source.cols() != p.beta.in_features()) {
    throw ShapeError("attention: key/value source width " + std::to_string(source.cols()) + " but parameters expect " +
                     std::to_string(p.beta.in_features()));
  }
  if (offsets.size() != n * k * 3) throw ShapeError("attention: relative offsets do not match the neighbor map");

  Tensor q = p.gamma(region);
  Tensor keys = p.beta(source);
  Tensor vals = p.alpha(source);
  Tensor qg = ops::repeat_rows(q, k);
  Tensor kg = ops::gather_rows(keys, map.index);
  Tensor vg = ops::gather_rows(vals, map.index);
  if (position_embedding) {
    Tensor dp({n * k, 3}, std::vector<double>(offsets.begin(), offsets.end()));
    qg = ops::add(qg, p.delta(dp));
    kg = ops::add(kg, p.theta(dp));
  }
  Tensor logits = ops::scale(ops::row_dot(qg, kg), 1.0 / std::sqrt(static_cast<double>(c)));
  Tensor weights = ops::softmax(ops::reshape(logits, {n, k}));
  Tensor context = ops::weighted_group_sum(vg, weights);
  return {context, weights};
}

}  // namespace detail

/// Local cross-attention of level-l region features over the K nearest
/// level-(l+1) semantic features. `offsets` holds p_i - p_neighbor per map entry.
inline AttentionResult lca_forward(const Tensor& region, const Tensor& upper_semantic, const NeighborMap& map,
                                   std::span<const double> offsets, const RetroParams& params,
                                   const RetroOptions& opts = {}) {
  if (upper_semantic.cols() != params.channels) {
    throw ShapeError("lca_forward: upper semantic width " + std::to_string(upper_semantic.cols()) +
                     " differs from C=" + std::to_string(params.channels));
  }
  return detail::attend(region, upper_semantic, map, offsets, params, opts.position_embedding);
}

/// Top-level degenerate case: the level's own region features supply the
/// query, key and value over its self-neighborhood.
inline AttentionResult self_attention_top(const Tensor& region, const NeighborMap& self_map,
                                          std::span<const double> offsets, const RetroParams& params,
                                          const RetroOptions& opts = {}) {
  return detail::attend(region, region, self_map, offsets, params, opts.position_embedding);
}

struct GateResult {
  Tensor semantic;  // h
  Tensor compact;   // o
  Tensor gate;      // z, undefined when the gate is disabled
};

inline GateResult sgu_forward(const Tensor& context, const Tensor& region, const RetroParams& params,
                              const RetroOptions& opts = {}) {
  if (context.rows() != region.rows()) {
    throw ShapeError("sgu_forward: " + shape_str(context.shape()) + " context for " + shape_str(region.shape()) +
                     " region features");
  }
  Tensor o = params.mu(region);
  if (context.shape() != o.shape()) {
    throw ShapeError("sgu_forward: context " + shape_str(context.shape()) + " vs compacted " + shape_str(o.shape()));
  }
  if (!opts.semantic_gate) return {ops::add(context, o), o, Tensor{}};
  Tensor z = ops::sigmoid(params.sigma(ops::add(context, o)));
  Tensor h = ops::add(ops::mul(z, context), ops::mul(ops::rsub_scalar(1.0, z), o));
  return {h, o, z};
}

inline Tensor head_forward(const Tensor& semantic, const RetroParams& params) {
  return params.head(ops::relu(semantic));
}

struct LevelOutput {
  Tensor context;
  Tensor semantic;
  Tensor logits;
  Tensor attention;  // undefined when cross-attention is disabled
};

/// Runs levels L..1 top-down. Index 0 of the result is level 1; the final
/// segmentation is argmax of outputs[0].logits.
inline std::vector<LevelOutput> retro_forward(const Pyramid& pyr, const std::vector<Tensor>& region,
                                              const std::vector<RetroParams>& params, const RetroOptions& opts = {}) {
  const std::size_t levels = pyr.size();
  if (levels == 0) throw StructureError("retro_forward: empty pyramid");
  if (region.size() != levels || params.size() != levels) {
    throw StructureError("retro_forward: need region features and parameters for all " + std::to_string(levels) +
                         " levels");
  }
  std::vector<LevelOutput> out(levels);
  for (std::size_t l = levels; l-- > 0;) {
    const auto& lvl = pyr[l];
    const auto& p = params[l];
    if (!region[l].defined()) throw StructureError("retro_forward: level " + std::to_string(l + 1) + " has no features");
    AttentionResult att;
    if (!opts.cross_attention) {
      att.context = p.mu(region[l]);
    } else if (l + 1 == levels) {
      if (lvl.self_neighbors.empty()) throw StructureError("retro_forward: top level has no self-neighbor map");
      att = self_attention_top(region[l], lvl.self_neighbors, lvl.offsets_self, p, opts);
    } else {
      if (lvl.neighbors_up.empty()) {
        throw StructureError("retro_forward: level " + std::to_string(l + 1) + " has no upward neighbor map");
      }
      att = lca_forward(region[l], out[l + 1].semantic, lvl.neighbors_up, lvl.offsets_up, p, opts);
    }
    GateResult g = sgu_forward(att.context, region[l], p, opts);
    out[l] = {att.context, g.semantic, head_forward(g.semantic, p), att.weights};
  }
  return out;
}

}  // namespace retro
