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

// Independent reference implementations used by the tests. Everything here
// works row by row on plain vectors with no shared code paths with the
// library's tensor kernels, and the model reference is templated on the
// scalar type so it can run in long double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retro/nn.hpp"
#include "retro/pyramid.hpp"

namespace oracle {

// ---------------------------------------------------------------- geometry

struct Neighbor {
  double d2;
  std::uint32_t index;
};

/// Full sort of all source points by (squared distance, index).
inline std::vector<Neighbor> brute_knn(std::span<const retro::Vec3> source, const retro::Vec3& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::uint32_t i = 0; i < source.size(); ++i) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) d2 += (source[i][a] - q[a]) * (source[i][a] - q[a]);
    all.push_back({d2, i});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
  });
  all.resize(k);
  return all;
}

struct Cell {
  std::vector<std::size_t> members;
};

struct KeyHash {
  std::size_t operator()(const std::tuple<long, long, long>& t) const {
    auto [a, b, c] = t;
    return std::hash<long>()(a) * 73856093u ^ std::hash<long>()(b) * 19349663u ^ std::hash<long>()(c) * 83492791u;
  }
};

using CellTable = std::unordered_map<std::tuple<long, long, long>, Cell, KeyHash>;

inline CellTable hash_grid(const retro::PointCloud& cloud, double cell) {
  retro::Vec3 lo{1e300, 1e300, 1e300};
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
  CellTable table;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    auto key = std::make_tuple(static_cast<long>(std::floor((p[0] - lo[0]) / cell)),
                               static_cast<long>(std::floor((p[1] - lo[1]) / cell)),
                               static_cast<long>(std::floor((p[2] - lo[2]) / cell)));
    table[key].members.push_back(i);
  }
  return table;
}

/// Mode of the member labels; smallest label on ties; the ignore label
/// only wins when nothing else is present.
inline int counted_mode(const retro::PointCloud& cloud, const std::vector<std::size_t>& members) {
  std::vector<std::size_t> count(64, 0);
  bool any = false;
  for (auto i : members) {
    const int l = cloud.labels[i];
    if (l < 0) continue;
    if (static_cast<std::size_t>(l) >= count.size()) count.resize(l + 1, 0);
    ++count[l];
    any = true;
  }
  if (!any) return -1;
  int best = 0;
  for (std::size_t c = 1; c < count.size(); ++c)
    if (count[c] > count[best]) best = static_cast<int>(c);
  return best;
}

// ------------------------------------------------------------------- model

template <class T>
using Row = std::vector<T>;
template <class T>
using Rows = std::vector<Row<T>>;

/// Parameter values by name, converted to T.
template <class T>
struct Params {
  std::map<std::string, std::vector<T>> values;

  static Params from(const retro::nn::ParamList& list) {
    Params p;
    for (const auto& [name, t] : list) p.values[name] = std::vector<T>(t.values().begin(), t.values().end());
    return p;
  }
  /// Names from `list`, values from the parallel `ext` vectors.
  template <class U>
  static Params from(const retro::nn::ParamList& list, const std::vector<std::vector<U>>& ext) {
    Params p;
    for (std::size_t i = 0; i < list.size(); ++i)
      p.values[list[i].first] = std::vector<T>(ext[i].begin(), ext[i].end());
    return p;
  }
  const std::vector<T>& at(const std::string& name) const { return values.at(name); }
};

template <class T>
Row<T> linear(const Params<T>& p, const std::string& prefix, const Row<T>& x) {
  const auto& w = p.at(prefix + "weight");
  const auto& b = p.at(prefix + "bias");
  const std::size_t out = b.size();
  Row<T> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    T acc = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i * out + j];
    y[j] = acc;
  }
  return y;
}

template <class T>
Row<T> relu(Row<T> x) {
  for (auto& v : x) v = v > T(0) ? v : T(0);
  return x;
}

template <class T>
Row<T> mlp(const Params<T>& p, const std::string& prefix, const Row<T>& x) {
  return linear(p, prefix + "1/", relu(linear(p, prefix + "0/", x)));
}

template <class T>
Row<T> vec3(const double* d) {
  return {T(d[0]), T(d[1]), T(d[2])};
}

template <class T>
struct AttentionRow {
  Row<T> context;
  Row<T> weights;
};

/// One query row: q = gamma(f); per neighbor key = beta(s), value = alpha(s);
/// logit = <q + delta(dp), key + theta(dp)> / sqrt(C); context = softmax-weighted values.
template <class T>
AttentionRow<T> attend_row(const Params<T>& p, const std::string& prefix, const Row<T>& f, const Rows<T>& source,
                           std::span<const std::uint32_t> neighbors, const double* offsets, bool position_embedding) {
  using std::exp;
  using std::sqrt;
  const Row<T> q = mlp(p, prefix + "gamma/", f);
  const std::size_t c = q.size(), k = neighbors.size();
  std::vector<T> logits(k);
  Rows<T> values(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Row<T>& s = source[neighbors[j]];
    Row<T> key = linear(p, prefix + "beta/", s);
    values[j] = linear(p, prefix + "alpha/", s);
    Row<T> qe = q;
    if (position_embedding) {
      const Row<T> dp = vec3<T>(offsets + 3 * j);
      const Row<T> ed = mlp(p, prefix + "delta/", dp);
      const Row<T> et = mlp(p, prefix + "theta/", dp);
      for (std::size_t ch = 0; ch < c; ++ch) {
        qe[ch] += ed[ch];
        key[ch] += et[ch];
      }
    }
    T dot = 0;
    for (std::size_t ch = 0; ch < c; ++ch) dot += qe[ch] * key[ch];
    logits[j] = dot / sqrt(T(c));
  }
  const T mx = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  Row<T> w(k);
  for (std::size_t j = 0; j < k; ++j) total += (w[j] = exp(logits[j] - mx));
  for (auto& v : w) v /= total;
  Row<T> ctx(c, T(0));
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t ch = 0; ch < c; ++ch) ctx[ch] += w[j] * values[j][ch];
  return {ctx, w};
}

template <class T>
struct GateRow {
  Row<T> semantic, compact, gate;
};

/// o = mu(f); z = 1/(1+exp(-sigma(ctx + o))); h = z*ctx + (1-z)*o, or ctx + o ungated.
template <class T>
GateRow<T> gate_row(const Params<T>& p, const std::string& prefix, const Row<T>& ctx, const Row<T>& f, bool gated) {
  using std::exp;
  GateRow<T> r;
  r.compact = linear(p, prefix + "mu/", f);
  Row<T> sum(ctx.size());
  for (std::size_t i = 0; i < ctx.size(); ++i) sum[i] = ctx[i] + r.compact[i];
  if (!gated) {
    r.semantic = sum;
    return r;
  }
  const Row<T> pre = mlp(p, prefix + "sigma/", sum);
  r.gate.resize(pre.size());
  r.semantic.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    r.gate[i] = T(1) / (T(1) + exp(-pre[i]));
    r.semantic[i] = r.gate[i] * ctx[i] + (T(1) - r.gate[i]) * r.compact[i];
  }
  return r;
}

template <class T>
Row<T> head_row(const Params<T>& p, const std::string& prefix, const Row<T>& h) {
  return linear(p, prefix + "head/", relu(h));
}

template <class T>
struct LevelRows {
  Rows<T> context, semantic, logits, attention;
};

struct Switches {
  bool cross_attention = true;
  bool position_embedding = true;
  bool semantic_gate = true;
};

template <class T>
LevelRows<T> retro_level(const Params<T>& p, const std::string& prefix, const Rows<T>& region, const Rows<T>& source,
                         const retro::NeighborMap& map, const std::vector<double>& offsets, const Switches& sw) {
  LevelRows<T> out;
  for (std::size_t i = 0; i < region.size(); ++i) {
    Row<T> ctx;
    if (sw.cross_attention) {
      auto a = attend_row(p, prefix, region[i], source, map.row(i), offsets.data() + i * map.k * 3,
                          sw.position_embedding);
      ctx = a.context;
      out.attention.push_back(a.weights);
    } else {
      ctx = linear(p, prefix + "mu/", region[i]);
    }
    auto g = gate_row(p, prefix, ctx, region[i], sw.semantic_gate);
    out.context.push_back(ctx);
    out.logits.push_back(head_row(p, prefix, g.semantic));
    out.semantic.push_back(std::move(g.semantic));
  }
  return out;
}

/// Top-down pass over all levels; index 0 is level 1.
template <class T>
std::vector<LevelRows<T>> retro_all(const Params<T>& p, const retro::Pyramid& pyr, const std::vector<Rows<T>>& region,
                                    const Switches& sw) {
  const std::size_t levels = pyr.size();
  std::vector<LevelRows<T>> out(levels);
  for (std::size_t l = levels; l-- > 0;) {
    const std::string prefix = "retro/level_" + std::to_string(l + 1) + "/";
    if (l + 1 == levels) {
      out[l] = retro_level(p, prefix, region[l], region[l], pyr[l].self_neighbors, pyr[l].offsets_self, sw);
    } else {
      out[l] = retro_level(p, prefix, region[l], out[l + 1].semantic, pyr[l].neighbors_up, pyr[l].offsets_up, sw);
    }
  }
  return out;
}

template <class T>
Rows<T> input_rows(const retro::PointCloud& cloud) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300, z0 = 1e300;
  for (const auto& p : cloud.coords) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
    z0 = std::min(z0, p[2]);
  }
  Rows<T> out;
  for (const auto& p : cloud.coords) out.push_back({T(p[0] - (x0 + x1) / 2), T(p[1] - (y0 + y1) / 2), T(p[2] - z0)});
  return out;
}

/// Encoder features per level: stem at level 1, then max|mean pooling over
/// the pooling map followed by the level's MLP.
template <class T>
std::vector<Rows<T>> encode(const Params<T>& p, const retro::Pyramid& pyr, const Rows<T>& input) {
  std::vector<Rows<T>> enc(pyr.size());
  for (const auto& x : input) enc[0].push_back(mlp(p, "backbone/stem/", x));
  for (std::size_t l = 1; l < pyr.size(); ++l) {
    const auto& map = pyr[l].pool_neighbors;
    for (std::size_t i = 0; i < map.rows; ++i) {
      const auto nb = map.row(i);
      const std::size_t c = enc[l - 1][nb[0]].size();
      Row<T> pooled(2 * c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T mx = enc[l - 1][nb[0]][ch], s = 0;
        for (auto j : nb) {
          mx = std::max(mx, enc[l - 1][j][ch]);
          s += enc[l - 1][j][ch];
        }
        pooled[ch] = mx;
        pooled[c + ch] = s / T(nb.size());
      }
      enc[l].push_back(mlp(p, "backbone/enc_" + std::to_string(l + 1) + "/", pooled));
    }
  }
  return enc;
}

/// Normalized 1/(d^2 + 1e-8) weights of one map row.
template <class T>
Row<T> idw_row(const retro::NeighborMap& map, std::size_t i) {
  Row<T> w;
  T total = 0;
  for (double d2 : map.row_dist2(i)) {
    w.push_back(T(1) / (T(d2) + T(1e-8)));
    total += w.back();
  }
  for (auto& v : w) v /= total;
  return w;
}

template <class T>
std::vector<Rows<T>> decode(const Params<T>& p, const retro::Pyramid& pyr, const std::vector<Rows<T>>& enc) {
  std::vector<Rows<T>> feats(pyr.size());
  feats.back() = enc.back();
  for (std::size_t l = pyr.size() - 1; l-- > 0;) {
    const auto& map = pyr[l].neighbors_up;
    for (std::size_t i = 0; i < map.rows; ++i) {
      const Row<T> w = idw_row<T>(map, i);
      const auto nb = map.row(i);
      Row<T> cat = enc[l][i];
      const std::size_t c = feats[l + 1][nb[0]].size();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T v = 0;
        for (std::size_t j = 0; j < nb.size(); ++j) v += w[j] * feats[l + 1][nb[j]][ch];
        cat.push_back(v);
      }
      feats[l].push_back(mlp(p, "backbone/dec_" + std::to_string(l + 1) + "/", cat));
    }
  }
  return feats;
}

/// Mean of -log softmax(logits)[label] over rows whose label is not -1.
template <class T>
T cross_entropy(const Rows<T>& logits, std::span<const int> labels) {
  using std::exp;
  using std::log;
  T total = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] < 0) continue;
    const T mx = *std::max_element(logits[i].begin(), logits[i].end());
    T s = 0;
    for (const T& v : logits[i]) s += exp(v - mx);
    total += mx + log(s) - logits[i][labels[i]];
    ++used;
  }
  return total / T(used);
}

template <class T>
std::vector<LevelRows<T>> model_forward(const Params<T>& p, const retro::Pyramid& pyr, const retro::PointCloud& cloud,
                                        const Switches& sw) {
  const auto enc = encode(p, pyr, input_rows<T>(cloud));
  return retro_all(p, pyr, decode(p, pyr, enc), sw);
}

/// sum_l lambda_l * CE_l of the full model.
template <class T>
T model_loss(const Params<T>& p, const retro::Pyramid& pyr, const retro::PointCloud& cloud,
             const std::vector<double>& lambdas, const Switches& sw) {
  const auto out = model_forward(p, pyr, cloud, sw);
  T total = 0;
  for (std::size_t l = 0; l < pyr.size(); ++l) {
    if (lambdas[l] == 0.0) continue;
    total += T(lambdas[l]) * cross_entropy(out[l].logits, pyr[l].points.labels);
  }
  return total;
}

template <class T>
Rows<T> rows_of(const retro::Tensor& t) {
  Rows<T> out(t.rows(), Row<T>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = T(t.at(i, j));
  return out;
}

/// Largest |a - b| between a tensor and reference rows; infinity on shape mismatch.
template <class T>
double max_abs_diff(const retro::Tensor& t, const Rows<T>& ref) {
  if (t.rows() != ref.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i].size() != t.cols()) return INFINITY;
    for (std::size_t j = 0; j < ref[i].size(); ++j)
      worst = std::max(worst, std::abs(t.at(i, j) - static_cast<double>(ref[i][j])));
  }
  return worst;
}

}  // namespace oracle
