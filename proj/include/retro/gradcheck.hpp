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

// Central finite-difference check of reverse-mode gradients.
//
// relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "retro/nn.hpp"

namespace retro {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::map<std::string, double> per_param;  // max relative error per parameter tensor
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// `loss_fn` must rebuild the graph from the current parameter values on
/// every call. Every element of every listed parameter is perturbed.
/// Parameter values in extended precision, one vector per parameter tensor.
using ExtendedParams = std::vector<std::vector<long double>>;

/// Independent extended-precision evaluation of a loss.
using ExtendedLoss = std::function<long double(const ExtendedParams&)>;

/// When `reference` is given, numeric derivatives are central differences
/// of the reference evaluated at the current parameter values, which takes
/// the rounding of the double-precision forward pass out of the comparison.
inline GradCheckResult gradient_check(const std::function<Tensor()>& loss_fn, const nn::ParamList& params,
                                      double step = 1e-5, const ExtendedLoss& reference = {}) {
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : params) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }

  ExtendedParams ext;
  if (reference) {
    for (const auto& [name, t] : params) ext.emplace_back(t.values().begin(), t.values().end());
  }

  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto w = t.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double numeric = 0.0;
      if (reference) {
        const long double saved = ext[p][i];
        ext[p][i] = saved + step;
        const long double up = reference(ext);
        ext[p][i] = saved - step;
        const long double down = reference(ext);
        ext[p][i] = saved;
        numeric = static_cast<double>((up - down) / (2.0L * step));
      } else {
        const double saved = w[i];
        w[i] = saved + step;
        const double up = loss_fn().item();
        w[i] = saved - step;
        const double down = loss_fn().item();
        w[i] = saved;
        numeric = (up - down) / (2.0 * step);
      }
      const double err = relative_error(analytic[p][i], numeric);
      worst = std::max(worst, err);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = params[p].first;
        res.worst_index = i;
        res.worst_analytic = analytic[p][i];
        res.worst_numeric = numeric;
      }
    }
    res.per_param[params[p].first] = worst;
  }
  return res;
}

/// A small random graph whose loss is a scalar function of `params`, with
/// an independent extended-precision evaluation of the same loss.
struct GraphCase {
  std::string name;
  nn::ParamList params;
  std::function<Tensor()> loss;
  ExtendedLoss reference;
};

namespace detail {

inline Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor random_const(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_leaf(std::move(shape), rng);
  t.set_requires_grad(false);
  return t;
}

/// Weighted sum with fixed random coefficients, so that no gradient of the
/// reduced tensor is structurally zero.
inline Tensor probe(const Tensor& t, const Tensor& coeff) { return ops::sum(ops::mul(t, coeff)); }

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Plain row-major long double matrices for the reference evaluations.
namespace ext {

using Real = long double;

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> v;
  Real& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

inline Mat make(std::size_t r, std::size_t c, const std::vector<Real>& v) { return {r, c, v}; }
inline Mat zeros(std::size_t r, std::size_t c) { return {r, c, std::vector<Real>(r * c, 0.0L)}; }
inline Mat of(const Tensor& t) {
  return {t.rows(), t.cols(), std::vector<Real>(t.values().begin(), t.values().end())};
}

template <class F>
Mat map(Mat a, F f) {
  for (auto& x : a.v) x = f(x);
  return a;
}
template <class F>
Mat zip(Mat a, const Mat& b, F f) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = f(a.v[i], b.v[i]);
  return a;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j)
      for (std::size_t p = 0; p < a.cols; ++p) out(i, j) += a(i, p) * b(p, j);
  return out;
}
inline Mat add_row(Mat a, const Mat& row) {
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) a(i, j) += row.v[j];
  return a;
}
inline Mat relu(Mat a) {
  return map(std::move(a), [](Real x) { return x > 0 ? x : 0.0L; });
}
inline Mat sigmoid(Mat a) {
  return map(std::move(a), [](Real x) { return 1.0L / (1.0L + std::exp(-x)); });
}
inline Mat softmax(Mat a) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    Real total = 0;
    for (std::size_t j = 0; j < a.cols; ++j) total += std::exp(a(i, j));
    for (std::size_t j = 0; j < a.cols; ++j) a(i, j) = std::exp(a(i, j)) / total;
  }
  return a;
}
inline Real sum(const Mat& a) {
  Real s = 0;
  for (Real x : a.v) s += x;
  return s;
}
inline Real probe(const Mat& a, const Mat& c) { return sum(zip(a, c, [](Real x, Real y) { return x * y; })); }
inline Real cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  Real total = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (labels[i] < 0) continue;
    Real z = 0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j));
    total += std::log(z) - logits(i, static_cast<std::size_t>(labels[i]));
    ++used;
  }
  return total / static_cast<Real>(used);
}

}  // namespace ext
}  // namespace detail

/// Builds graph number `which`; consecutive numbers cycle through templates
/// that together exercise every differentiable primitive.
inline GraphCase random_graph(std::size_t which, std::mt19937_64& rng) {
  using detail::pick;
  using detail::random_const;
  using detail::random_leaf;
  namespace x = detail::ext;
  using x::Mat;
  using x::Real;
  const std::size_t m = pick(rng, 2, 5), k = pick(rng, 2, 4), n = pick(rng, 2, 5);
  GraphCase g;
  switch (which % 7) {
    case 0: {  // matmul -> softmax -> cross-entropy
      Tensor a = random_leaf({m, k}, rng), b = random_leaf({k, n}, rng);
      std::vector<int> labels(m);
      for (auto& l : labels) l = static_cast<int>(pick(rng, 0, n - 1));
      Tensor c = random_const({m, n}, rng);
      const Mat cc = x::of(c);
      g = {"matmul-softmax-ce", {{"a", a}, {"b", b}},
           [=] {
             Tensor y = ops::matmul(a, b);
             return ops::add(ops::cross_entropy_mean(y, labels), detail::probe(ops::softmax(y), c));
           },
           [=](const ExtendedParams& p) {
             const Mat y = x::matmul(x::make(m, k, p[0]), x::make(k, n, p[1]));
             return x::cross_entropy(y, labels) + x::probe(x::softmax(y), cc);
           }};
      break;
    }
    case 1: {  // linear, relu, add_row, sub, scale
      Tensor xs = random_leaf({m, k}, rng), w = random_leaf({k, n}, rng), b = random_leaf({1, n}, rng);
      Tensor r = random_leaf({1, n}, rng), c = random_const({m, n}, rng);
      const Mat cc = x::of(c);
      g = {"linear-relu-addrow", {{"x", xs}, {"w", w}, {"b", b}, {"r", r}},
           [=] {
             Tensor h = ops::relu(ops::linear(xs, w, b));
             Tensor y = ops::sub(ops::add_row(h, r), ops::scale(ops::matmul(xs, w), 0.5));
             return detail::probe(y, c);
           },
           [=](const ExtendedParams& p) {
             const Mat xw = x::matmul(x::make(m, k, p[0]), x::make(k, n, p[1]));
             const Mat h = x::add_row(x::relu(x::add_row(xw, x::make(1, n, p[2]))), x::make(1, n, p[3]));
             return x::probe(x::zip(h, xw, [](Real u, Real v) { return u - 0.5L * v; }), cc);
           }};
      break;
    }
    case 2: {  // sigmoid gate: mul, rsub_scalar, add
      Tensor a = random_leaf({m, n}, rng), u = random_leaf({m, n}, rng), v = random_leaf({m, n}, rng);
      Tensor c = random_const({m, n}, rng);
      const Mat cc = x::of(c);
      g = {"sigmoid-gate", {{"a", a}, {"u", u}, {"v", v}},
           [=] {
             Tensor z = ops::sigmoid(ops::scale(a, 3.0));
             return detail::probe(ops::add(ops::mul(z, u), ops::mul(ops::rsub_scalar(1.0, z), v)), c);
           },
           [=](const ExtendedParams& p) {
             Real total = 0;
             for (std::size_t i = 0; i < m * n; ++i) {
               const Real z = 1.0L / (1.0L + std::exp(-3.0L * p[0][i]));
               total += cc.v[i] * (z * p[1][i] + (1.0L - z) * p[2][i]);
             }
             return total;
           }};
      break;
    }
    case 3: {  // gather with repeats, pooled by max/mean/sum, concatenated
      Tensor src = random_leaf({m, n}, rng);
      std::vector<std::uint32_t> idx(m * k);
      for (auto& i : idx) i = static_cast<std::uint32_t>(pick(rng, 0, m - 1));
      Tensor c = random_const({m, 3 * n}, rng), d = random_const({m, 1}, rng);
      const Mat cc = x::of(c), dd = x::of(d);
      g = {"gather-pool-concat", {{"src", src}},
           [=] {
             Tensor gathered = ops::gather_rows(src, idx);
             Tensor pooled = ops::concat_cols(
                 ops::concat_cols(ops::group_max(gathered, k), ops::group_mean(gathered, k)), ops::group_sum(gathered, k));
             return ops::add(detail::probe(pooled, c), detail::probe(ops::row_sum(ops::mul(pooled, pooled)), d));
           },
           [=](const ExtendedParams& p) {
             Real total = 0;
             for (std::size_t i = 0; i < m; ++i) {
               Real squares = 0;
               for (std::size_t j = 0; j < n; ++j) {
                 Real mx = p[0][idx[i * k] * n + j], s = 0;
                 for (std::size_t q = 0; q < k; ++q) {
                   const Real val = p[0][idx[i * k + q] * n + j];
                   mx = std::max(mx, val);
                   s += val;
                 }
                 const Real pooled[3] = {mx, s / static_cast<Real>(k), s};
                 for (std::size_t b = 0; b < 3; ++b) {
                   total += cc(i, b * n + j) * pooled[b];
                   squares += pooled[b] * pooled[b];
                 }
               }
               total += dd.v[i] * squares;
             }
             return total;
           }};
      break;
    }
    case 4: {  // attention core: repeat_rows, row_dot, reshape, softmax, weighted_group_sum
      Tensor q = random_leaf({m, n}, rng), keys = random_leaf({m * k, n}, rng), vals = random_leaf({m * k, n}, rng);
      Tensor c = random_const({m, n}, rng);
      const Mat cc = x::of(c);
      g = {"attention-core", {{"q", q}, {"keys", keys}, {"vals", vals}},
           [=] {
             Tensor logits = ops::reshape(ops::scale(ops::row_dot(ops::repeat_rows(q, k), keys), 0.5), {m, k});
             return detail::probe(ops::weighted_group_sum(vals, ops::softmax(logits)), c);
           },
           [=](const ExtendedParams& p) {
             Mat logits = x::zeros(m, k);
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t j = 0; j < k; ++j)
                 for (std::size_t ch = 0; ch < n; ++ch) logits(i, j) += 0.5L * p[0][i * n + ch] * p[1][(i * k + j) * n + ch];
             const Mat w = x::softmax(logits);
             Real total = 0;
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t ch = 0; ch < n; ++ch) {
                 Real ctx = 0;
                 for (std::size_t j = 0; j < k; ++j) ctx += w(i, j) * p[2][(i * k + j) * n + ch];
                 total += cc(i, ch) * ctx;
               }
             return total;
           }};
      break;
    }
    case 5: {  // mul_col and cross-entropy with an ignored row
      Tensor a = random_leaf({m + 1, n}, rng), w = random_leaf({m + 1, 1}, rng);
      std::vector<int> labels(m + 1);
      for (auto& l : labels) l = static_cast<int>(pick(rng, 0, n - 1));
      labels[pick(rng, 0, m)] = -1;
      g = {"mulcol-ce-ignore", {{"a", a}, {"w", w}},
           [=] { return ops::cross_entropy_mean(ops::scale(ops::mul_col(a, w), 2.0), labels, -1); },
           [=](const ExtendedParams& p) {
             Mat y = x::make(m + 1, n, p[0]);
             for (std::size_t i = 0; i <= m; ++i)
               for (std::size_t j = 0; j < n; ++j) y(i, j) *= 2.0L * p[1][i];
             return x::cross_entropy(y, labels);
           }};
      break;
    }
    default: {  // two-layer MLP with a sigmoid read-out, reduced by sum
      Tensor xs = random_leaf({m, k}, rng), w1 = random_leaf({k, n}, rng), b1 = random_leaf({1, n}, rng);
      Tensor w2 = random_leaf({n, k}, rng), b2 = random_leaf({1, k}, rng);
      g = {"mlp-sigmoid-sum", {{"x", xs}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}},
           [=] {
             Tensor h = ops::linear(ops::relu(ops::linear(xs, w1, b1)), w2, b2);
             return ops::sum(ops::sigmoid(h));
           },
           [=](const ExtendedParams& p) {
             const Mat h = x::relu(x::add_row(x::matmul(x::make(m, k, p[0]), x::make(k, n, p[1])), x::make(1, n, p[2])));
             return x::sum(x::sigmoid(x::add_row(x::matmul(h, x::make(n, k, p[3])), x::make(1, k, p[4]))));
           }};
      break;
    }
  }
  return g;
}

/// Gradient check over `graphs` random graphs; the result keeps the worst
/// case, with `worst_param` prefixed by the graph index and name.
inline GradCheckResult run_gradient_suite(std::uint64_t seed, std::size_t graphs = 21, double step = 1e-5,
                                          bool extended_reference = true) {
  std::mt19937_64 rng(seed);
  GradCheckResult total;
  for (std::size_t i = 0; i < graphs; ++i) {
    GraphCase gc = random_graph(i, rng);
    GradCheckResult r = gradient_check(gc.loss, gc.params, step, extended_reference ? gc.reference : ExtendedLoss{});
    const std::string tag = std::to_string(i) + ":" + gc.name;
    total.checked += r.checked;
    for (const auto& [p, e] : r.per_param) total.per_param[tag + "/" + p] = e;
    if (r.max_rel_error >= total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst_param = tag + "/" + r.worst_param;
      total.worst_index = r.worst_index;
      total.worst_analytic = r.worst_analytic;
      total.worst_numeric = r.worst_numeric;
    }
  }
  return total;
}

}  // namespace retro
