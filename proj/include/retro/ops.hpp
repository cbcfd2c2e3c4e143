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

// Differentiable primitives. Matrices are rank-2 row-major tensors; a
// scalar is shape [1]. Broadcasting is limited to a row-vector bias
// (add_row), a per-row column weight (mul_col) and scalar constants.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "retro/tensor.hpp"

namespace retro::ops {

namespace detail_ops {

inline void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined()) throw StructureError(std::string(op) + ": undefined tensor");
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail_ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail_ops::require_matrix(a, "matmul");
  detail_ops::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return Tensor::make_result({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    if (an->requires_grad) {
      // grad_a = G * B^T, with B^T materialized so the inner loop is contiguous.
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bn->value[p * n + j];
      double* GA = an->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        double* ga = GA + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* b = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) ga[p] += g * b[p];
        }
      }
    }
    if (bn->requires_grad) {
      // grad_b = A^T * G
      const double* Av = an->value.data();
      double* GB = bn->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          double* gb = GB + p * n;
          const double* g = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gb[j] += aip * g[j];
        }
      }
    }
  }, "matmul");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail_ops::require_same(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail_ops::require_same(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
  }, "sub");
}

/// x[m x k] * w[k x n] + bias[1 x n] as one node.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  detail_ops::require_matrix(x, "linear");
  detail_ops::require_matrix(w, "linear");
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  if (w.shape()[0] != k) {
    throw ShapeError("linear: inner extents differ, " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  if (bias.numel() != n) throw ShapeError("linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(n) + " outputs");
  std::vector<double> out(m * n);
  const double* X = x.values().data();
  const double* W = w.values().data();
  const double* B = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    std::copy_n(B, n, row);
    for (std::size_t p = 0; p < k; ++p) {
      const double xip = X[i * k + p];
      const double* wrow = W + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xip * wrow[j];
    }
  }
  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return Tensor::make_result({m, n}, std::move(out), {xn, wn, bn}, [xn, wn, bn, m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    if (xn->requires_grad) {
      std::vector<double> wt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) wt[j * k + p] = wn->value[p * n + j];
      for (std::size_t i = 0; i < m; ++i) {
        double* gx = xn->grad.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* wr = wt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) gx[p] += g * wr[p];
        }
      }
    }
    if (wn->requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xip = xn->value[i * k + p];
          double* gw = wn->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gw[j] += xip * g[j];
        }
      }
    }
    if (bn->requires_grad) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) bn->grad[j] += G[i * n + j];
    }
  }, "linear");
}

/// Each row of a[m x n] repeated `times` times in place: [(m*times) x n].
inline Tensor repeat_rows(const Tensor& a, std::size_t times) {
  detail_ops::require_matrix(a, "repeat_rows");
  if (times == 0) throw ShapeError("repeat_rows: zero repeats");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * times * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < times; ++t) std::copy_n(a.values().data() + i * n, n, out.data() + (i * times + t) * n);
  auto an = a.node();
  return Tensor::make_result({m * times, n}, std::move(out), {an}, [an, m, n, times](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[(i * times + t) * n + j];
  }, "repeat_rows");
}

/// Row-wise inner products <a_i, b_i>: [m x n], [m x n] -> [m x 1].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail_ops::require_matrix(a, "row_dot");
  detail_ops::require_same(a, b, "row_dot");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j] * bv[i * n + j];
  auto an = a.node(), bn = b.node();
  return Tensor::make_result({m, 1}, std::move(out), {an, bn}, [an, bn, m, n](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      const double g = self.grad[i];
      if (an->requires_grad)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g * bn->value[i * n + j];
      if (bn->requires_grad)
        for (std::size_t j = 0; j < n; ++j) bn->grad[i * n + j] += g * an->value[i * n + j];
    }
  }, "row_dot");
}

/// out_i = sum_j w[i, j] * v[i*k + j] for w [r x k], v [(r*k) x n] -> [r x n].
inline Tensor weighted_group_sum(const Tensor& v, const Tensor& w) {
  detail_ops::require_matrix(v, "weighted_group_sum");
  detail_ops::require_matrix(w, "weighted_group_sum");
  const std::size_t r = w.rows(), k = w.cols(), n = v.cols();
  if (v.rows() != r * k) {
    throw ShapeError("weighted_group_sum: values " + shape_str(v.shape()) + " vs weights " + shape_str(w.shape()));
  }
  std::vector<double> out(r * n, 0.0);
  auto vv = v.values(), wv = w.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double wij = wv[i * k + j];
      const double* src = vv.data() + (i * k + j) * n;
      for (std::size_t c = 0; c < n; ++c) out[i * n + c] += wij * src[c];
    }
  auto vn = v.node(), wn = w.node();
  return Tensor::make_result({r, n}, std::move(out), {vn, wn}, [vn, wn, r, k, n](detail::Node& self) {
    for (std::size_t i = 0; i < r; ++i) {
      const double* g = self.grad.data() + i * n;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t row = i * k + j;
        if (vn->requires_grad) {
          const double wij = wn->value[i * k + j];
          for (std::size_t c = 0; c < n; ++c) vn->grad[row * n + c] += wij * g[c];
        }
        if (wn->requires_grad) {
          double s = 0.0;
          for (std::size_t c = 0; c < n; ++c) s += g[c] * vn->value[row * n + c];
          wn->grad[i * k + j] += s;
        }
      }
    }
  }, "weighted_group_sum");
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail_ops::require_same(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
  }, "mul");
}

/// x * s for a constant s.
inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  auto an = a.node();
  return Tensor::make_result(a.shape(), std::move(out), {an}, [an, s](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  }, "scale");
}

/// s - x for a constant s.
inline Tensor rsub_scalar(double s, const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = s - v;
  auto an = a.node();
  return Tensor::make_result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] -= self.grad[i];
  }, "rsub_scalar");
}

/// a[m x n] + bias broadcast over rows; bias is [n] or [1 x n].
inline Tensor add_row(const Tensor& a, const Tensor& bias) {
  detail_ops::require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  auto an = a.node(), bn = bias.node();
  return Tensor::make_result(a.shape(), std::move(out), {an, bn}, [an, bn, m, n](detail::Node& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) bn->grad[j] += self.grad[i * n + j];
  }, "add_row");
}

/// a[m x n] with row i multiplied by w[i]; w is [m x 1].
inline Tensor mul_col(const Tensor& a, const Tensor& w) {
  detail_ops::require_matrix(a, "mul_col");
  const std::size_t m = a.rows(), n = a.cols();
  if (w.numel() != m) {
    throw ShapeError("mul_col: weights " + shape_str(w.shape()) + " do not fit " + shape_str(a.shape()));
  }
  auto av = a.values(), wv = w.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * wv[i];
  auto an = a.node(), wn = w.node();
  return Tensor::make_result(a.shape(), std::move(out), {an, wn}, [an, wn, m, n](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* g = self.grad.data() + i * n;
      if (an->requires_grad)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j] * wn->value[i];
      if (wn->requires_grad) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g[j] * an->value[i * n + j];
        wn->grad[i] += s;
      }
    }
  }, "mul_col");
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return Tensor::make_result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
  }, "relu");
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) {
    // Branches keep exp() from overflowing for large |v|.
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  auto an = a.node();
  return Tensor::make_result(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      an->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  }, "sigmoid");
}

/// Softmax over the last axis with max subtraction.
inline Tensor softmax(const Tensor& a) {
  const std::size_t k = a.shape().back();
  const std::size_t slices = a.numel() / k;
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t s = 0; s < slices; ++s) {
    double* x = out.data() + s * k;
    const double mx = *std::max_element(x, x + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      x[j] = std::exp(x[j] - mx);
      sum += x[j];
    }
    for (std::size_t j = 0; j < k; ++j) x[j] /= sum;
  }
  auto an = a.node();
  return Tensor::make_result(a.shape(), std::move(out), {an}, [an, k, slices](detail::Node& self) {
    for (std::size_t s = 0; s < slices; ++s) {
      const double* y = self.value.data() + s * k;
      const double* g = self.grad.data() + s * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) an->grad[s * k + j] += y[j] * (g[j] - dot);
    }
  }, "softmax");
}

/// Same values under a new shape with equal element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto an = a.node();
  return Tensor::make_result(std::move(shape), std::move(out), {an}, [an](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  }, "reshape");
}

/// Row selection out[r] = a[index[r]]; the adjoint scatter-adds.
inline Tensor gather_rows(const Tensor& a, std::span<const std::uint32_t> index) {
  detail_ops::require_matrix(a, "gather_rows");
  const std::size_t n = a.cols(), m = a.rows();
  if (index.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<double> out(index.size() * n);
  auto av = a.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) {
      throw IndexError("gather_rows: row " + std::to_string(index[r]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(av.data() + index[r] * n, n, out.data() + r * n);
  }
  auto an = a.node();
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return Tensor::make_result({index.size(), n}, std::move(out), {an},
                             [an, idx = std::move(idx), n](detail::Node& self) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = an->grad.data() + idx[r] * n;
      const double* g = self.grad.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
    }
  }, "gather_rows");
}

/// [a | b] along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail_ops::require_matrix(a, "concat_cols");
  detail_ops::require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  std::vector<double> out(m * (na + nb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(b.values().data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  auto an = a.node(), bn = b.node();
  return Tensor::make_result({m, na + nb}, std::move(out), {an, bn}, [an, bn, m, na, nb](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* g = self.grad.data() + i * (na + nb);
      if (an->requires_grad)
        for (std::size_t j = 0; j < na; ++j) an->grad[i * na + j] += g[j];
      if (bn->requires_grad)
        for (std::size_t j = 0; j < nb; ++j) bn->grad[i * nb + j] += g[na + j];
    }
  }, "concat_cols");
}

/// Row sums: [m x n] -> [m x 1].
inline Tensor row_sum(const Tensor& a) {
  detail_ops::require_matrix(a, "row_sum");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
  auto an = a.node();
  return Tensor::make_result({m, 1}, std::move(out), {an}, [an, m, n](detail::Node& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[i];
  }, "row_sum");
}

/// Sums consecutive blocks of `group` rows: [(g*r) x n] -> [r x n].
inline Tensor group_sum(const Tensor& a, std::size_t group) {
  detail_ops::require_matrix(a, "group_sum");
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("group_sum: " + std::to_string(a.rows()) + " rows not divisible into groups of " +
                     std::to_string(group));
  }
  const std::size_t r = a.rows() / group, n = a.cols();
  std::vector<double> out(r * n, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t g = 0; g < group; ++g)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av[(i * group + g) * n + j];
  auto an = a.node();
  return Tensor::make_result({r, n}, std::move(out), {an}, [an, r, n, group](detail::Node& self) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t g = 0; g < group; ++g)
        for (std::size_t j = 0; j < n; ++j) an->grad[(i * group + g) * n + j] += self.grad[i * n + j];
  }, "group_sum");
}

inline Tensor group_mean(const Tensor& a, std::size_t group) {
  return scale(group_sum(a, group), 1.0 / static_cast<double>(group));
}

/// Columnwise max over consecutive blocks of `group` rows. Ties route the
/// gradient to the first maximal row.
inline Tensor group_max(const Tensor& a, std::size_t group) {
  detail_ops::require_matrix(a, "group_max");
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("group_max: " + std::to_string(a.rows()) + " rows not divisible into groups of " +
                     std::to_string(group));
  }
  const std::size_t r = a.rows() / group, n = a.cols();
  std::vector<double> out(r * n);
  std::vector<std::uint32_t> arg(r * n);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = i * group;
      for (std::size_t g = 1; g < group; ++g) {
        const std::size_t row = i * group + g;
        if (av[row * n + j] > av[best * n + j]) best = row;
      }
      out[i * n + j] = av[best * n + j];
      arg[i * n + j] = static_cast<std::uint32_t>(best);
    }
  }
  auto an = a.node();
  return Tensor::make_result({r, n}, std::move(out), {an}, [an, arg = std::move(arg), n](detail::Node& self) {
    for (std::size_t o = 0; o < arg.size(); ++o) an->grad[arg[o] * n + o % n] += self.grad[o];
  }, "group_max");
}

/// Sum of all elements -> scalar.
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto an = a.node();
  return Tensor::make_result({1}, {s}, {an}, [an](detail::Node& self) {
    for (auto& g : an->grad) g += self.grad[0];
  }, "sum");
}

/// Mean over non-ignored rows of -log softmax(logits)[label].
inline Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels,
                                 std::optional<int> ignore = std::nullopt) {
  detail_ops::require_matrix(logits, "cross_entropy_mean");
  const std::size_t n = logits.rows(), m = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(logits.shape()));
  }
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore && labels[i] == *ignore) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m) {
      throw IndexError("cross_entropy_mean: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0," + std::to_string(m) + ")");
    }
    ++used;
  }
  if (used == 0) throw ArgumentError("cross_entropy_mean: every row is ignored, loss is empty");

  auto lv = logits.values();
  std::vector<double> prob(n * m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore && labels[i] == *ignore) continue;
    const double* x = lv.data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double se = 0.0;
    for (std::size_t j = 0; j < m; ++j) se += std::exp(x[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - x[labels[i]];
    for (std::size_t j = 0; j < m; ++j) prob[i * m + j] = std::exp(x[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(used);
  auto ln = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result({1}, {total * inv}, {ln},
                             [ln, prob = std::move(prob), lab = std::move(lab), ignore, n, m, inv](detail::Node& self) {
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < n; ++i) {
      if (ignore && lab[i] == *ignore) continue;
      for (std::size_t j = 0; j < m; ++j) ln->grad[i * m + j] += g * prob[i * m + j];
      ln->grad[i * m + lab[i]] -= g;
    }
  }, "cross_entropy_mean");
}

/// Row-wise argmax; ties resolve to the smaller column.
inline std::vector<int> argmax_rows(const Tensor& a) {
  detail_ops::require_matrix(a, "argmax_rows");
  const std::size_t n = a.cols();
  std::vector<int> out(a.rows());
  auto av = a.values();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* x = av.data() + i * n;
    out[i] = static_cast<int>(std::max_element(x, x + n) - x);
  }
  return out;
}

}  // namespace retro::ops
