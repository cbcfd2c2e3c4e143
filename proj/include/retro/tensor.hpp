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

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to a shared node. Every differentiable op
// creates a new node that remembers its parents and an adjoint rule; the
// resulting DAG is the graph. backward() orders the reachable nodes
// topologically, clears their gradient buffers and replays the adjoint
// rules once, in reverse. Calling backward() a second time on the same
// loss is rejected.
//
// Nothing here is global, so independent graphs may live on different
// threads. A single graph is not thread-safe.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "retro/errors.hpp"

namespace retro {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grad.
  std::function<void(Node&)> adjoint;
};

inline void check_finite(const Node& n, const char* op) {
#if !defined(NDEBUG) || defined(RETRO_CHECK_FINITE)
  for (double v : n.value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
  }
#else
  (void)n;
  (void)op;
#endif
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double fill, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), fill);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.front(); }
  std::size_t cols() const { return node_->value.size() / node_->shape.front(); }

  std::span<const double> values() const { return node_->value; }
  // Leaf mutation (optimizer updates, test perturbations). Does not touch the graph.
  std::span<double> mutable_values() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  /// Deep copy of values as a fresh leaf with the same requires_grad flag.
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

  /// Reverse sweep from a scalar loss. Gradients of every reachable
  /// requires_grad tensor are rebuilt from zero.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Op construction: output node wired to its parents.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<std::shared_ptr<detail::Node>> parents,
                            std::function<void(detail::Node&)> adjoint, const char* op) {
    Tensor out(std::move(shape), std::move(values), false);
    detail::check_finite(*out.node_, op);
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const auto& p) { return p->requires_grad; });
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->adjoint = std::move(adjoint);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (!defined()) throw StructureError("backward on undefined tensor");
  if (numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(shape()));
  if (node_->backward_done) throw StructureError("backward already ran on this graph");
  node_->backward_done = true;

  // Iterative post-order DFS gives parents before children.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (node_->requires_grad) stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
  if (order.empty()) return;
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->adjoint) (*it)->adjoint(**it);
  }
}

}  // namespace retro
