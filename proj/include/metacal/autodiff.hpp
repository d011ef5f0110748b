// Copyright (c) 2026 The metacal Authors. All Rights Reserved.
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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to Vars created on it. Parents of a
// node always have smaller ids, so a single descending sweep over ids is a
// valid reverse topological order. Vector-Jacobian products are themselves
// expressed as tape operations; `grad(..)` keeps them on the tape so that a
// gradient can be differentiated once more (the differentiate-through-one-
// update pattern used by the meta trainer).
//
// Broadcasting in binary ops is limited to two cases: a single-element
// operand against any shape, and a row ([K] or [1xK]) against a matrix
// [nxK]. Column broadcasts must go through an explicit broadcast_to().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "metacal/tensor.hpp"

namespace metacal::autodiff {

enum class OpKind : std::uint8_t {
  leaf,
  neg,
  exp,
  log,
  relu,
  sigmoid,
  abs,
  clamp_min,
  sqrt,
  pow,
  add,
  sub,
  mul,
  div,
  max,
  matmul,
  transpose,
  reshape,
  broadcast,
  sum,
  sum_axis,
  softmax_rows,
  log_softmax_rows,
  take,
  scatter_add,
};

const char* op_name(OpKind kind);

enum class UnaryKind { neg, exp, log, relu, sigmoid, abs, clamp_min, sqrt };
enum class BinaryKind { add, sub, mul, div, max };
enum class ReduceKind { sum, mean };

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape is
/// alive and has not been truncated below the node id.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::uint8_t n_parents = 0;
    std::size_t parents[2] = {0, 0};
    bool requires_grad = false;
    Tensor value;
    // Op attributes: clamp threshold, reduction axis, target shape,
    // gather/scatter indices, constant exponent.
    double scalar = 0.0;
    std::size_t axis = 0;
    Shape target;
    std::vector<std::size_t> index;
    Tensor aux;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Recomputes a node's value from its parents' stored values. Leaves
  /// return their stored value.
  Tensor replay(std::size_t id) const;

  /// Drops every node with id >= size. Vars pointing there become stale.
  void truncate(std::size_t size);

  /// Handle for an existing node id.
  Var handle(std::size_t id) {
    if (id >= nodes_.size()) throw std::out_of_range("stale node id");
    return Var(this, id);
  }

  /// Appends a computed node. Used by the op functions below.
  Var append(Node node);

  bool in_backward() const { return in_backward_; }
  bool& in_backward_flag() { return in_backward_; }

 private:
  std::vector<Node> nodes_;
  bool in_backward_ = false;
};

/// Gradients of a scalar root keyed by leaf node id.
class Gradients {
 public:
  bool contains(Var v) const { return by_id_.count(v.id()) != 0; }
  const Tensor& operator[](Var v) const;
  const Tensor& at(std::size_t id) const;
  std::size_t size() const { return by_id_.size(); }
  const std::map<std::size_t, Tensor>& items() const { return by_id_; }

  void set(std::size_t id, Tensor g) { by_id_[id] = std::move(g); }

 private:
  std::map<std::size_t, Tensor> by_id_;
};

// Elementwise.
Var apply_unary(UnaryKind kind, Var x, double param = 0.0);
Var neg(Var x);
Var exp(Var x);
Var log(Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var abs(Var x);
Var clamp_min(Var x, double c);
/// sqrt with derivative defined as 0 at x == 0.
Var sqrt(Var x);
/// x^e with a constant exponent (single element or same shape as x).
Var pow(Var x, const Tensor& exponent);

Var apply_binary(BinaryKind kind, Var x, Var y);
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var div(Var x, Var y);
/// Elementwise maximum; ties route the gradient to x.
Var maximum(Var x, Var y);

Var scale(Var x, double c);
Var add_scalar(Var x, double c);

// Shape and linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
/// Expands a single element, a row ([K] / [1xK]) or a column ([nx1]) to a
/// matrix target shape.
Var broadcast_to(Var x, Shape shape);

// Reductions. Without an axis the result has shape [1]; axis 0 of [nxK]
// gives [K], axis 1 gives [n].
Var reduce(ReduceKind kind, Var x, std::optional<std::size_t> axis = std::nullopt);
Var sum(Var x);
Var sum(Var x, std::size_t axis);
Var mean(Var x);
Var mean(Var x, std::size_t axis);

Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

/// out[i] = flat(x)[idx[i]], shape [idx.size()].
Var take(Var x, std::vector<std::size_t> idx);
/// Inverse of take: scatters g (shape [idx.size()]) into zeros of `shape`,
/// adding on repeated indices.
Var scatter_add(Var g, std::vector<std::size_t> idx, Shape shape);
/// out[i] = x[i, idx[i]] for a matrix x.
Var gather_rows(Var x, std::span<const std::size_t> idx);

Var operator+(Var x, Var y);
Var operator-(Var x, Var y);
Var operator*(Var x, Var y);
Var operator/(Var x, Var y);
Var operator-(Var x);
Var operator*(Var x, double c);
Var operator*(double c, Var x);
Var operator+(Var x, double c);
Var operator-(double c, Var x);

/// Gradients of the scalar `root` with respect to every leaf that requires
/// gradients and feeds it. Intermediate gradient nodes are discarded.
Gradients backward(Var root);

/// Gradient graph of `root` with respect to `wrt`, kept on the tape so the
/// returned Vars can be differentiated again. Inputs that do not influence
/// the root get a zero constant.
std::vector<Var> grad(Var root, std::span<const Var> wrt);

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = false;
  Tensor analytic;
  Tensor numeric;
};

using ScalarProgram = std::function<Var(Tape&, Var)>;

/// Compares reverse-mode gradients of a scalar program against central
/// differences. The per-entry error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const ScalarProgram& f, const Tensor& x, double h = 1e-6,
                           double tol = 1e-5, double floor = 1e-8);

}  // namespace metacal::autodiff
