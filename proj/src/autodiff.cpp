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

#include "metacal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace metacal::autodiff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::neg: return "neg";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::abs: return "abs";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::sqrt: return "sqrt";
    case OpKind::pow: return "pow";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::max: return "max";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::broadcast: return "broadcast";
    case OpKind::sum: return "sum";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::log_softmax_rows: return "log_softmax_rows";
    case OpKind::take: return "take";
    case OpKind::scatter_add: return "scatter_add";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

const Tensor& Gradients::operator[](Var v) const { return at(v.id()); }

const Tensor& Gradients::at(std::size_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
  return it->second;
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_row_of(const Shape& row, const Shape& mat) {
  if (mat.size() != 2) return false;
  if (row.size() == 1) return row[0] == mat[1];
  return row.size() == 2 && row[0] == 1 && row[1] == mat[1];
}

bool is_col_of(const Shape& col, const Shape& mat) {
  return mat.size() == 2 && col.size() == 2 && col[1] == 1 && col[0] == mat[0];
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& x, const Tensor& y, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

Tensor evaluate(const Tape::Node& node, const Tape& tape) {
  const auto parent = [&](int k) -> const Tensor& { return tape.value(node.parents[k]); };
  switch (node.kind) {
    case OpKind::leaf:
      return node.value;
    case OpKind::neg:
      return map_unary(parent(0), [](double v) { return -v; });
    case OpKind::exp:
      return map_unary(parent(0), [](double v) { return std::exp(v); });
    case OpKind::log: {
      const Tensor& x = parent(0);
      for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive entry " + std::to_string(v));
      }
      return map_unary(x, [](double v) { return std::log(v); });
    }
    case OpKind::relu:
      return map_unary(parent(0), [](double v) { return v > 0.0 ? v : 0.0; });
    case OpKind::sigmoid:
      return map_unary(parent(0), stable_sigmoid);
    case OpKind::abs:
      return map_unary(parent(0), [](double v) { return std::fabs(v); });
    case OpKind::clamp_min: {
      const double c = node.scalar;
      return map_unary(parent(0), [c](double v) { return v > c ? v : c; });
    }
    case OpKind::sqrt: {
      const Tensor& x = parent(0);
      for (double v : x.data()) {
        if (v < 0.0) throw DomainError("sqrt of negative entry " + std::to_string(v));
      }
      return map_unary(x, [](double v) { return std::sqrt(v); });
    }
    case OpKind::pow: {
      const Tensor& x = parent(0);
      const Tensor& e = node.aux;
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::pow(x[i], e.size() == 1 ? e[0] : e[i]);
      return out;
    }
    case OpKind::add:
      return map_binary(parent(0), parent(1), [](double a, double b) { return a + b; });
    case OpKind::sub:
      return map_binary(parent(0), parent(1), [](double a, double b) { return a - b; });
    case OpKind::mul:
      return map_binary(parent(0), parent(1), [](double a, double b) { return a * b; });
    case OpKind::div: {
      const Tensor& y = parent(1);
      for (double v : y.data()) {
        if (std::fabs(v) < 1e-300) throw DomainError("division by an entry with |y| < 1e-300");
      }
      return map_binary(parent(0), y, [](double a, double b) { return a / b; });
    }
    case OpKind::max:
      return map_binary(parent(0), parent(1), [](double a, double b) { return a >= b ? a : b; });
    case OpKind::matmul:
      return kernels::matmul(parent(0), parent(1));
    case OpKind::transpose:
      return kernels::transpose(parent(0));
    case OpKind::reshape:
      return parent(0).reshaped(node.target);
    case OpKind::broadcast: {
      const Tensor& x = parent(0);
      Tensor out(node.target);
      if (x.size() == 1) {
        std::fill(out.values().begin(), out.values().end(), x[0]);
      } else if (is_row_of(x.shape(), node.target)) {
        const std::size_t n = node.target[0], k = node.target[1];
        for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data().begin(), k, out.data().begin() + i * k);
      } else {
        const std::size_t n = node.target[0], k = node.target[1];
        for (std::size_t i = 0; i < n; ++i) std::fill_n(out.data().begin() + i * k, k, x[i]);
      }
      return out;
    }
    case OpKind::sum: {
      double total = 0.0;
      for (double v : parent(0).data()) total += v;
      return Tensor::scalar(total);
    }
    case OpKind::sum_axis: {
      const Tensor& x = parent(0);
      if (x.rank() == 1) {
        double total = 0.0;
        for (double v : x.data()) total += v;
        return Tensor::scalar(total);
      }
      const std::size_t n = x.rows(), k = x.cols();
      if (node.axis == 0) {
        Tensor out({k});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) out[j] += x.at(i, j);
        return out;
      }
      Tensor out({n});
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += x.at(i, j);
        out[i] = total;
      }
      return out;
    }
    case OpKind::softmax_rows:
      return kernels::softmax_rows(parent(0));
    case OpKind::log_softmax_rows:
      return kernels::log_softmax_rows(parent(0));
    case OpKind::take: {
      const Tensor& x = parent(0);
      Tensor out({node.index.size()});
      for (std::size_t i = 0; i < node.index.size(); ++i) out[i] = x[node.index[i]];
      return out;
    }
    case OpKind::scatter_add: {
      const Tensor& g = parent(0);
      Tensor out(node.target);
      for (std::size_t i = 0; i < node.index.size(); ++i) out[node.index[i]] += g[i];
      return out;
    }
  }
  throw std::logic_error("unknown op");
}

void check_same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("operation on an empty Var");
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

Tape::Node make_node(OpKind kind, std::initializer_list<Var> parents) {
  Tape::Node node;
  node.kind = kind;
  for (Var p : parents) {
    if (!p.valid()) throw std::invalid_argument(std::string("empty Var passed to ") + op_name(kind));
    node.parents[node.n_parents++] = p.id();
  }
  return node;
}

Var record(Var anchor, Tape::Node node) { return anchor.tape().append(std::move(node)); }

Var constant_like(Var anchor, Tensor value) { return anchor.tape().constant(std::move(value)); }

// Aligns two operands to a common shape using scalar or row broadcasting.
std::pair<Var, Var> align(Var x, Var y) {
  const Shape& sx = x.shape();
  const Shape& sy = y.shape();
  if (sx == sy) return {x, y};
  if (y.value().size() == 1 && (x.value().size() > 1 || sx.size() >= sy.size())) return {x, broadcast_to(y, sx)};
  if (x.value().size() == 1) return {broadcast_to(x, sy), y};
  if (is_row_of(sy, sx)) return {x, broadcast_to(y, sx)};
  if (is_row_of(sx, sy)) return {broadcast_to(x, sy), y};
  throw ShapeError("incompatible shapes for elementwise op: " + shape_str(sx) + " vs " + shape_str(sy));
}

// Reduces a broadcast gradient back to `shape`.
Var unbroadcast(Var g, const Shape& shape) {
  if (g.shape() == shape) return g;
  if (shape_numel(shape) == 1) return reshape(sum(g), shape);
  if (is_row_of(shape, g.shape())) return reshape(sum(g, 0), shape);
  if (is_col_of(shape, g.shape())) return reshape(sum(g, 1), shape);
  throw ShapeError("cannot reduce gradient " + shape_str(g.shape()) + " to " + shape_str(shape));
}

template <typename Pred>
Tensor mask_of(const Tensor& x, Pred pred) {
  Tensor m(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = pred(x[i]) ? 1.0 : 0.0;
  return m;
}

// Writes the contribution of output gradient `g` of node `id` to each parent
// that requires gradients. Every rule is built from tape ops so it can be
// differentiated again.
void vector_jacobian(Tape& tape, std::size_t id, Var g, Var out[2]) {
  // Copy what we need: appending nodes invalidates references into the tape.
  const Tape::Node& ref = tape.node(id);
  const OpKind kind = ref.kind;
  const std::size_t p0 = ref.parents[0];
  const std::size_t p1 = ref.parents[1];
  const bool two = ref.n_parents > 1;
  const double scalar = ref.scalar;
  const std::size_t axis = ref.axis;
  const bool want0 = tape.node(p0).requires_grad;
  const bool want1 = two && tape.node(p1).requires_grad;

  Var self = tape.handle(id);
  Var x = tape.handle(p0);
  Var y = two ? tape.handle(p1) : Var();
  const Shape xshape = x.shape();

  switch (kind) {
    case OpKind::leaf:
      return;
    case OpKind::neg:
      out[0] = neg(g);
      return;
    case OpKind::exp:
      out[0] = mul(g, self);
      return;
    case OpKind::log:
      out[0] = div(g, x);
      return;
    case OpKind::relu:
      out[0] = mul(g, tape.constant(mask_of(x.value(), [](double v) { return v > 0.0; })));
      return;
    case OpKind::sigmoid:
      out[0] = mul(g, mul(self, 1.0 - self));
      return;
    case OpKind::abs: {
      Tensor sign(xshape);
      for (std::size_t i = 0; i < sign.size(); ++i) {
        const double v = x.value()[i];
        sign[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      }
      out[0] = mul(g, tape.constant(std::move(sign)));
      return;
    }
    case OpKind::clamp_min:
      out[0] = mul(g, tape.constant(mask_of(x.value(), [scalar](double v) { return v > scalar; })));
      return;
    case OpKind::sqrt: {
      Tensor live = mask_of(self.value(), [](double v) { return v > 0.0; });
      Tensor pad(xshape);
      for (std::size_t i = 0; i < pad.size(); ++i) pad[i] = 1.0 - live[i];
      Var denom = add(scale(self, 2.0), tape.constant(std::move(pad)));
      out[0] = div(mul(g, tape.constant(std::move(live))), denom);
      return;
    }
    case OpKind::pow: {
      const Tensor exponent = tape.node(id).aux;
      Tensor coef(xshape), reduced(xshape);
      for (std::size_t i = 0; i < coef.size(); ++i) {
        const double e = exponent.size() == 1 ? exponent[0] : exponent[i];
        coef[i] = e;
        reduced[i] = e == 0.0 ? 0.0 : e - 1.0;
      }
      out[0] = mul(g, mul(tape.constant(std::move(coef)), pow(x, reduced)));
      return;
    }
    case OpKind::add:
      if (want0) out[0] = g;
      if (want1) out[1] = g;
      return;
    case OpKind::sub:
      if (want0) out[0] = g;
      if (want1) out[1] = neg(g);
      return;
    case OpKind::mul:
      if (want0) out[0] = mul(g, y);
      if (want1) out[1] = mul(g, x);
      return;
    case OpKind::div:
      if (want0) out[0] = div(g, y);
      if (want1) out[1] = neg(div(mul(g, self), y));
      return;
    case OpKind::max: {
      const Tensor& xv = x.value();
      const Tensor& yv = y.value();
      Tensor mx(xshape), my(xshape);
      for (std::size_t i = 0; i < mx.size(); ++i) {
        mx[i] = xv[i] >= yv[i] ? 1.0 : 0.0;
        my[i] = 1.0 - mx[i];
      }
      if (want0) out[0] = mul(g, tape.constant(std::move(mx)));
      if (want1) out[1] = mul(g, tape.constant(std::move(my)));
      return;
    }
    case OpKind::matmul:
      if (want0) out[0] = matmul(g, transpose(y));
      if (want1) out[1] = matmul(transpose(x), g);
      return;
    case OpKind::transpose:
      out[0] = transpose(g);
      return;
    case OpKind::reshape:
      out[0] = reshape(g, xshape);
      return;
    case OpKind::broadcast:
      out[0] = unbroadcast(g, xshape);
      return;
    case OpKind::sum:
      out[0] = broadcast_to(g, xshape);
      return;
    case OpKind::sum_axis:
      if (xshape.size() == 1) {
        out[0] = broadcast_to(g, xshape);
      } else if (axis == 0) {
        out[0] = broadcast_to(g, xshape);
      } else {
        out[0] = broadcast_to(reshape(g, {xshape[0], 1}), xshape);
      }
      return;
    case OpKind::softmax_rows: {
      Var inner = reshape(sum(mul(g, self), 1), {xshape[0], 1});
      out[0] = mul(self, sub(g, broadcast_to(inner, xshape)));
      return;
    }
    case OpKind::log_softmax_rows: {
      Var rows = reshape(sum(g, 1), {xshape[0], 1});
      out[0] = sub(g, mul(exp(self), broadcast_to(rows, xshape)));
      return;
    }
    case OpKind::take:
      out[0] = scatter_add(g, tape.node(id).index, xshape);
      return;
    case OpKind::scatter_add:
      out[0] = take(g, tape.node(id).index);
      return;
  }
}

class BackwardGuard {
 public:
  explicit BackwardGuard(bool& flag) : flag_(flag) {
    if (flag_) throw std::logic_error("backward called while another backward pass is running on this tape");
    flag_ = true;
  }
  ~BackwardGuard() { flag_ = false; }
  BackwardGuard(const BackwardGuard&) = delete;
  BackwardGuard& operator=(const BackwardGuard&) = delete;

 private:
  bool& flag_;
};

void check_root(Var root) {
  if (!root.valid()) throw std::logic_error("backward on an empty Var");
  if (root.id() >= root.tape().size()) throw std::logic_error("backward root is stale (tape was truncated)");
  if (root.value().size() != 1) {
    throw ShapeError("backward root must be a scalar, got shape " + shape_str(root.shape()));
  }
}

// Accumulated gradient Var per node id (<= root), in descending-id order.
std::vector<Var> propagate(Tape& tape, std::size_t root) {
  std::vector<Var> acc(root + 1);
  acc[root] = tape.constant(ones_like(tape.value(root)));
  for (std::size_t k = root + 1; k-- > 0;) {
    if (!acc[k].valid()) continue;
    const Tape::Node& node = tape.node(k);
    if (node.kind == OpKind::leaf || !node.requires_grad) continue;
    const std::size_t parents[2] = {node.parents[0], node.parents[1]};
    const std::uint8_t n_parents = node.n_parents;
    Var contrib[2];
    vector_jacobian(tape, k, acc[k], contrib);
    for (std::uint8_t j = 0; j < n_parents; ++j) {
      if (!contrib[j].valid()) continue;
      Var& slot = acc[parents[j]];
      slot = slot.valid() ? add(slot, contrib[j]) : contrib[j];
    }
  }
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw DomainError("non-finite value in leaf tensor");
  Node node;
  node.kind = OpKind::leaf;
  node.requires_grad = requires_grad;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::append(Node node) {
  for (std::uint8_t j = 0; j < node.n_parents; ++j) {
    if (node.parents[j] >= nodes_.size()) throw std::logic_error("parent id beyond tape end");
    node.requires_grad = node.requires_grad || nodes_[node.parents[j]].requires_grad;
  }
  node.value = evaluate(node, *this);
  if (!node.value.all_finite()) {
    throw DomainError(std::string("non-finite result in ") + op_name(node.kind));
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::replay(std::size_t id) const { return evaluate(nodes_.at(id), *this); }

void Tape::truncate(std::size_t size) {
  if (size < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(size), nodes_.end());
}

// ---------------------------------------------------------------------------
// Ops

Var apply_unary(UnaryKind kind, Var x, double param) {
  OpKind op = OpKind::neg;
  switch (kind) {
    case UnaryKind::neg: op = OpKind::neg; break;
    case UnaryKind::exp: op = OpKind::exp; break;
    case UnaryKind::log: op = OpKind::log; break;
    case UnaryKind::relu: op = OpKind::relu; break;
    case UnaryKind::sigmoid: op = OpKind::sigmoid; break;
    case UnaryKind::abs: op = OpKind::abs; break;
    case UnaryKind::clamp_min: op = OpKind::clamp_min; break;
    case UnaryKind::sqrt: op = OpKind::sqrt; break;
  }
  auto node = make_node(op, {x});
  node.scalar = param;
  return record(x, std::move(node));
}

Var neg(Var x) { return apply_unary(UnaryKind::neg, x); }
Var exp(Var x) { return apply_unary(UnaryKind::exp, x); }
Var log(Var x) { return apply_unary(UnaryKind::log, x); }
Var relu(Var x) { return apply_unary(UnaryKind::relu, x); }
Var sigmoid(Var x) { return apply_unary(UnaryKind::sigmoid, x); }
Var abs(Var x) { return apply_unary(UnaryKind::abs, x); }
Var clamp_min(Var x, double c) { return apply_unary(UnaryKind::clamp_min, x, c); }
Var sqrt(Var x) { return apply_unary(UnaryKind::sqrt, x); }

Var pow(Var x, const Tensor& exponent) {
  if (exponent.size() != 1 && exponent.size() != x.value().size()) {
    throw ShapeError("pow exponent must be a single value or match " + shape_str(x.shape()));
  }
  auto node = make_node(OpKind::pow, {x});
  node.aux = exponent;
  return record(x, std::move(node));
}

Var apply_binary(BinaryKind kind, Var x, Var y) {
  check_same_tape(x, y);
  auto [a, b] = align(x, y);
  OpKind op = OpKind::add;
  switch (kind) {
    case BinaryKind::add: op = OpKind::add; break;
    case BinaryKind::sub: op = OpKind::sub; break;
    case BinaryKind::mul: op = OpKind::mul; break;
    case BinaryKind::div: op = OpKind::div; break;
    case BinaryKind::max: op = OpKind::max; break;
  }
  return record(a, make_node(op, {a, b}));
}

Var add(Var x, Var y) { return apply_binary(BinaryKind::add, x, y); }
Var sub(Var x, Var y) { return apply_binary(BinaryKind::sub, x, y); }
Var mul(Var x, Var y) { return apply_binary(BinaryKind::mul, x, y); }
Var div(Var x, Var y) { return apply_binary(BinaryKind::div, x, y); }
Var maximum(Var x, Var y) { return apply_binary(BinaryKind::max, x, y); }

Var scale(Var x, double c) { return mul(x, constant_like(x, Tensor::scalar(c))); }
Var add_scalar(Var x, double c) { return add(x, constant_like(x, Tensor::scalar(c))); }

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  return record(a, make_node(OpKind::matmul, {a, b}));
}

Var transpose(Var x) {
  if (x.value().rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(x.shape()));
  return record(x, make_node(OpKind::transpose, {x}));
}

Var reshape(Var x, Shape shape) {
  if (shape == x.shape()) return x;
  if (shape_numel(shape) != x.value().size()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto node = make_node(OpKind::reshape, {x});
  node.target = std::move(shape);
  return record(x, std::move(node));
}

Var broadcast_to(Var x, Shape shape) {
  if (shape == x.shape()) return x;
  const bool ok = x.value().size() == 1 || is_row_of(x.shape(), shape) || is_col_of(x.shape(), shape);
  if (!ok || shape_numel(shape) == 0) {
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto node = make_node(OpKind::broadcast, {x});
  node.target = std::move(shape);
  return record(x, std::move(node));
}

Var reduce(ReduceKind kind, Var x, std::optional<std::size_t> axis) {
  Var out;
  if (!axis) {
    out = record(x, make_node(OpKind::sum, {x}));
  } else {
    const std::size_t rank = x.value().rank();
    if (*axis >= rank || rank > 2) {
      throw ShapeError("invalid reduction axis " + std::to_string(*axis) + " for " + shape_str(x.shape()));
    }
    auto node = make_node(OpKind::sum_axis, {x});
    node.axis = *axis;
    out = record(x, std::move(node));
  }
  if (kind == ReduceKind::mean) {
    const std::size_t count = x.value().size() / out.value().size();
    if (count == 0) throw ShapeError("empty reduction");
    out = scale(out, 1.0 / static_cast<double>(count));
  }
  return out;
}

Var sum(Var x) { return reduce(ReduceKind::sum, x); }
Var sum(Var x, std::size_t axis) { return reduce(ReduceKind::sum, x, axis); }
Var mean(Var x) { return reduce(ReduceKind::mean, x); }
Var mean(Var x, std::size_t axis) { return reduce(ReduceKind::mean, x, axis); }

Var softmax_rows(Var x) {
  if (x.value().rank() != 2) throw ShapeError("softmax_rows expects a matrix, got " + shape_str(x.shape()));
  return record(x, make_node(OpKind::softmax_rows, {x}));
}

Var log_softmax_rows(Var x) {
  if (x.value().rank() != 2) throw ShapeError("log_softmax_rows expects a matrix, got " + shape_str(x.shape()));
  return record(x, make_node(OpKind::log_softmax_rows, {x}));
}

Var take(Var x, std::vector<std::size_t> idx) {
  if (idx.empty()) throw ShapeError("take with no indices");
  const std::size_t n = x.value().size();
  for (auto i : idx) {
    if (i >= n) throw std::out_of_range("take index " + std::to_string(i) + " out of range " + std::to_string(n));
  }
  auto node = make_node(OpKind::take, {x});
  node.index = std::move(idx);
  return record(x, std::move(node));
}

Var scatter_add(Var g, std::vector<std::size_t> idx, Shape shape) {
  if (g.value().size() != idx.size()) throw ShapeError("scatter_add: values and indices differ in length");
  const std::size_t n = shape_numel(shape);
  for (auto i : idx) {
    if (i >= n) throw std::out_of_range("scatter index " + std::to_string(i) + " out of range " + std::to_string(n));
  }
  auto node = make_node(OpKind::scatter_add, {g});
  node.index = std::move(idx);
  node.target = std::move(shape);
  return record(g, std::move(node));
}

Var gather_rows(Var x, std::span<const std::size_t> idx) {
  const std::size_t n = x.value().rows(), k = x.value().cols();
  if (idx.size() != n) throw ShapeError("gather_rows: need one index per row");
  std::vector<std::size_t> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k) throw std::out_of_range("class index " + std::to_string(idx[i]) + " out of range");
    flat[i] = i * k + idx[i];
  }
  return take(x, std::move(flat));
}

Var operator+(Var x, Var y) { return add(x, y); }
Var operator-(Var x, Var y) { return sub(x, y); }
Var operator*(Var x, Var y) { return mul(x, y); }
Var operator/(Var x, Var y) { return div(x, y); }
Var operator-(Var x) { return neg(x); }
Var operator*(Var x, double c) { return scale(x, c); }
Var operator*(double c, Var x) { return scale(x, c); }
Var operator+(Var x, double c) { return add_scalar(x, c); }
Var operator-(double c, Var x) { return add_scalar(neg(x), c); }

// ---------------------------------------------------------------------------
// Differentiation

Gradients backward(Var root) {
  check_root(root);
  Tape& tape = root.tape();
  BackwardGuard guard(tape.in_backward_flag());
  const std::size_t mark = tape.size();
  std::vector<Var> acc = propagate(tape, root.id());

  Gradients out;
  for (std::size_t id = 0; id <= root.id(); ++id) {
    const Tape::Node& node = tape.node(id);
    if (node.kind != OpKind::leaf || !node.requires_grad) continue;
    out.set(id, acc[id].valid() ? acc[id].value() : zeros_like(node.value));
  }
  tape.truncate(mark);
  return out;
}

std::vector<Var> grad(Var root, std::span<const Var> wrt) {
  check_root(root);
  Tape& tape = root.tape();
  BackwardGuard guard(tape.in_backward_flag());
  std::vector<Var> acc = propagate(tape, root.id());
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    if (&w.tape() != &tape) throw std::invalid_argument("grad: input lives on a different tape");
    if (w.id() < acc.size() && acc[w.id()].valid()) {
      out.push_back(acc[w.id()]);
    } else {
      out.push_back(tape.constant(zeros_like(w.value())));
    }
  }
  return out;
}

GradCheckReport grad_check(const ScalarProgram& f, const Tensor& x, double h, double tol, double floor) {
  GradCheckReport report;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    report.analytic = backward(y)[xv];
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.leaf(at, true)).value().item();
  };
  report.numeric = Tensor(x.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    double numeric = std::numeric_limits<double>::quiet_NaN();
    try {
      numeric = (eval(plus) - eval(minus)) / (2.0 * h);
    } catch (const DomainError&) {
    }
    report.numeric[i] = numeric;
    const double a = report.analytic[i];
    double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  report.max_rel_error = worst;
  report.passed = worst <= tol;
  return report;
}

}  // namespace metacal::autodiff
