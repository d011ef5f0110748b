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

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "metacal/autodiff.hpp"

using namespace metacal;
using namespace metacal::autodiff;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Pushes entries at least `margin` away from zero (the relu/abs/clamp kink).
Tensor away_from_zero(Tensor t, double margin) {
  for (auto& v : t.values()) {
    if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
  }
  return t;
}

}  // namespace

TEST_CASE("unary ops on scalar examples") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Tensor::vector({0.0}))).value()[0] == 0.5);
  auto r = relu(tape.constant(Tensor::vector({-1.0, 2.0}))).value();
  CHECK(r == Tensor::vector({0.0, 2.0}));
  auto e = exp(tape.constant(Tensor::vector({0.0, 1.0}))).value();
  CHECK(e[0] == 1.0);
  CHECK(e[1] == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(2.718281828).epsilon(1e-9));
}

TEST_CASE("log of non-positive entries is a domain error") {
  Tape tape;
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-3.0}))), DomainError);
}

TEST_CASE("binary ops and broadcasting") {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1, 2}));
  Var b = tape.constant(Tensor::vector({3, 4}));
  CHECK((a + b).value() == Tensor::vector({4, 6}));

  Tensor x = Tensor::matrix({{1.5, -2.0}, {0.25, 7.0}});
  Var xv = tape.constant(x);
  CHECK(mul(xv, tape.constant(ones_like(x))).value() == x);
  CHECK(div(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({4.0}))).value()[0] == 0.25);

  // Row broadcast: [2] against [2x2].
  auto rowsum = add(xv, tape.constant(Tensor::vector({10, 20}))).value();
  CHECK(rowsum == Tensor::matrix({{11.5, 18.0}, {10.25, 27.0}}));
  // Scalar broadcast.
  CHECK(scale(xv, 2.0).value() == Tensor::matrix({{3.0, -4.0}, {0.5, 14.0}}));

  CHECK_THROWS_AS(add(tape.constant(Tensor::vector({1, 2, 3})), a), ShapeError);
  CHECK_THROWS_AS(div(a, tape.constant(Tensor::vector({1.0, 1e-301}))), DomainError);
}

TEST_CASE("matmul examples") {
  std::mt19937_64 rng(3);
  Tape tape;
  Tensor x = random_tensor(rng, {3, 4});
  CHECK(matmul(tape.constant(Tensor::identity(3)), tape.constant(x)).value() == x);
  auto prod = matmul(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3}, {4}}))).value();
  CHECK(prod.shape() == Shape{1, 1});
  CHECK(prod[0] == 11.0);
  auto z = matmul(tape.constant(Tensor({2, 3})), tape.constant(x.reshaped({3, 4}))).value();
  CHECK(z == Tensor({2, 4}));
  CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("reductions") {
  Tape tape;
  CHECK(sum(tape.constant(Tensor::vector({1, 2, 3}))).value().item() == 6.0);
  auto m = mean(tape.constant(Tensor::matrix({{1, 3}, {5, 7}})), 1).value();
  CHECK(m == Tensor::vector({2, 6}));
  CHECK(sum(tape.constant(Tensor({4, 5}))).value().item() == 0.0);
  CHECK(sum(tape.constant(Tensor::matrix({{1, 3}, {5, 7}})), 0).value() == Tensor::vector({6, 10}));
  CHECK_THROWS_AS(sum(tape.constant(Tensor::vector({1, 2})), 1), ShapeError);
}

TEST_CASE("softmax_rows") {
  Tape tape;
  auto s = softmax_rows(tape.constant(Tensor::matrix({{0, 0}}))).value();
  CHECK(s == Tensor::matrix({{0.5, 0.5}}));
  auto t = softmax_rows(tape.constant(Tensor::matrix({{1, 0}}))).value();
  const double e = std::exp(1.0);
  CHECK(t[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
  CHECK(t[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(t[1] == doctest::Approx(0.26894).epsilon(1e-5));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {4, 7}, -20.0, 20.0);
    Tensor shifted = x;
    for (std::size_t i = 0; i < 4; ++i) {
      const double c = shift(rng);
      for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += c;
    }
    auto p = softmax_rows(tape.constant(x)).value();
    auto q = softmax_rows(tape.constant(shifted)).value();
    CHECK(kernels::argmax_rows(p) == kernels::argmax_rows(q));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        total += p.at(i, j);
        CHECK(p.at(i, j) == doctest::Approx(q.at(i, j)).epsilon(1e-10));
      }
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("gather_rows forward and scatter gradient") {
  Tape tape;
  std::vector<std::size_t> idx{0, 1};
  auto g = gather_rows(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), idx).value();
  CHECK(g == Tensor::vector({1, 4}));

  Tensor x = Tensor::matrix({{5, 6}, {7, 8}, {9, 10}});
  std::vector<std::size_t> zeros(3, 0);
  CHECK(gather_rows(tape.constant(x), zeros).value() == Tensor::vector({5, 7, 9}));

  std::vector<std::size_t> bad{0, 2};
  CHECK_THROWS_AS(gather_rows(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), bad), std::out_of_range);

  // d/dx of sum(gather_rows(x, [1])) for a single row is [0, 1].
  Tensor row = Tensor::matrix({{0.3, -1.2}});
  auto report = grad_check(
      [](Tape&, Var v) {
        std::vector<std::size_t> one{1};
        return sum(gather_rows(v, one));
      },
      row);
  CHECK(report.passed);
  CHECK(report.analytic == Tensor::matrix({{0.0, 1.0}}));
  CHECK(report.numeric[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(report.numeric[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(5);
  Tensor xt = random_tensor(rng, {2, 3});
  Tensor yt = random_tensor(rng, {2, 3});
  {
    Tape tape;
    Var x = tape.leaf(xt);
    CHECK(backward(sum(x))[x] == ones_like(xt));
  }
  {
    Tape tape;
    Var x = tape.leaf(xt);
    Var y = tape.constant(yt);
    CHECK(backward(sum(x * y))[x] == yt);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.0}));
    const double analytic = backward(sum(sigmoid(x)))[x][0];
    // Central difference oracle, h = 1e-6.
    const double h = 1e-6;
    const double fd = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2 * h);
    CHECK(analytic == 0.25);
    CHECK(std::fabs(analytic - fd) < 1e-9);
  }
}

TEST_CASE("backward error paths") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(backward(x * x), ShapeError);

  Tape other;
  Var y = other.leaf(Tensor::vector({1.0}));
  Var z = sum(y * y);
  other.truncate(1);
  CHECK_THROWS_AS(backward(z), std::logic_error);
}

TEST_CASE("unrelated leaves get zero gradients; constants get none") {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var unused = tape.leaf(Tensor::vector({3.0}));
  Var c = tape.constant(Tensor::vector({4.0, 5.0}));
  auto grads = backward(sum(a * c));
  CHECK(grads[a] == Tensor::vector({4.0, 5.0}));
  CHECK(grads[unused] == Tensor::vector({0.0}));
  CHECK_FALSE(grads.contains(c));
  // Intermediate gradient nodes are dropped after backward.
  const std::size_t before = tape.size();
  backward(sum(a));
  CHECK(tape.size() == before + 1);
}

TEST_CASE("clamp_min passes no gradient at the kink") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1.0, 0.0, 2.0}));
  CHECK(backward(sum(clamp_min(x, 0.0)))[x] == Tensor::vector({0.0, 0.0, 1.0}));
}

TEST_CASE("grad_check examples") {
  auto squares = grad_check([](Tape&, Var x) { return sum(x * x); }, Tensor::vector({1.0, 2.0}), 1e-6, 1e-5);
  CHECK(squares.passed);
  CHECK(squares.analytic == Tensor::vector({2.0, 4.0}));

  std::mt19937_64 rng(1);
  auto plain = grad_check([](Tape&, Var x) { return sum(x); }, random_tensor(rng, {3, 3}));
  CHECK(plain.max_rel_error < 1e-8);
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 rng(2024);
  const double tol = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = away_from_zero(random_tensor(rng, {3, 4}), 1e-2);
    Tensor positive = random_tensor(rng, {3, 4}, 0.5, 3.0);
    Tensor other = away_from_zero(random_tensor(rng, {3, 4}), 1e-2);
    Tensor row = random_tensor(rng, {4});
    Tensor right = random_tensor(rng, {4, 2});
    Tensor weights = random_tensor(rng, {3, 4});

    // Weighted sums keep every output entry in play.
    auto weighted = [weights](Tape& t, Var v) {
      if (v.shape() == weights.shape()) return sum(v * t.constant(weights));
      return sum(v * v);
    };
    std::vector<std::pair<const char*, ScalarProgram>> programs = {
        {"neg", [&](Tape& t, Var v) { return weighted(t, -v); }},
        {"exp", [&](Tape& t, Var v) { return weighted(t, exp(v)); }},
        {"relu", [&](Tape& t, Var v) { return weighted(t, relu(v)); }},
        {"sigmoid", [&](Tape& t, Var v) { return weighted(t, sigmoid(v)); }},
        {"abs", [&](Tape& t, Var v) { return weighted(t, abs(v)); }},
        {"clamp_min", [&](Tape& t, Var v) { return weighted(t, clamp_min(v, 0.0)); }},
        {"add", [&](Tape& t, Var v) { return weighted(t, v + t.constant(other)); }},
        {"sub", [&](Tape& t, Var v) { return weighted(t, t.constant(other) - v); }},
        {"mul", [&](Tape& t, Var v) { return weighted(t, v * v); }},
        {"max", [&](Tape& t, Var v) { return weighted(t, maximum(v, t.constant(other))); }},
        {"row-broadcast", [&](Tape& t, Var v) { return weighted(t, v * t.constant(row)); }},
        {"matmul-left", [&](Tape& t, Var v) { return sum(matmul(v, t.constant(right)) * matmul(v, t.constant(right))); }},
        {"matmul-right", [&](Tape& t, Var v) { return sum(exp(matmul(t.constant(Tensor({2, 4}, 0.1)), transpose(v)))); }},
        {"transpose", [&](Tape& t, Var v) { return sum(transpose(v) * t.constant(kernels::transpose(weights))); }},
        {"sum-axis0", [&](Tape&, Var v) { return sum(exp(sum(v, 0))); }},
        {"sum-axis1", [&](Tape&, Var v) { return sum(exp(mean(v, 1))); }},
        {"softmax", [&](Tape& t, Var v) { return weighted(t, softmax_rows(v)); }},
        {"log_softmax", [&](Tape& t, Var v) { return weighted(t, log_softmax_rows(v)); }},
        {"take", [&](Tape&, Var v) { return sum(exp(take(v, {0, 5, 5, 11}))); }},
        {"broadcast-col", [&](Tape& t, Var v) { return weighted(t, broadcast_to(reshape(sum(v, 1), {3, 1}), {3, 4})); }},
    };
    for (auto& [name, program] : programs) {
      CAPTURE(name);
      auto report = grad_check(program, x, 1e-6, tol);
      CHECK(report.max_rel_error <= tol);
    }
    std::vector<std::pair<const char*, ScalarProgram>> positive_programs = {
        {"log", [&](Tape& t, Var v) { return weighted(t, log(v)); }},
        {"div-num", [&](Tape& t, Var v) { return weighted(t, v / t.constant(positive)); }},
        {"div-den", [&](Tape& t, Var v) { return weighted(t, t.constant(other) / v); }},
        {"sqrt", [&](Tape& t, Var v) { return weighted(t, sqrt(v)); }},
        {"pow", [&](Tape& t, Var v) { return weighted(t, pow(v, Tensor::scalar(2.5))); }},
    };
    for (auto& [name, program] : positive_programs) {
      CAPTURE(name);
      auto report = grad_check(program, positive, 1e-6, tol);
      CHECK(report.max_rel_error <= tol);
    }
  }
}

TEST_CASE("gradients of gradients (create-graph backward)") {
  // f(x) = sum(x^3) -> df/dx = 3x^2 -> d/dx sum(w * 3x^2) = 6 w x.
  Tensor xt = Tensor::vector({0.5, -1.5, 2.0});
  Tensor wt = Tensor::vector({1.0, 2.0, -0.5});
  Tape tape;
  Var x = tape.leaf(xt);
  Var f = sum(x * x * x);
  Var w = tape.constant(wt);
  std::vector<Var> wrt{x};
  Var dfdx = grad(f, wrt)[0];
  for (std::size_t i = 0; i < 3; ++i) CHECK(dfdx.value()[i] == doctest::Approx(3 * xt[i] * xt[i]));
  auto second = backward(sum(dfdx * w))[x];
  for (std::size_t i = 0; i < 3; ++i) CHECK(second[i] == doctest::Approx(6 * wt[i] * xt[i]));

  // Mixed partial through softmax/log_softmax: compare to finite differences
  // of the first-order gradient.
  std::mt19937_64 rng(77);
  Tensor z0 = random_tensor(rng, {2, 3});
  Tensor probe = random_tensor(rng, {2, 3});
  auto program = [&](Tape& t, Var z) {
    std::vector<Var> in{z};
    Var g = grad(sum(log_softmax_rows(z) * t.constant(probe)) + sum(softmax_rows(z) * softmax_rows(z)), in)[0];
    return sum(g * g);
  };
  auto report = grad_check(program, z0, 1e-6, 1e-5);
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("tape replay reproduces values bit-exactly and runs are deterministic") {
  std::mt19937_64 rng(9);
  Tensor xt = random_tensor(rng, {5, 3});
  Tensor wt = random_tensor(rng, {3, 4});
  auto run = [&](Tape& tape) {
    Var x = tape.constant(xt);
    Var w = tape.leaf(wt);
    Var loss = mean(log_softmax_rows(relu(matmul(x, w))) * -1.0);
    return std::pair{loss, backward(loss)[w]};
  };
  Tape a, b;
  auto [la, ga] = run(a);
  auto [lb, gb] = run(b);
  CHECK(la.value() == lb.value());
  CHECK(ga == gb);
  for (std::size_t id = 0; id < a.size(); ++id) CHECK(a.replay(id) == a.value(id));
  for (std::size_t id = 0; id < a.size(); ++id) {
    const auto& node = a.node(id);
    for (int j = 0; j < node.n_parents; ++j) CHECK(node.parents[j] < id);
  }
}
