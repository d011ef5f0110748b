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
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "metacal/losses.hpp"

using namespace metacal;
using namespace metacal::losses;
namespace ad = metacal::autodiff;

namespace {

double value(ad::Var v) { return v.value().item(); }

Tensor random_logits(std::mt19937_64& rng, std::size_t n, std::size_t k, double scale = 1.5) {
  std::normal_distribution<double> z(0.0, scale);
  Tensor t({n, k});
  for (auto& v : t.values()) v = z(rng);
  return t;
}

std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng() % k;
  return y;
}

}  // namespace

TEST_CASE("smooth_labels examples") {
  const std::vector<std::size_t> labels{0, 2, 1};
  auto onehot = smooth_labels(labels, Tensor::vector({0.0}), 3);
  CHECK(onehot == Tensor::matrix({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}}));

  std::vector<std::size_t> one{3};
  auto ls = smooth_labels(one, Tensor::vector({0.05}), 10);
  for (std::size_t k = 0; k < 10; ++k) CHECK(ls[k] == doctest::Approx(k == 3 ? 0.955 : 0.005).epsilon(1e-14));

  auto near_uniform = smooth_labels(one, Tensor::vector({0.999999}), 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(near_uniform[k] == doctest::Approx(0.25).epsilon(1e-5));

  // Vector smoothing picks the entry of the sample's true class.
  auto vec = smooth_labels(labels, Tensor::vector({0.3, 0.6, 0.0}), 3);
  CHECK(vec.at(0, 0) == doctest::Approx(0.7 + 0.1));
  CHECK(vec.at(0, 1) == doctest::Approx(0.1));
  CHECK(vec.at(1, 2) == 1.0);
  CHECK(vec.at(2, 1) == doctest::Approx(0.4 + 0.2));

  CHECK_THROWS(smooth_labels(labels, Tensor::vector({0.1, 0.2}), 3));
  CHECK_THROWS(smooth_labels(std::vector<std::size_t>{3}, Tensor::vector({0.1}), 3));
}

TEST_CASE("smoothed rows sum to one") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng() % 20;
    auto labels = random_labels(rng, 1 + rng() % 30, k);
    Tensor omega({k});
    for (auto& v : omega.values()) v = u(rng) * 0.999999;
    auto t = smooth_labels(labels, omega, k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += t.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("cross entropy") {
  ad::Tape tape;
  auto uniform = tape.constant(Tensor::matrix({{0.0, 0.0}}));
  CHECK(value(cross_entropy_soft(uniform, tape.constant(Tensor::matrix({{0.5, 0.5}})))) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));

  auto sharp = tape.constant(Tensor::matrix({{60.0, 0.0, 0.0}}));
  CHECK(value(cross_entropy(sharp, std::vector<std::size_t>{0})) < 1e-25);

  // Gibbs: CE(targets, softmax(z)) >= H(targets), equality at softmax(z) = targets.
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = random_logits(rng, 5, 4);
    Tensor z2 = random_logits(rng, 5, 4);
    Tensor t = kernels::softmax_rows(z2);
    double entropy = 0.0;
    for (double p : t.data()) entropy -= p * std::log(p);
    entropy /= 5.0;
    CHECK(value(cross_entropy_soft(tape.constant(z), tape.constant(t))) >= entropy - 1e-12);
    CHECK(value(cross_entropy_soft(tape.constant(z2), tape.constant(t))) ==
          doctest::Approx(entropy).epsilon(1e-12));
  }
}

TEST_CASE("focal loss") {
  ad::Tape tape;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor z = random_logits(rng, 8, 5);
    auto y = random_labels(rng, 8, 5);
    const double fl = value(focal_loss(tape.constant(z), y, 0.0));
    const double ce = value(cross_entropy(tape.constant(z), y));
    CHECK(std::fabs(fl - ce) <= 1e-12);
  }
  // p = 0.5: 0.5^3 * ln 2.
  auto half = tape.constant(Tensor::matrix({{0.0, 0.0}}));
  CHECK(value(focal_loss(half, std::vector<std::size_t>{0}, 3.0)) == doctest::Approx(0.125 * std::log(2.0)).epsilon(1e-14));
  auto certain = tape.constant(Tensor::matrix({{800.0, 0.0}}));
  CHECK(value(focal_loss(certain, std::vector<std::size_t>{0}, 3.0)) == 0.0);

  // FLSD-53: p = 0.1 uses gamma 5, p = 0.5 uses gamma 3.
  const double a = std::log(0.1 / 0.9);
  auto low = tape.constant(Tensor::matrix({{a, 0.0}, {0.0, 0.0}}));
  const double want = (std::pow(0.9, 5) * -std::log(0.1) + std::pow(0.5, 3) * std::log(2.0)) / 2.0;
  CHECK(value(focal_loss(low, std::vector<std::size_t>{0, 0}, 0.0, FocalMode::flsd53)) ==
        doctest::Approx(want).epsilon(1e-12));

  auto report = ad::grad_check(
      [](ad::Tape&, ad::Var v) { return focal_loss(v, std::vector<std::size_t>{1, 0, 2}, 3.0); },
      random_logits(rng, 3, 3), 1e-6, 1e-5);
  CHECK(report.passed);
  CHECK_THROWS(focal_loss(half, std::vector<std::size_t>{0}, -1.0));
}

TEST_CASE("brier loss matches the reference definition") {
  ad::Tape tape;
  auto uniform = tape.constant(Tensor::matrix({{0.0, 0.0}, {0.0, 0.0}}));
  CHECK(value(brier_loss(uniform, std::vector<std::size_t>{0, 1})) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("l2 penalty") {
  ad::Tape tape;
  nn::Linear phi{Tensor::matrix({{2.0, -1.0}, {0.5, 3.0}}), Tensor::vector({1.0, -2.0})};
  auto bound = nn::bind(tape, phi);
  CHECK(value(l2_penalty(bound, tape.constant(Tensor({6})))) == 0.0);
  CHECK(value(l2_penalty(bound, tape.constant(Tensor({6}, 1.0)))) == doctest::Approx(4 + 1 + 0.25 + 9 + 1 + 4));
  Tensor neg({6});
  neg[0] = -0.5;
  CHECK(value(l2_penalty(bound, tape.constant(neg))) == doctest::Approx(-2.0));
  CHECK_THROWS_AS(l2_penalty(bound, tape.constant(Tensor({5}))), ShapeError);

  // Gradients with respect to omega and the classifier weights.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  Tensor omega({6});
  for (auto& v : omega.values()) v = z(rng);
  auto wrt_omega = ad::grad_check(
      [&](ad::Tape& t, ad::Var v) { return l2_penalty(nn::bind(t, phi), v); }, omega, 1e-6, 1e-5);
  CHECK(wrt_omega.passed);
  auto wrt_w = ad::grad_check(
      [&](ad::Tape& t, ad::Var v) {
        return l2_penalty(nn::BoundLinear{v, t.constant(phi.bias)}, t.constant(omega));
      },
      phi.weight, 1e-6, 1e-5);
  CHECK(wrt_w.passed);
}

TEST_CASE("smoothed cross-entropy gradient in omega matches finite differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + rng() % 5;
    Tensor z = random_logits(rng, 12, k);
    auto y = random_labels(rng, 12, k);
    std::uniform_real_distribution<double> u(0.05, 0.9);
    Tensor scalar = Tensor::vector({u(rng)});
    Tensor vec({k});
    for (auto& v : vec.values()) v = u(rng);
    for (const Tensor& omega : {scalar, vec}) {
      auto report = ad::grad_check(
          [&](ad::Tape& t, ad::Var w) { return cross_entropy_soft(t.constant(z), smooth_labels(y, w, k)); }, omega,
          1e-6, 1e-5);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("hyper-parameters") {
  auto h = HyperParams::zeros(HyperKind::l2_unitwise, 4, 8);
  CHECK(h.values.size() == 36);
  h.check(4, 8);
  CHECK_THROWS(h.check(4, 7));
  CHECK(HyperParams::zeros(HyperKind::ls_vector, 4, 8).values.size() == 4);

  HyperParams ls{HyperKind::ls_vector, Tensor::vector({-0.2, 0.5, 1.7})};
  ls.project();
  CHECK(ls.values == Tensor::vector({0.0, 0.5, kMaxSmoothing}));
  HyperParams l2{HyperKind::l2_unitwise, Tensor::vector({-0.2, 1.7})};
  l2.project();
  CHECK(l2.values == Tensor::vector({-0.2, 1.7}));

  HyperParams odd{HyperKind::ls_vector, Tensor::vector({0.1, 0.30000000000000004, 1e-300})};
  auto dir = std::filesystem::temp_directory_path() / "metacal_test_losses";
  std::filesystem::create_directories(dir);
  save_hyper(odd, dir / "h.json");
  CHECK(load_hyper(dir / "h.json") == odd);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(hyper_kind_from_string("ls"));
}
