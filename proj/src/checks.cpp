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

#include "metacal/checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

#include "metacal/dece.hpp"

namespace metacal::checks {

namespace ad = autodiff;

namespace {

Tensor uniform(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Values in [-2, 2] at least `margin` away from zero.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape, double margin) {
  Tensor t = uniform(rng, std::move(shape), margin, 2.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values()) {
    if (sign(rng)) v = -v;
  }
  return t;
}

CheckResult run(const std::string& name, const ad::ScalarProgram& f, const Tensor& x, double tol) {
  const auto r = ad::grad_check(f, x, 1e-6, tol);
  return {name, r.max_rel_error, tol, r.passed};
}

}  // namespace

std::vector<CheckResult> autodiff_op_checks(std::uint64_t seed, double tol) {
  std::mt19937_64 rng(seed);
  const Tensor x = away_from_zero(rng, {3, 4}, 1e-3);
  const Tensor positive = uniform(rng, {3, 4}, 0.5, 3.0);
  Tensor other = away_from_zero(rng, {3, 4}, 1e-2);
  // Keep maximum(x, other) away from ties.
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (std::fabs(other[i] - x[i]) < 1e-2) other[i] += 0.1;
  }
  const Tensor row = uniform(rng, {4}, -1.0, 1.0);
  const Tensor right = uniform(rng, {4, 2}, -1.0, 1.0);
  const Tensor weights = uniform(rng, {3, 4}, -1.0, 1.0);

  auto weighted = [weights](ad::Tape& t, ad::Var v) { return ad::sum(v * t.constant(weights)); };
  using ad::Tape;
  using ad::Var;
  std::vector<std::pair<std::string, ad::ScalarProgram>> programs = {
      {"neg", [&](Tape& t, Var v) { return weighted(t, -v); }},
      {"exp", [&](Tape& t, Var v) { return weighted(t, ad::exp(v)); }},
      {"relu", [&](Tape& t, Var v) { return weighted(t, ad::relu(v)); }},
      {"sigmoid", [&](Tape& t, Var v) { return weighted(t, ad::sigmoid(v)); }},
      {"abs", [&](Tape& t, Var v) { return weighted(t, ad::abs(v)); }},
      {"clamp_min", [&](Tape& t, Var v) { return weighted(t, ad::clamp_min(v, 0.0)); }},
      {"add", [&](Tape& t, Var v) { return weighted(t, v + t.constant(other)); }},
      {"sub", [&](Tape& t, Var v) { return weighted(t, t.constant(other) - v); }},
      {"mul", [&](Tape& t, Var v) { return weighted(t, v * v); }},
      {"scale", [&](Tape& t, Var v) { return weighted(t, ad::scale(v, -1.7)); }},
      {"add_scalar", [&](Tape&, Var v) { return ad::sum(ad::exp(ad::add_scalar(v, 0.3))); }},
      {"maximum", [&](Tape& t, Var v) { return weighted(t, ad::maximum(v, t.constant(other))); }},
      {"row_broadcast", [&](Tape& t, Var v) { return weighted(t, v * t.constant(row)); }},
      {"matmul_left",
       [&](Tape& t, Var v) {
         Var m = ad::matmul(v, t.constant(right));
         return ad::sum(m * m);
       }},
      {"matmul_right",
       [&](Tape& t, Var v) { return ad::sum(ad::exp(ad::matmul(t.constant(Tensor({2, 4}, 0.1)), ad::transpose(v)))); }},
      {"transpose", [&](Tape& t, Var v) { return ad::sum(ad::transpose(v) * t.constant(kernels::transpose(weights))); }},
      {"reshape", [&](Tape& t, Var v) { return ad::sum(ad::reshape(v, {4, 3}) * t.constant(Tensor({4, 3}, weights.values()))); }},
      {"sum_axis0", [&](Tape&, Var v) { return ad::sum(ad::exp(ad::sum(v, 0))); }},
      {"sum_axis1", [&](Tape&, Var v) { return ad::sum(ad::exp(ad::sum(v, 1))); }},
      {"mean", [&](Tape&, Var v) { return ad::exp(ad::mean(v)); }},
      {"mean_axis1", [&](Tape&, Var v) { return ad::sum(ad::exp(ad::mean(v, 1))); }},
      {"softmax_rows", [&](Tape& t, Var v) { return weighted(t, ad::softmax_rows(v)); }},
      {"log_softmax_rows", [&](Tape& t, Var v) { return weighted(t, ad::log_softmax_rows(v)); }},
      {"take", [&](Tape&, Var v) { return ad::sum(ad::exp(ad::take(v, {0, 5, 5, 11}))); }},
      {"gather_rows",
       [&](Tape&, Var v) {
         const std::vector<std::size_t> idx{2, 0, 2};
         return ad::sum(ad::exp(ad::gather_rows(v, idx)));
       }},
      {"broadcast_to",
       [&](Tape& t, Var v) { return weighted(t, ad::broadcast_to(ad::reshape(ad::sum(v, 1), {3, 1}), {3, 4})); }},
      {"second_order",
       [&](Tape& t, Var v) {
         const std::vector<Var> in{v};
         Var g = ad::grad(ad::sum(ad::log_softmax_rows(v) * t.constant(weights)) +
                              ad::sum(ad::softmax_rows(v) * ad::softmax_rows(v)),
                          in)[0];
         return ad::sum(g * g);
       }},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, f] : programs) out.push_back(run(name, f, x, tol));
  const std::vector<std::pair<std::string, ad::ScalarProgram>> positive_programs = {
      {"log", [&](Tape& t, Var v) { return weighted(t, ad::log(v)); }},
      {"div_numerator", [&](Tape& t, Var v) { return weighted(t, v / t.constant(positive)); }},
      {"div_denominator", [&](Tape& t, Var v) { return weighted(t, t.constant(other) / v); }},
      {"sqrt", [&](Tape& t, Var v) { return weighted(t, ad::sqrt(v)); }},
      {"pow", [&](Tape& t, Var v) { return weighted(t, ad::pow(v, Tensor::scalar(2.5))); }},
  };
  for (const auto& [name, f] : positive_programs) out.push_back(run(name, f, positive, tol));
  return out;
}

std::vector<CheckResult> dece_checks(std::uint64_t seed, std::size_t batches, double tol) {
  std::mt19937_64 rng(seed);
  const calib::DeceConfig cfg;
  std::vector<CheckResult> out;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t n = 16, k = 3;
    std::normal_distribution<double> z(0.0, 2.0);
    std::uniform_int_distribution<std::size_t> label(0, k - 1);
    Tensor logits({n, k});
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (;;) {
        Tensor r({1, k});
        for (auto& v : r.values()) v = z(rng);
        bool ok = true;
        for (std::size_t a = 0; a < k && ok; ++a)
          for (std::size_t c = a + 1; c < k && ok; ++c) ok = std::fabs(r[a] - r[c]) >= 0.05;
        const Tensor p = kernels::softmax_rows(r);
        const double conf = *std::max_element(p.values().begin(), p.values().end());
        for (std::size_t e = 0; e <= cfg.num_bins && ok; ++e) {
          ok = std::fabs(conf - static_cast<double>(e) / static_cast<double>(cfg.num_bins)) >= 1e-3;
        }
        if (!ok) continue;
        for (std::size_t c = 0; c < k; ++c) logits.at(i, c) = r[c];
        labels[i] = label(rng);
        break;
      }
    }
    auto f = [&](ad::Tape&, ad::Var v) { return calib::dece(v, labels, cfg); };
    out.push_back(run("dece_batch_" + std::to_string(b), f, logits, tol));
  }
  return out;
}

std::vector<CheckResult> hypergrad_checks(std::uint64_t seed, train::MetaObjective objective, double tol) {
  const std::vector<std::size_t> dims{2, 8};
  const auto params = nn::init_params(seed, dims, 4);
  const auto data = data::gen_blobs(seed, 4, 64, 2, 1.5, 0.1);
  std::vector<std::size_t> a(32), b(32);
  for (std::size_t i = 0; i < 32; ++i) {
    a[i] = i;
    b[i] = 32 + i;
  }
  const auto train_batch = train::take_batch(data, a), val_batch = train::take_batch(data, b);
  train::TrainConfig cfg;
  cfg.meta_objective = objective;

  std::vector<CheckResult> out;
  for (auto kind : {losses::HyperKind::ls_scalar, losses::HyperKind::ls_vector, losses::HyperKind::l2_unitwise}) {
    auto omega = losses::HyperParams::zeros(kind, 4, params.feature_dim());
    for (auto& v : omega.values.values()) v = kind == losses::HyperKind::l2_unitwise ? 0.05 : 0.1;
    const auto p = train::make_outer_problem(params, train_batch, val_batch, 0.5);
    const auto r = train::hypergrad_check(p, omega, cfg, 1e-4, tol);
    out.push_back({losses::to_string(kind), r.max_rel_error, tol, r.passed});

    const auto frozen = train::make_outer_problem(params, train_batch, val_batch, 0.0);
    const Tensor g = train::hypergradient(frozen, omega, cfg).second;
    const bool zero = std::all_of(g.values().begin(), g.values().end(), [](double v) { return v == 0.0; });
    double largest = 0.0;
    for (double v : g.values()) largest = std::max(largest, std::fabs(v));
    out.push_back({losses::to_string(kind) + "_zero_inner_lr", largest, 0.0, zero});
  }
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace metacal::checks
