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
#include "metacal/trainer.hpp"
#include "oracles.hpp"

using namespace metacal;
using namespace metacal::train;
using losses::HyperKind;
using losses::HyperParams;

namespace {

// 2-8-4 model with fresh batches from the blobs task.
struct Fixture {
  nn::ModelParams params;
  Batch train;
  Batch val;
};

Fixture tiny_fixture(std::uint64_t seed, std::size_t n = 32) {
  const std::vector<std::size_t> dims{2, 8};
  auto data = data::gen_blobs(seed, 4, 2 * n, 2, 1.5, 0.1);
  std::vector<std::size_t> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = i;
    b[i] = n + i;
  }
  return {nn::init_params(seed, dims, 4), take_batch(data, a), take_batch(data, b)};
}

HyperParams hyper(HyperKind kind, const nn::ModelParams& p, double fill) {
  auto h = HyperParams::zeros(kind, p.num_classes(), p.feature_dim());
  for (auto& v : h.values.values()) v = fill;
  return h;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.task_n = 400;
  cfg.test_n = 200;
  cfg.hidden = {8};
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.test_corruptions = {"shift:2", "gauss_noise:5"};
  return cfg;
}

// Cross-entropy outer loss after one SGD step of (W, b) on scalar-smoothed
// cross-entropy, written out with explicit gradients.
double oracle_ce_outer(const OuterProblem& p, double omega) {
  const Tensor& ht = p.train_features;
  const std::size_t n = ht.rows(), d = ht.cols(), k = p.phi.bias.size();
  Tensor logits({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double z = p.phi.bias[c];
      for (std::size_t j = 0; j < d; ++j) z += ht.at(i, j) * p.phi.weight.at(j, c);
      logits.at(i, c) = z;
    }
  const Tensor prob = oracle::softmax(logits);
  Tensor w = p.phi.weight, b = p.phi.bias;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double target = (c == p.train_labels[i] ? 1.0 - omega : 0.0) + omega / static_cast<double>(k);
      const double g = (prob.at(i, c) - target) / static_cast<double>(n);
      b[c] -= p.inner_lr * g;
      for (std::size_t j = 0; j < d; ++j) w.at(j, c) -= p.inner_lr * g * ht.at(i, j);
    }
  const Tensor& hv = p.val_features;
  double loss = 0.0;
  for (std::size_t i = 0; i < hv.rows(); ++i) {
    std::vector<double> z(k);
    double mx = -1e300;
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = b[c];
      for (std::size_t j = 0; j < d; ++j) z[c] += hv.at(i, j) * w.at(j, c);
      mx = std::max(mx, z[c]);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    loss -= z[p.val_labels[i]] - mx - std::log(s);
  }
  return loss / static_cast<double>(hv.rows());
}

}  // namespace

TEST_CASE("outer loss matches an explicit one-step oracle") {
  auto f = tiny_fixture(3);
  TrainConfig cfg;
  cfg.meta_objective = MetaObjective::ce;
  cfg.hyper_kind = HyperKind::ls_scalar;
  const auto p = make_outer_problem(f.params, f.train, f.val, 0.5);
  for (double w : {0.0, 0.1, 0.4}) {
    CHECK(outer_loss(p, hyper(HyperKind::ls_scalar, f.params, w), cfg) ==
          doctest::Approx(oracle_ce_outer(p, w)).epsilon(1e-12));
  }
  const double h = 1e-5;
  const double fd = (oracle_ce_outer(p, 0.2 + h) - oracle_ce_outer(p, 0.2 - h)) / (2 * h);
  const double tape = hypergradient(p, hyper(HyperKind::ls_scalar, f.params, 0.2), cfg).second[0];
  CHECK(tape == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("hypergradient matches central differences") {
  for (auto objective : {MetaObjective::dece, MetaObjective::ce, MetaObjective::mmce, MetaObjective::dece_plus_ce}) {
    for (auto kind : {HyperKind::ls_scalar, HyperKind::ls_vector, HyperKind::l2_unitwise}) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        CAPTURE(to_string(objective));
        CAPTURE(losses::to_string(kind));
        CAPTURE(seed);
        auto f = tiny_fixture(seed);
        TrainConfig cfg;
        cfg.meta_objective = objective;
        const auto p = make_outer_problem(f.params, f.train, f.val, 0.5);
        const double fill = kind == HyperKind::l2_unitwise ? 0.05 : 0.1;
        auto r = hypergrad_check(p, hyper(kind, f.params, fill), cfg, 1e-4, 1e-3);
        CHECK(r.passed);
        CHECK(r.max_rel_error <= 1e-3);
      }
    }
  }
}

TEST_CASE("hypergradient is exactly zero when the inner step is the identity") {
  for (auto kind : {HyperKind::ls_scalar, HyperKind::ls_vector, HyperKind::l2_unitwise}) {
    auto f = tiny_fixture(5);
    TrainConfig cfg;
    const auto p = make_outer_problem(f.params, f.train, f.val, 0.0);
    auto [lo, g] = hypergradient(p, hyper(kind, f.params, 0.2), cfg);
    CHECK(std::isfinite(lo));
    for (double v : g.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("meta_step with zero meta learning rate leaves omega and base training untouched") {
  auto f = tiny_fixture(7);
  TrainConfig cfg;
  cfg.meta_lr = 0.0;
  cfg.hyper_kind = HyperKind::ls_vector;
  const auto omega = hyper(HyperKind::ls_vector, f.params, 0.05);

  nn::ModelParams a = f.params, b = f.params;
  auto sgd_a = nn::make_sgd(a, 0.1), sgd_b = nn::make_sgd(b, 0.1);
  MetaState meta_a = make_meta_state(omega, 0.0), meta_b = make_meta_state(omega, 0.0);
  for (int step = 0; step < 5; ++step) {
    auto r = meta_step(a, sgd_a, meta_a, f.train, &f.train, &f.val, cfg);
    CHECK(r.outer_loss.has_value());
    meta_step(b, sgd_b, meta_b, f.train, nullptr, nullptr, cfg);
  }
  CHECK(meta_a.omega == omega);
  CHECK(meta_a.trajectory.size() == 5);
  CHECK(meta_b.trajectory.empty());
  CHECK(a == b);
}

TEST_CASE("a meta step moves scalar smoothing against the finite-difference hypergradient") {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto f = tiny_fixture(seed);
    TrainConfig cfg;
    cfg.hyper_kind = HyperKind::ls_scalar;
    const auto omega = hyper(HyperKind::ls_scalar, f.params, 0.3);

    // Finite differences on the problem the meta update will see.
    nn::ModelParams after = f.params;
    auto sgd = nn::make_sgd(after, 0.5);
    MetaState frozen = make_meta_state(omega, 0.0);
    meta_step(after, sgd, frozen, f.train, nullptr, nullptr, cfg);
    const auto p = make_outer_problem(after, f.train, f.val, 0.5);
    const double h = 1e-5;
    auto plus = omega, minus = omega;
    plus.values[0] += h;
    minus.values[0] -= h;
    const double fd = (outer_loss(p, plus, cfg) - outer_loss(p, minus, cfg)) / (2 * h);
    if (std::fabs(fd) < 1e-6) continue;

    nn::ModelParams params = f.params;
    auto sgd2 = nn::make_sgd(params, 0.5);
    MetaState meta = make_meta_state(omega, 1e-3);
    meta_step(params, sgd2, meta, f.train, &f.train, &f.val, cfg);
    const double delta = meta.omega.values[0] - omega.values[0];
    CAPTURE(seed);
    CHECK(delta != 0.0);
    CHECK((delta > 0) == (fd < 0));
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("smoothing stays inside [0, 0.999] after meta updates") {
  auto f = tiny_fixture(9);
  TrainConfig cfg;
  cfg.hyper_kind = HyperKind::ls_vector;
  auto sgd = nn::make_sgd(f.params, 0.5);
  MetaState meta = make_meta_state(hyper(HyperKind::ls_vector, f.params, 0.0), 0.5);
  for (int step = 0; step < 20; ++step) meta_step(f.params, sgd, meta, f.train, &f.train, &f.val, cfg);
  for (const auto& snapshot : meta.trajectory)
    for (double v : snapshot.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= losses::kMaxSmoothing);
    }
}

TEST_CASE("training is deterministic for a fixed seed and config") {
  auto cfg = small_config();
  cfg.multi_domain = true;
  const auto data = prepare_data(cfg);
  const auto a = run_training(cfg, data);
  const auto b = run_training(cfg, data);
  CHECK(a.params == b.params);
  CHECK(a.omega_final == b.omega_final);
  CHECK(a.trajectory.size() == b.trajectory.size());
  CHECK(a.test.ece == b.test.ece);
  CHECK(a.domain_mean_ece == b.domain_mean_ece);
}

TEST_CASE("run report structure") {
  auto cfg = small_config();
  cfg.meta_stride = 2;
  const auto data = prepare_data(cfg);
  const auto r = run_training(cfg, data);
  CHECK(r.epochs.size() == cfg.epochs);
  CHECK(r.best_epoch < cfg.epochs);
  const std::size_t per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  CHECK(r.trajectory.size() == (per_epoch * cfg.epochs + 1) / 2);
  CHECK(r.reliability.bins.size() == cfg.eval_bins);
  CHECK(r.reliability.total() == data.test.size());
  REQUIRE(r.domains.size() == 2);
  CHECK(r.domain_worst_ece == std::max(r.domains[0].ece, r.domains[1].ece));
  CHECK(r.domain_mean_ece == doctest::Approx((r.domains[0].ece + r.domains[1].ece) / 2));
  CHECK(r.test.temperature > 0.0);
  CHECK(r.omega_final.values.size() == 4);
}

TEST_CASE("early stopping keeps the earliest epoch with the best validation accuracy") {
  auto cfg = small_config();
  cfg.epochs = 5;
  cfg.meta_objective = MetaObjective::none;
  const auto data = prepare_data(cfg);
  std::vector<nn::ModelParams> snapshots;
  const auto r = run_training(cfg, data, [&](std::size_t, const nn::ModelParams& p) { snapshots.push_back(p); });
  REQUIRE(snapshots.size() == 5);
  double best = 2.0;
  std::size_t expected = 0;
  for (std::size_t e = 0; e < 5; ++e) {
    if (r.epochs[e].val_error < best) {
      best = r.epochs[e].val_error;
      expected = e;
    }
  }
  CHECK(r.best_epoch == expected);
  CHECK(r.params == snapshots[expected]);

  cfg.early_stopping = false;
  const auto last = run_training(cfg, data);
  CHECK(last.params == snapshots.back());
}

TEST_CASE("retraining with zero smoothing reproduces the plain baseline") {
  auto cfg = small_config();
  const auto data = prepare_data(cfg);
  auto plain = cfg;
  plain.meta_objective = MetaObjective::none;
  const auto baseline = run_training(plain, data);
  const auto zero = HyperParams::zeros(HyperKind::ls_vector, 4, 8);
  const auto retrained = retrain_with_fixed_hparams(zero, cfg, data);
  CHECK(retrained.params == baseline.params);
  CHECK(retrained.test.ece == baseline.test.ece);
  CHECK(retrained.omega_final == zero);
  CHECK(retrained.trajectory.empty());

  auto other = HyperParams::zeros(HyperKind::ls_scalar, 4, 8);
  CHECK_THROWS_AS(retrain_with_fixed_hparams(other, cfg, data), ConfigError);
}

TEST_CASE("meta-learning moves omega on the blobs task") {
  auto cfg = small_config();
  cfg.task_n = 1000;
  cfg.epochs = 2;
  const auto data = prepare_data(cfg);
  const auto r = run_training(cfg, data);
  REQUIRE(r.trajectory.size() > 2);
  CHECK(r.trajectory.front() != r.trajectory.back());
}

TEST_CASE("non-meta runs train on train plus meta-val") {
  auto cfg = small_config();
  cfg.meta_objective = MetaObjective::none;
  const auto data = prepare_data(cfg);
  auto merged = cfg;
  auto separate = cfg;
  separate.merge_metaval = false;
  CHECK(run_training(merged, data).params != run_training(separate, data).params);
}

TEST_CASE("base losses all train") {
  for (auto loss : {BaseLoss::brier, BaseLoss::focal, BaseLoss::flsd53, BaseLoss::ce_dece}) {
    auto cfg = small_config();
    cfg.epochs = 1;
    cfg.base_loss = loss;
    cfg.meta_objective = MetaObjective::none;
    const auto r = run_training(cfg, prepare_data(cfg));
    CAPTURE(to_string(loss));
    CHECK(std::isfinite(r.epochs[0].train_loss));
    CHECK(r.test.error < 0.75);
  }
}

TEST_CASE("config JSON round trip and validation") {
  TrainConfig cfg;
  cfg.seed = 17;
  cfg.hidden = {3, 5};
  cfg.meta_objective = MetaObjective::mmce;
  cfg.dece.tau_b = 0.02;
  cfg.hyper_kind = HyperKind::l2_unitwise;
  const auto j = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(j)) == j);
  CHECK(j.at("config_version") == kConfigVersion);

  auto unknown = j;
  unknown["learning_rate"] = 0.1;
  CHECK_THROWS_AS(config_from_json(unknown), ConfigError);
  auto wrong_type = j;
  wrong_type["epochs"] = "ten";
  CHECK_THROWS_AS(config_from_json(wrong_type), ConfigError);
  auto negative = j;
  negative["epochs"] = -1;
  CHECK_THROWS_AS(config_from_json(negative), ConfigError);
  auto fractions = j;
  fractions["fractions"] = {0.5, 0.3, 0.3};
  CHECK_THROWS_AS(config_from_json(fractions), ConfigError);
  auto overlap = j;
  overlap["multi_domain"] = true;
  overlap["train_corruptions"] = {"shift:2"};
  overlap["test_corruptions"] = {"shift:2"};
  CHECK_THROWS_AS(config_from_json(overlap), ConfigError);
  auto no_meta = j;
  no_meta["multi_domain"] = true;
  no_meta["meta_objective"] = "none";
  CHECK_THROWS_AS(config_from_json(no_meta), ConfigError);
  auto bad_loss = j;
  bad_loss["base_loss"] = "focal";
  CHECK_THROWS_AS(config_from_json(bad_loss), ConfigError);
  bad_loss["meta_objective"] = "none";
  CHECK(config_from_json(bad_loss).base_loss == BaseLoss::focal);

  nlohmann::json o = nlohmann::json::object();
  apply_override(o, "epochs=12");
  apply_override(o, "meta_objective=ce");
  apply_override(o, "hidden=[4,4]");
  const auto c = config_from_json(o);
  CHECK(c.epochs == 12);
  CHECK(c.meta_objective == MetaObjective::ce);
  CHECK(c.hidden == std::vector<std::size_t>{4, 4});
  CHECK_THROWS_AS(apply_override(o, "novalue"), ConfigError);
  CHECK(describe_config().find("dece_tau_a") != std::string::npos);
}

TEST_CASE("data preparation") {
  auto cfg = small_config();
  const auto a = prepare_data(cfg);
  const auto b = prepare_data(cfg);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() + a.val.size() + a.metaval.size() == cfg.task_n);
  CHECK(a.test.size() == cfg.test_n);
  CHECK(a.val.size() == 40);
  CHECK(a.metaval.size() == 40);

  const auto dir = std::filesystem::temp_directory_path() / "metacal_trainer_test";
  std::filesystem::create_directories(dir);
  data::save_csv(a.train, dir / "train.csv");
  data::save_csv(a.test, dir / "test.csv");
  auto csv = cfg;
  csv.data_csv = (dir / "train.csv").string();
  csv.test_csv = (dir / "test.csv").string();
  const auto c = prepare_data(csv);
  CHECK(c.test.size() == a.test.size());
  CHECK(c.train.size() + c.val.size() + c.metaval.size() == a.train.size());
  csv.test_csv.clear();
  CHECK_THROWS_AS(prepare_data(csv), ConfigError);
  std::filesystem::remove_all(dir);
}
