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

// Online meta-calibration: base-model training with hyper-parameters
// omega interleaved with meta-updates of omega driven by a calibration
// objective on meta-validation data.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "metacal/datasets.hpp"
#include "metacal/dece.hpp"
#include "metacal/losses.hpp"
#include "metacal/metrics.hpp"
#include "metacal/model.hpp"

namespace metacal::train {

/// Configuration problem (unknown key, wrong type, inconsistent values).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class BaseLoss { ce, brier, focal, flsd53, ce_dece };
enum class MetaObjective { none, dece, ce, mmce, dece_plus_ce };

std::string to_string(BaseLoss v);
std::string to_string(MetaObjective v);

inline constexpr int kConfigVersion = 1;

/// Default corruption pools: training domains and disjoint held-out domains.
std::vector<std::string> default_train_corruptions();
std::vector<std::string> default_test_corruptions();

struct TrainConfig {
  std::uint64_t seed = 0;

  // Synthetic task (ignored when data_csv is set).
  std::size_t task_n = 4000;
  std::size_t task_d = 2;
  std::size_t task_k = 4;
  double task_separation = 2.5;
  double task_label_noise = 0.1;
  std::size_t test_n = 4000;
  std::string data_csv;
  std::string test_csv;
  std::vector<double> fractions{0.8, 0.1, 0.1};  // train, val, meta-val

  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> lr_drops;  // constant learning rate unless set
  double lr_drop_factor = 0.1;

  BaseLoss base_loss = BaseLoss::ce;
  double focal_gamma = 3.0;
  double multitask_weight = 1.0;

  losses::HyperKind hyper_kind = losses::HyperKind::ls_vector;
  double hyper_init = 0.0;

  MetaObjective meta_objective = MetaObjective::dece;
  double meta_lr = 1e-3;
  std::size_t meta_stride = 1;
  double dece_ce_weight = 1.0;
  calib::DeceConfig dece;
  double mmce_width = calib::kMmceWidth;

  bool multi_domain = false;
  std::vector<std::string> train_corruptions = default_train_corruptions();
  std::vector<std::string> test_corruptions = default_test_corruptions();

  bool early_stopping = true;
  /// Non-meta runs train on train + meta-val.
  bool merge_metaval = true;
  std::size_t eval_bins = 15;

  bool meta_enabled() const { return meta_objective != MetaObjective::none; }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys and type errors throw
/// ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);
/// Applies "key=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& j, const std::string& assignment);
/// One line per key with its default value, for --help.
std::string describe_config();

struct Splits {
  data::Dataset train;
  data::Dataset val;
  data::Dataset metaval;
  data::Dataset test;
};

/// Builds the splits for cfg.seed: generated blobs (test set drawn
/// independently) or the configured CSV files.
Splits prepare_data(const TrainConfig& cfg);

struct MetaState {
  losses::HyperParams omega;
  nn::AdamState adam;
  std::vector<Tensor> trajectory;  // omega after every meta-update
};

MetaState make_meta_state(const losses::HyperParams& omega, double meta_lr);

struct Batch {
  Tensor X;
  std::vector<std::size_t> y;
};

Batch take_batch(const data::Dataset& d, std::span<const std::size_t> rows);

/// Everything a single outer-loss evaluation needs besides omega.
struct OuterProblem {
  Tensor train_features;  // h(x_t) under the current feature extractor
  std::vector<std::size_t> train_labels;
  Tensor val_features;
  std::vector<std::size_t> val_labels;
  nn::Linear phi;
  double inner_lr = 0.1;
};

OuterProblem make_outer_problem(const nn::ModelParams& params, const Batch& train, const Batch& metaval,
                                double inner_lr);

/// L_o after one simulated plain-SGD step of phi on the inner loss.
double outer_loss(const OuterProblem& p, const losses::HyperParams& omega, const TrainConfig& cfg);
/// (L_o, dL_o/domega) via the tape.
std::pair<double, Tensor> hypergradient(const OuterProblem& p, const losses::HyperParams& omega,
                                        const TrainConfig& cfg);

struct HypergradReport {
  double max_rel_error = 0.0;
  bool passed = false;
  Tensor analytic;
  Tensor numeric;
};

/// Central differences of outer_loss in every omega entry against the tape
/// hypergradient; per-entry error |a - f| / max(|a|, |f|, floor).
HypergradReport hypergrad_check(const OuterProblem& p, const losses::HyperParams& omega, const TrainConfig& cfg,
                                double h = 1e-4, double tol = 1e-3, double floor = 1e-8);

/// Inner (base) loss of a batch on the tape.
autodiff::Var base_loss(autodiff::Tape& tape, const nn::BoundParams& params, const Batch& batch,
                        const losses::HyperParams& omega, const TrainConfig& cfg);

struct StepResult {
  double base_loss = 0.0;
  std::optional<double> outer_loss;
};

/// One iteration: SGD-momentum update of the whole model on `train`, then
/// (if `meta` batches are given) one meta-update of omega from the updated
/// parameters using `meta_train` and `meta_val`.
StepResult meta_step(nn::ModelParams& params, nn::SgdMomentumState& sgd, MetaState& meta, const Batch& train,
                     const Batch* meta_train, const Batch* meta_val, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_error = 0.0;
  double val_ece = 0.0;
};

struct TestMetrics {
  double error = 0.0;
  double ece = 0.0;
  double aece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double temperature = 1.0;
  double ece_temp = 0.0;
};

struct DomainResult {
  std::string name;
  double error = 0.0;
  double ece = 0.0;
};

struct RunReport {
  TrainConfig config;
  std::string data_provenance;
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  TestMetrics test;
  std::vector<DomainResult> domains;
  double domain_mean_ece = 0.0;
  double domain_worst_ece = 0.0;
  double domain_mean_error = 0.0;
  losses::HyperParams omega_final;
  std::vector<Tensor> trajectory;
  calib::BinStats reliability;
  nn::ModelParams params;  // selected (early-stopped) model
};

/// Called after every epoch with the current parameters.
using EpochHook = std::function<void(std::size_t epoch, const nn::ModelParams& params)>;

/// Full run: epochs of interleaved base/meta steps, early stopping on clean
/// validation accuracy, evaluation of the selected model on the test split
/// and on every held-out corrupted test domain.
RunReport run_training(const TrainConfig& cfg, const Splits& data, const EpochHook& hook = {},
                       const std::optional<losses::HyperParams>& fixed_omega = std::nullopt);

/// Plain training with omega frozen on train + meta-val.
RunReport retrain_with_fixed_hparams(const losses::HyperParams& omega, const TrainConfig& cfg, const Splits& data);

TestMetrics evaluate(const nn::ModelParams& params, const data::Dataset& test, const data::Dataset& val,
                     std::size_t bins, calib::BinStats* reliability = nullptr);

}  // namespace metacal::train
