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

#include "metacal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "metacal/io.hpp"

namespace metacal::train {

namespace ad = autodiff;
using nlohmann::json;

std::string to_string(BaseLoss v) {
  switch (v) {
    case BaseLoss::ce: return "ce";
    case BaseLoss::brier: return "brier";
    case BaseLoss::focal: return "focal";
    case BaseLoss::flsd53: return "flsd53";
    case BaseLoss::ce_dece: return "ce_dece";
  }
  return "?";
}

std::string to_string(MetaObjective v) {
  switch (v) {
    case MetaObjective::none: return "none";
    case MetaObjective::dece: return "dece";
    case MetaObjective::ce: return "ce";
    case MetaObjective::mmce: return "mmce";
    case MetaObjective::dece_plus_ce: return "dece_plus_ce";
  }
  return "?";
}

namespace {

BaseLoss base_loss_from_string(const std::string& s) {
  for (auto v : {BaseLoss::ce, BaseLoss::brier, BaseLoss::focal, BaseLoss::flsd53, BaseLoss::ce_dece}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("base_loss: unknown value '" + s + "'");
}

MetaObjective objective_from_string(const std::string& s) {
  for (auto v : {MetaObjective::none, MetaObjective::dece, MetaObjective::ce, MetaObjective::mmce,
                 MetaObjective::dece_plus_ce}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("meta_objective: unknown value '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config fields

struct Field {
  const char* name;
  std::function<void(TrainConfig&, const json&)> set;
  std::function<json(const TrainConfig&)> get;
  const char* help;
};

[[noreturn]] void type_error(const std::string& key, const char* want, const json& v) {
  throw ConfigError(key + ": expected " + want + ", got " + v.dump());
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    type_error(key, "a non-negative integer", v);
  }
  return v.get<std::size_t>();
}

double as_number(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number", v);
  const double d = v.get<double>();
  if (!std::isfinite(d)) type_error(key, "a finite number", v);
  return d;
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) type_error(key, "true or false", v);
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string", v);
  return v.get<std::string>();
}

template <typename T, typename F>
std::vector<T> as_list(const std::string& key, const json& v, F item) {
  if (!v.is_array()) type_error(key, "a list", v);
  std::vector<T> out;
  for (const auto& e : v) out.push_back(item(key, e));
  return out;
}

Field count_field(const char* name, std::size_t TrainConfig::*m, const char* help) {
  return {name, [=](TrainConfig& c, const json& v) { c.*m = as_count(name, v); },
          [=](const TrainConfig& c) { return json(c.*m); }, help};
}

Field number_field(const char* name, double TrainConfig::*m, const char* help) {
  return {name, [=](TrainConfig& c, const json& v) { c.*m = as_number(name, v); },
          [=](const TrainConfig& c) { return json(c.*m); }, help};
}

Field bool_field(const char* name, bool TrainConfig::*m, const char* help) {
  return {name, [=](TrainConfig& c, const json& v) { c.*m = as_bool(name, v); },
          [=](const TrainConfig& c) { return json(c.*m); }, help};
}

Field string_field(const char* name, std::string TrainConfig::*m, const char* help) {
  return {name, [=](TrainConfig& c, const json& v) { c.*m = as_string(name, v); },
          [=](const TrainConfig& c) { return json(c.*m); }, help};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](TrainConfig& c, const json& v) { c.seed = as_count("seed", v); },
       [](const TrainConfig& c) { return json(c.seed); }, "run seed (data, initialisation, batching)"},
      count_field("task_n", &TrainConfig::task_n, "blobs: samples before the train/val/meta-val split"),
      count_field("task_d", &TrainConfig::task_d, "blobs: input dimension"),
      count_field("task_k", &TrainConfig::task_k, "blobs: number of classes"),
      number_field("task_separation", &TrainConfig::task_separation,
                   "blobs: radius of the class-mean circle in within-class standard deviations"),
      number_field("task_label_noise", &TrainConfig::task_label_noise, "blobs: fraction of flipped labels"),
      count_field("test_n", &TrainConfig::test_n, "blobs: size of the independently drawn test set"),
      string_field("data_csv", &TrainConfig::data_csv, "CSV to split into train/val/meta-val instead of blobs"),
      string_field("test_csv", &TrainConfig::test_csv, "test CSV (required with data_csv)"),
      {"fractions",
       [](TrainConfig& c, const json& v) { c.fractions = as_list<double>("fractions", v, as_number); },
       [](const TrainConfig& c) { return json(c.fractions); },
       "train/val/meta-val fractions [published setting 0.8,0.1,0.1]"},
      {"hidden", [](TrainConfig& c, const json& v) { c.hidden = as_list<std::size_t>("hidden", v, as_count); },
       [](const TrainConfig& c) { return json(c.hidden); }, "hidden layer widths of the feature extractor"},
      count_field("epochs", &TrainConfig::epochs, "training epochs"),
      count_field("batch_size", &TrainConfig::batch_size, "minibatch size [published setting 128]"),
      number_field("lr", &TrainConfig::lr, "base SGD learning rate [published setting 0.1]"),
      number_field("momentum", &TrainConfig::momentum, "SGD momentum [published setting 0.9]"),
      number_field("weight_decay", &TrainConfig::weight_decay, "SGD weight decay [published setting 5e-4]"),
      {"lr_drops",
       [](TrainConfig& c, const json& v) { c.lr_drops = as_list<std::size_t>("lr_drops", v, as_count); },
       [](const TrainConfig& c) { return json(c.lr_drops); }, "epochs at which the learning rate is multiplied"},
      number_field("lr_drop_factor", &TrainConfig::lr_drop_factor, "learning-rate drop factor [published setting 0.1]"),
      {"base_loss",
       [](TrainConfig& c, const json& v) { c.base_loss = base_loss_from_string(as_string("base_loss", v)); },
       [](const TrainConfig& c) { return json(to_string(c.base_loss)); },
       "inner loss: ce | brier | focal | flsd53 | ce_dece (multi-task CE + DECE)"},
      number_field("focal_gamma", &TrainConfig::focal_gamma, "focal loss gamma [published setting 3]"),
      number_field("multitask_weight", &TrainConfig::multitask_weight, "DECE weight of the ce_dece loss"),
      {"hyper_kind",
       [](TrainConfig& c, const json& v) {
         try {
           c.hyper_kind = losses::hyper_kind_from_string(as_string("hyper_kind", v));
         } catch (const ConfigError&) {
           throw;
         } catch (const std::invalid_argument& e) {
           throw ConfigError(std::string("hyper_kind: ") + e.what());
         }
       },
       [](const TrainConfig& c) { return json(losses::to_string(c.hyper_kind)); },
       "hyper-parameters: ls_scalar | ls_vector | l2_unitwise"},
      number_field("hyper_init", &TrainConfig::hyper_init, "initial value of every omega entry [published setting 0]"),
      {"meta_objective",
       [](TrainConfig& c, const json& v) { c.meta_objective = objective_from_string(as_string("meta_objective", v)); },
       [](const TrainConfig& c) { return json(to_string(c.meta_objective)); },
       "outer loss: none | dece | ce | mmce | dece_plus_ce"},
      number_field("meta_lr", &TrainConfig::meta_lr, "Adam learning rate for omega [published setting 0.001]"),
      count_field("meta_stride", &TrainConfig::meta_stride, "base steps per meta-update"),
      number_field("dece_ce_weight", &TrainConfig::dece_ce_weight, "CE weight of the dece_plus_ce objective"),
      {"dece_bins", [](TrainConfig& c, const json& v) { c.dece.num_bins = as_count("dece_bins", v); },
       [](const TrainConfig& c) { return json(c.dece.num_bins); }, "DECE bins M [published setting 15]"},
      {"dece_tau_a", [](TrainConfig& c, const json& v) { c.dece.tau_a = as_number("dece_tau_a", v); },
       [](const TrainConfig& c) { return json(c.dece.tau_a); }, "DECE accuracy sharpness [published setting 100]"},
      {"dece_tau_b", [](TrainConfig& c, const json& v) { c.dece.tau_b = as_number("dece_tau_b", v); },
       [](const TrainConfig& c) { return json(c.dece.tau_b); }, "DECE binning temperature [published setting 0.01]"},
      number_field("mmce_width", &TrainConfig::mmce_width, "MMCE Laplacian kernel width"),
      bool_field("multi_domain", &TrainConfig::multi_domain, "corrupt meta-validation batches"),
      {"train_corruptions",
       [](TrainConfig& c, const json& v) { c.train_corruptions = as_list<std::string>("train_corruptions", v, as_string); },
       [](const TrainConfig& c) { return json(c.train_corruptions); },
       "family:severity pool sampled for meta-validation batches"},
      {"test_corruptions",
       [](TrainConfig& c, const json& v) { c.test_corruptions = as_list<std::string>("test_corruptions", v, as_string); },
       [](const TrainConfig& c) { return json(c.test_corruptions); }, "held-out corrupted test domains"},
      bool_field("early_stopping", &TrainConfig::early_stopping, "select the epoch with the best validation accuracy"),
      bool_field("merge_metaval", &TrainConfig::merge_metaval, "non-meta runs also train on the meta-val split"),
      count_field("eval_bins", &TrainConfig::eval_bins, "bins for reported ECE/AECE"),
  };
  return table;
}

}  // namespace

std::vector<std::string> default_train_corruptions() {
  return {"gauss_noise:1", "gauss_noise:2", "gauss_noise:3", "gauss_noise:4",   "scale:1",
          "scale:2",       "scale:3",       "scale:4",       "scale:5",         "feature_dropout:1",
          "feature_dropout:2", "feature_dropout:3", "feature_dropout:4", "feature_dropout:5"};
}

std::vector<std::string> default_test_corruptions() {
  return {"shift:1", "shift:2", "shift:3", "shift:4", "shift:5", "gauss_noise:5"};
}

json config_to_json(const TrainConfig& cfg) {
  json j = json::object();
  j["config_version"] = kConfigVersion;
  for (const auto& f : fields()) j[f.name] = f.get(cfg);
  return j;
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "config_version") {
      if (!value.is_number_integer() || value.get<int>() != kConfigVersion) {
        throw ConfigError("config_version: only version " + std::to_string(kConfigVersion) + " is supported");
      }
      continue;
    }
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  j[key] = value;
}

std::string describe_config() {
  const TrainConfig defaults;
  std::ostringstream os;
  for (const auto& f : fields()) os << "  " << f.name << " = " << f.get(defaults).dump() << "\n      " << f.help << "\n";
  return os.str();
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (task_k < 2) fail("task_k must be >= 2");
  if (task_n < task_k) fail("task_n must be >= task_k");
  if (task_d < 1) fail("task_d must be >= 1");
  if (task_separation < 0.0) fail("task_separation must be >= 0");
  if (!(task_label_noise >= 0.0 && task_label_noise < 0.5)) fail("task_label_noise must be in [0, 0.5)");
  if (test_n < 1) fail("test_n must be >= 1");
  if (!data_csv.empty() && test_csv.empty()) fail("data_csv requires test_csv");
  if (fractions.size() != 3) fail("fractions must list train, val and meta-val shares");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) fail("fractions must be positive");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) fail("fractions must sum to 1");
  for (auto h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (lr < 0.0) fail("lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (lr_drop_factor <= 0.0) fail("lr_drop_factor must be positive");
  if (focal_gamma < 0.0) fail("focal_gamma must be >= 0");
  if (meta_lr < 0.0) fail("meta_lr must be >= 0");
  if (meta_stride < 1) fail("meta_stride must be >= 1");
  if (mmce_width <= 0.0) fail("mmce_width must be positive");
  if (eval_bins < 1) fail("eval_bins must be >= 1");
  if (hyper_kind != losses::HyperKind::l2_unitwise && !(hyper_init >= 0.0 && hyper_init < 1.0)) {
    fail("hyper_init must be in [0, 1) for label smoothing");
  }
  try {
    dece.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (meta_enabled() && base_loss != BaseLoss::ce) fail("meta-learning requires base_loss = ce");
  if (multi_domain && !meta_enabled()) fail("multi_domain requires a meta objective");
  if (multi_domain && train_corruptions.empty()) fail("multi_domain requires a non-empty train_corruptions pool");
  for (const auto* list : {&train_corruptions, &test_corruptions}) {
    for (const auto& s : *list) {
      try {
        data::parse_corruption(s);
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
  }
  for (const auto& tr : train_corruptions) {
    for (const auto& te : test_corruptions) {
      if (tr == te) fail("corruption " + tr + " is in both the training pool and the held-out test domains");
    }
  }
}

// ---------------------------------------------------------------------------
// Data

namespace {

data::Dataset concat(const data::Dataset& a, const data::Dataset& b) {
  if (a.dim() != b.dim()) throw ShapeError("cannot merge datasets of different widths");
  std::vector<double> x(a.X.values());
  x.insert(x.end(), b.X.values().begin(), b.X.values().end());
  std::vector<std::size_t> y(a.y);
  y.insert(y.end(), b.y.begin(), b.y.end());
  return {Tensor({y.size(), a.dim()}, std::move(x)), std::move(y), std::max(a.num_classes, b.num_classes),
          a.provenance};
}

constexpr std::uint64_t kTestStream = 0x7e57'd47a'5eed'0001ULL;
constexpr std::uint64_t kSplitStream = 0x5b11'7000'0000'0002ULL;
constexpr std::uint64_t kBatchStream = 0xba7c'4000'0000'0003ULL;
constexpr std::uint64_t kMetaStream = 0x3e7a'0000'0000'0004ULL;
constexpr std::uint64_t kDomainStream = 0xd0a1'0000'0000'0005ULL;

}  // namespace

Splits prepare_data(const TrainConfig& cfg) {
  cfg.validate();
  data::Dataset full, test;
  if (cfg.data_csv.empty()) {
    full = data::gen_blobs(cfg.seed, cfg.task_k, cfg.task_n, cfg.task_d, cfg.task_separation, cfg.task_label_noise);
    test = data::gen_blobs(cfg.seed ^ kTestStream, cfg.task_k, cfg.test_n, cfg.task_d, cfg.task_separation,
                           cfg.task_label_noise);
  } else {
    full = data::load_csv(cfg.data_csv);
    test = data::load_csv(cfg.test_csv);
    if (test.dim() != full.dim()) throw ConfigError("test_csv width does not match data_csv");
    const std::size_t k = std::max(full.num_classes, test.num_classes);
    full.num_classes = test.num_classes = k;
  }
  auto parts = data::split_dataset(full, cfg.fractions, cfg.seed ^ kSplitStream);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2]), std::move(test)};
}

Batch take_batch(const data::Dataset& d, std::span<const std::size_t> rows) {
  auto sub = d.subset(rows);
  return {std::move(sub.X), std::move(sub.y)};
}

// ---------------------------------------------------------------------------
// Losses on the tape

namespace {

ad::Var objective(ad::Var logits, std::span<const std::size_t> labels, const TrainConfig& cfg) {
  switch (cfg.meta_objective) {
    case MetaObjective::dece: return calib::dece(logits, labels, cfg.dece);
    case MetaObjective::ce: return losses::cross_entropy(logits, labels);
    case MetaObjective::mmce: return calib::mmce(logits, labels, cfg.mmce_width);
    case MetaObjective::dece_plus_ce:
      return calib::dece(logits, labels, cfg.dece) + cfg.dece_ce_weight * losses::cross_entropy(logits, labels);
    case MetaObjective::none: break;
  }
  throw ConfigError("no meta objective configured");
}

// CE with label smoothing, or CE plus the unit-wise L2 penalty on phi.
ad::Var regularised_ce(ad::Var logits, std::span<const std::size_t> labels, ad::Var omega,
                       const losses::HyperParams& kind, const nn::BoundLinear& phi, std::size_t num_classes) {
  if (kind.is_smoothing()) {
    return losses::cross_entropy_soft(logits, losses::smooth_labels(labels, omega, num_classes));
  }
  return losses::cross_entropy(logits, labels) + losses::l2_penalty(phi, omega);
}

}  // namespace

ad::Var base_loss(ad::Tape& tape, const nn::BoundParams& params, const Batch& batch, const losses::HyperParams& omega,
                  const TrainConfig& cfg) {
  ad::Var logits = nn::forward(tape, params, batch.X);
  const std::size_t k = logits.shape()[1];
  switch (cfg.base_loss) {
    case BaseLoss::ce: return regularised_ce(logits, batch.y, tape.constant(omega.values), omega, params.phi, k);
    case BaseLoss::brier: return losses::brier_loss(logits, batch.y);
    case BaseLoss::focal: return losses::focal_loss(logits, batch.y, cfg.focal_gamma);
    case BaseLoss::flsd53: return losses::focal_loss(logits, batch.y, 0.0, losses::FocalMode::flsd53);
    case BaseLoss::ce_dece:
      return regularised_ce(logits, batch.y, tape.constant(omega.values), omega, params.phi, k) +
             cfg.multitask_weight * calib::dece(logits, batch.y, cfg.dece);
  }
  throw ConfigError("unknown base loss");
}

// ---------------------------------------------------------------------------
// Meta-gradient

MetaState make_meta_state(const losses::HyperParams& omega, double meta_lr) {
  MetaState m{omega, {}, {}};
  const std::vector<const Tensor*> ptrs{&m.omega.values};
  m.adam = nn::make_adam(ptrs, meta_lr);
  return m;
}

OuterProblem make_outer_problem(const nn::ModelParams& params, const Batch& train, const Batch& metaval,
                                double inner_lr) {
  return {nn::extract_features(params, train.X), train.y, nn::extract_features(params, metaval.X), metaval.y,
          params.phi, inner_lr};
}

namespace {

ad::Var simulated_outer(ad::Tape& tape, const OuterProblem& p, ad::Var omega, const losses::HyperParams& kind,
                        const TrainConfig& cfg) {
  nn::BoundLinear phi = nn::bind(tape, p.phi, true);
  ad::Var logits_t = nn::linear(phi, tape.constant(p.train_features));
  const std::size_t k = p.phi.bias.size();
  ad::Var inner = regularised_ce(logits_t, p.train_labels, omega, kind, phi, k);
  const std::vector<ad::Var> wrt{phi.weight, phi.bias};
  auto g = ad::grad(inner, wrt);
  nn::BoundLinear stepped{phi.weight - ad::scale(g[0], p.inner_lr), phi.bias - ad::scale(g[1], p.inner_lr)};
  ad::Var logits_v = nn::linear(stepped, tape.constant(p.val_features));
  return objective(logits_v, p.val_labels, cfg);
}

}  // namespace

double outer_loss(const OuterProblem& p, const losses::HyperParams& omega, const TrainConfig& cfg) {
  ad::Tape tape;
  return simulated_outer(tape, p, tape.constant(omega.values), omega, cfg).value().item();
}

std::pair<double, Tensor> hypergradient(const OuterProblem& p, const losses::HyperParams& omega,
                                        const TrainConfig& cfg) {
  ad::Tape tape;
  ad::Var w = tape.leaf(omega.values, true);
  ad::Var lo = simulated_outer(tape, p, w, omega, cfg);
  const double value = lo.value().item();
  auto grads = ad::backward(lo);
  return {value, grads[w]};
}

HypergradReport hypergrad_check(const OuterProblem& p, const losses::HyperParams& omega, const TrainConfig& cfg,
                                double h, double tol, double floor) {
  HypergradReport r;
  r.analytic = hypergradient(p, omega, cfg).second;
  r.numeric = zeros_like(omega.values);
  double worst = 0.0;
  for (std::size_t i = 0; i < omega.values.size(); ++i) {
    losses::HyperParams plus = omega, minus = omega;
    plus.values[i] += h;
    minus.values[i] -= h;
    r.numeric[i] = (outer_loss(p, plus, cfg) - outer_loss(p, minus, cfg)) / (2.0 * h);
    const double a = r.analytic[i], f = r.numeric[i];
    double err = std::fabs(a - f) / std::max({std::fabs(a), std::fabs(f), floor});
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  r.max_rel_error = worst;
  r.passed = worst <= tol;
  return r;
}

StepResult meta_step(nn::ModelParams& params, nn::SgdMomentumState& sgd, MetaState& meta, const Batch& train,
                     const Batch* meta_train, const Batch* meta_val, const TrainConfig& cfg) {
  StepResult result;
  {
    ad::Tape tape;
    auto bound = nn::bind(tape, params, true);
    ad::Var loss = base_loss(tape, bound, train, meta.omega, cfg);
    result.base_loss = loss.value().item();
    auto grads = ad::backward(loss);
    std::vector<Tensor> g;
    for (const auto& v : bound.vars()) g.push_back(grads[v]);
    nn::sgd_momentum_step(params, g, sgd);
  }
  if (meta_train != nullptr && meta_val != nullptr && cfg.meta_enabled()) {
    const auto problem = make_outer_problem(params, *meta_train, *meta_val, sgd.lr);
    auto [lo, g] = hypergradient(problem, meta.omega, cfg);
    if (!g.all_finite()) throw DomainError("meta_step: non-finite hypergradient (outer loss " + io::format_double(lo) + ")");
    std::vector<Tensor*> ptrs{&meta.omega.values};
    std::vector<Tensor> grads{std::move(g)};
    nn::adam_step(ptrs, grads, meta.adam);
    meta.omega.project();
    meta.trajectory.push_back(meta.omega.values);
    result.outer_loss = lo;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training loop

TestMetrics evaluate(const nn::ModelParams& params, const data::Dataset& test, const data::Dataset& val,
                     std::size_t bins, calib::BinStats* reliability) {
  TestMetrics m;
  const Tensor logits = nn::predict_logits(params, test.X);
  const auto scores = calib::evaluate_scores(logits, test.y);
  m.error = scores.error_rate;
  m.nll = scores.nll;
  m.brier = scores.brier;
  const auto batch = calib::PredictionBatch::from_logits(logits, test.y);
  auto ece = calib::ece_with_bins(batch, bins);
  m.ece = ece.ece;
  if (reliability != nullptr) *reliability = ece.bins;
  m.aece = test.size() >= bins ? calib::aece(batch, bins) : 0.0;
  const auto fit = calib::fit_temperature(nn::predict_logits(params, val.X), val.y);
  m.temperature = fit.temperature;
  m.ece_temp = calib::ece_with_bins({calib::apply_temperature(logits, fit.temperature), test.y}, bins).ece;
  return m;
}

namespace {

std::vector<std::size_t> draw_rows(std::mt19937_64& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  return all;
}

}  // namespace

RunReport run_training(const TrainConfig& cfg, const Splits& data, const EpochHook& hook,
                       const std::optional<losses::HyperParams>& fixed_omega) {
  cfg.validate();
  const bool meta_on = cfg.meta_enabled() && !fixed_omega.has_value();
  if (meta_on && data.metaval.size() == 0) throw ConfigError("meta-learning needs a non-empty meta-val split");
  const data::Dataset train_set = (!meta_on && cfg.merge_metaval) ? concat(data.train, data.metaval) : data.train;
  train_set.validate();
  const std::size_t k = std::max({train_set.num_classes, data.val.num_classes, data.test.num_classes});

  std::vector<std::size_t> dims{train_set.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  nn::ModelParams params = nn::init_params(cfg.seed, dims, k);

  losses::HyperParams omega;
  if (fixed_omega) {
    if (fixed_omega->kind != cfg.hyper_kind) {
      throw ConfigError("omega kind " + losses::to_string(fixed_omega->kind) + " does not match hyper_kind " +
                        losses::to_string(cfg.hyper_kind));
    }
    omega = *fixed_omega;
  } else {
    omega = losses::HyperParams::zeros(cfg.hyper_kind, k, params.feature_dim());
    for (auto& v : omega.values.values()) v = cfg.hyper_init;
  }
  omega.check(k, params.feature_dim());
  MetaState meta = make_meta_state(omega, cfg.meta_lr);
  nn::SgdMomentumState sgd = nn::make_sgd(params, cfg.lr, cfg.momentum, cfg.weight_decay);

  std::vector<data::CorruptionSpec> pool;
  if (cfg.multi_domain) {
    for (const auto& s : cfg.train_corruptions) pool.push_back(data::parse_corruption(s));
  }

  std::mt19937_64 batch_rng(cfg.seed ^ kBatchStream);
  std::mt19937_64 meta_rng(cfg.seed ^ kMetaStream);

  RunReport report;
  report.config = cfg;
  report.data_provenance = train_set.provenance;
  nn::ModelParams best = params;
  double best_acc = -1.0;
  std::size_t iteration = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.lr = nn::scheduled_lr(cfg.lr, epoch, cfg.lr_drops, cfg.lr_drop_factor);
    std::shuffle(order.begin(), order.end(), batch_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch train = take_batch(train_set, std::span(order).subspan(start, end - start));
      std::optional<Batch> mt, mv;
      if (meta_on && iteration % cfg.meta_stride == 0) {
        mt = take_batch(train_set, draw_rows(meta_rng, train_set.size(), cfg.batch_size));
        mv = take_batch(data.metaval, draw_rows(meta_rng, data.metaval.size(), cfg.batch_size));
        if (cfg.multi_domain) {
          std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
          data::CorruptionSpec spec = pool[pick(meta_rng)];
          spec.seed = meta_rng();
          mv->X = data::corrupt(mv->X, spec);
        }
      }
      const auto step = meta_step(params, sgd, meta, train, mt ? &*mt : nullptr, mv ? &*mv : nullptr, cfg);
      loss_sum += step.base_loss;
      ++batches;
      ++iteration;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = sgd.lr;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    const Tensor val_logits = nn::predict_logits(params, data.val.X);
    stats.val_error = calib::evaluate_scores(val_logits, data.val.y).error_rate;
    stats.val_ece = calib::ece_with_bins(calib::PredictionBatch::from_logits(val_logits, data.val.y), cfg.eval_bins).ece;
    report.epochs.push_back(stats);
    const double acc = 1.0 - stats.val_error;
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
      report.best_epoch = epoch;
    }
    if (hook) hook(epoch, params);
  }
  if (!cfg.early_stopping) {
    best = params;
    report.best_epoch = cfg.epochs - 1;
  }

  report.test = evaluate(best, data.test, data.val, cfg.eval_bins, &report.reliability);
  if (!cfg.test_corruptions.empty()) {
    double worst = 0.0, sum_ece = 0.0, sum_err = 0.0;
    for (std::size_t i = 0; i < cfg.test_corruptions.size(); ++i) {
      auto spec = data::parse_corruption(cfg.test_corruptions[i]);
      spec.seed = (cfg.seed ^ kDomainStream) + i;
      const Tensor x = data::corrupt(data.test.X, spec);
      const Tensor logits = nn::predict_logits(best, x);
      DomainResult d;
      d.name = cfg.test_corruptions[i];
      d.error = calib::evaluate_scores(logits, data.test.y).error_rate;
      d.ece = calib::ece_with_bins(calib::PredictionBatch::from_logits(logits, data.test.y), cfg.eval_bins).ece;
      worst = std::max(worst, d.ece);
      sum_ece += d.ece;
      sum_err += d.error;
      report.domains.push_back(d);
    }
    const double nd = static_cast<double>(report.domains.size());
    report.domain_mean_ece = sum_ece / nd;
    report.domain_mean_error = sum_err / nd;
    report.domain_worst_ece = worst;
  }
  report.omega_final = meta.omega;
  report.trajectory = std::move(meta.trajectory);
  report.params = std::move(best);
  return report;
}

RunReport retrain_with_fixed_hparams(const losses::HyperParams& omega, const TrainConfig& cfg, const Splits& data) {
  TrainConfig plain = cfg;
  plain.merge_metaval = true;
  plain.multi_domain = false;
  return run_training(plain, data, {}, omega);
}

}  // namespace metacal::train
