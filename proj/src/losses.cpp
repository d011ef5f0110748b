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

#include "metacal/losses.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "metacal/io.hpp"

namespace metacal::losses {

namespace ad = autodiff;

std::string to_string(HyperKind kind) {
  switch (kind) {
    case HyperKind::ls_scalar: return "ls_scalar";
    case HyperKind::ls_vector: return "ls_vector";
    case HyperKind::l2_unitwise: return "l2_unitwise";
  }
  return "?";
}

HyperKind hyper_kind_from_string(const std::string& name) {
  if (name == "ls_scalar") return HyperKind::ls_scalar;
  if (name == "ls_vector") return HyperKind::ls_vector;
  if (name == "l2_unitwise") return HyperKind::l2_unitwise;
  throw std::invalid_argument("unknown hyper-parameter kind '" + name + "'");
}

std::size_t HyperParams::size_for(HyperKind kind, std::size_t num_classes, std::size_t feature_dim) {
  switch (kind) {
    case HyperKind::ls_scalar: return 1;
    case HyperKind::ls_vector: return num_classes;
    case HyperKind::l2_unitwise: return feature_dim * num_classes + num_classes;
  }
  return 0;
}

HyperParams HyperParams::zeros(HyperKind kind, std::size_t num_classes, std::size_t feature_dim) {
  return {kind, Tensor({size_for(kind, num_classes, feature_dim)})};
}

void HyperParams::check(std::size_t num_classes, std::size_t feature_dim) const {
  const std::size_t want = size_for(kind, num_classes, feature_dim);
  if (values.size() != want || values.rank() != 1) {
    throw ShapeError(to_string(kind) + " expects " + std::to_string(want) + " values, got shape " +
                     shape_str(values.shape()));
  }
  if (!values.all_finite()) throw DomainError(to_string(kind) + " values must be finite");
}

void HyperParams::project() {
  if (!is_smoothing()) return;
  for (auto& v : values.values()) v = std::clamp(v, 0.0, kMaxSmoothing);
}

nlohmann::json hyper_to_json(const HyperParams& h) {
  return {{"format", "metacal.hyperparams"},
          {"version", 1},
          {"kind", to_string(h.kind)},
          {"values", h.values.values()}};
}

HyperParams hyper_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "metacal.hyperparams") throw std::invalid_argument("not a metacal.hyperparams document");
  if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported hyperparams version");
  auto values = j.at("values").get<std::vector<double>>();
  if (values.empty()) throw std::invalid_argument("hyperparams: empty value list");
  HyperParams h{hyper_kind_from_string(j.at("kind").get<std::string>()), Tensor({values.size()}, values)};
  if (!h.values.all_finite()) throw DomainError("hyperparams: non-finite value");
  return h;
}

void save_hyper(const HyperParams& h, const std::filesystem::path& path) {
  io::write_text_atomic(path, hyper_to_json(h).dump() + "\n");
}

HyperParams load_hyper(const std::filesystem::path& path) {
  return hyper_from_json(nlohmann::json::parse(io::read_text(path)));
}

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t num_classes, const char* who) {
  if (labels.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
  for (auto y : labels) {
    if (y >= num_classes) throw std::out_of_range(std::string(who) + ": label " + std::to_string(y) + " out of range");
  }
}

void check_logits(Var logits, std::span<const std::size_t> labels, const char* who) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError(std::string(who) + ": logits " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  check_labels(labels, s[1], who);
}

}  // namespace

Var smooth_labels(std::span<const std::size_t> labels, Var omega, std::size_t num_classes) {
  check_labels(labels, num_classes, "smooth_labels");
  const std::size_t n = labels.size(), w = omega.value().size();
  std::vector<std::size_t> pick(n, 0);
  if (w == num_classes && w != 1) {
    pick.assign(labels.begin(), labels.end());
  } else if (w != 1) {
    throw ShapeError("smooth_labels: omega must have 1 or K entries, got " + std::to_string(w));
  }
  // y + w (1/K - y) with y one-hot.
  Tensor shift({n, num_classes}, 1.0 / static_cast<double>(num_classes));
  Tensor onehot({n, num_classes});
  for (std::size_t i = 0; i < n; ++i) {
    onehot.at(i, labels[i]) = 1.0;
    shift.at(i, labels[i]) -= 1.0;
  }
  ad::Tape& tape = omega.tape();
  Var per_row = ad::broadcast_to(ad::reshape(ad::take(omega, std::move(pick)), {n, 1}), {n, num_classes});
  return tape.constant(std::move(onehot)) + per_row * tape.constant(std::move(shift));
}

Tensor smooth_labels(std::span<const std::size_t> labels, const Tensor& omega, std::size_t num_classes) {
  ad::Tape tape;
  return smooth_labels(labels, tape.constant(omega), num_classes).value();
}

Var cross_entropy_soft(Var logits, Var targets) {
  if (logits.shape() != targets.shape() || logits.shape().size() != 2) {
    throw ShapeError("cross_entropy_soft: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  }
  const double n = static_cast<double>(logits.shape()[0]);
  return ad::scale(ad::sum(targets * ad::log_softmax_rows(logits)), -1.0 / n);
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  check_logits(logits, labels, "cross_entropy");
  return -ad::mean(ad::gather_rows(ad::log_softmax_rows(logits), labels));
}

Var focal_loss(Var logits, std::span<const std::size_t> labels, double gamma, FocalMode mode) {
  check_logits(logits, labels, "focal_loss");
  if (mode == FocalMode::fixed && !(gamma >= 0.0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  Var logp = ad::gather_rows(ad::log_softmax_rows(logits), labels);
  const std::size_t n = labels.size();
  Tensor gammas({n}, gamma);
  if (mode == FocalMode::flsd53) {
    for (std::size_t i = 0; i < n; ++i) gammas[i] = std::exp(logp.value()[i]) < 0.2 ? 5.0 : 3.0;
  }
  const bool plain = std::all_of(gammas.data().begin(), gammas.data().end(), [](double g) { return g == 0.0; });
  if (plain) return -ad::mean(logp);
  Var weight = ad::pow(1.0 - ad::exp(logp), gammas);
  return -ad::mean(weight * logp);
}

Var brier_loss(Var logits, std::span<const std::size_t> labels) {
  check_logits(logits, labels, "brier_loss");
  const Shape s = logits.shape();
  Tensor onehot(s);
  for (std::size_t i = 0; i < s[0]; ++i) onehot.at(i, labels[i]) = 1.0;
  Var diff = ad::softmax_rows(logits) - logits.tape().constant(std::move(onehot));
  return ad::scale(ad::sum(diff * diff), 1.0 / static_cast<double>(s[0]));
}

Var l2_penalty(const nn::BoundLinear& phi, Var omega) {
  const Shape ws = phi.weight.shape();
  const std::size_t nw = phi.weight.value().size(), nb = phi.bias.value().size();
  if (omega.value().size() != nw + nb) {
    throw ShapeError("l2_penalty: omega has " + std::to_string(omega.value().size()) + " entries, classifier has " +
                     std::to_string(nw + nb));
  }
  std::vector<std::size_t> wi(nw), bi(nb);
  std::iota(wi.begin(), wi.end(), 0);
  std::iota(bi.begin(), bi.end(), nw);
  Var ow = ad::reshape(ad::take(omega, std::move(wi)), ws);
  Var ob = ad::take(omega, std::move(bi));
  return ad::sum(ow * phi.weight * phi.weight) + ad::sum(ob * phi.bias * phi.bias);
}

}  // namespace metacal::losses
