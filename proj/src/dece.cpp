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

#include "metacal/dece.hpp"

#include <stdexcept>
#include <string>

namespace metacal::calib {

namespace ad = autodiff;

void DeceConfig::validate() const {
  if (num_bins < 1) throw std::invalid_argument("dece: num_bins must be >= 1");
  if (!(tau_a > 0.0)) throw std::invalid_argument("dece: tau_a must be positive");
  if (!(tau_b > 0.0)) throw std::invalid_argument("dece: tau_b must be positive");
}

Tensor DeceConfig::bin_weights() const {
  Tensor w({num_bins});
  for (std::size_t m = 0; m < num_bins; ++m) w[m] = static_cast<double>(m + 1);
  return w;
}

Tensor DeceConfig::bin_biases() const {
  Tensor b({num_bins});
  const double mm = static_cast<double>(num_bins);
  for (std::size_t m = 0; m < num_bins; ++m) {
    const double k = static_cast<double>(m + 1);
    b[m] = -(k - 1.0) * k / (2.0 * mm);
  }
  return b;
}

namespace {

void check_batch(Var logits, std::span<const std::size_t> labels, const char* who) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError(std::string(who) + ": logits must be a matrix, got " + shape_str(s));
  if (s[0] == 0 || labels.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
  if (labels.size() != s[0]) {
    throw ShapeError(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(s[0]) + " rows");
  }
  for (auto y : labels) {
    if (y >= s[1]) throw std::out_of_range(std::string(who) + ": label " + std::to_string(y) + " out of range");
  }
}

Var column(Var v) { return ad::reshape(v, {v.value().size(), 1}); }
Var row(Var v) { return ad::reshape(v, {1, v.value().size()}); }

// sum_m (S_m / n) |A_m / S_m - C_m / S_m| where bins with S_m < eps are
// dropped. S, A, C have shape [M].
Var weighted_gap(Var mass, Var acc_sum, Var conf_sum, std::size_t n) {
  ad::Tape& tape = mass.tape();
  const Tensor& s = mass.value();
  Tensor keep(s.shape()), pad(s.shape());
  for (std::size_t m = 0; m < s.size(); ++m) {
    keep[m] = s[m] >= kEmptyBinMass ? 1.0 : 0.0;
    pad[m] = 1.0 - keep[m];
  }
  Var safe = mass + tape.constant(pad);
  Var gap = ad::abs(acc_sum / safe - conf_sum / safe);
  return ad::sum(tape.constant(keep) * ad::scale(mass, 1.0 / static_cast<double>(n)) * gap);
}

}  // namespace

Var confidences(Var logits) {
  Var probs = ad::softmax_rows(logits);
  const auto top = kernels::argmax_rows(probs.value());
  return ad::gather_rows(probs, top);
}

Var soft_bin_memberships(Var conf, const DeceConfig& cfg) {
  cfg.validate();
  ad::Tape& tape = conf.tape();
  const std::size_t n = conf.value().size();
  Var w = tape.constant(cfg.bin_weights().reshaped({1, cfg.num_bins}));
  Var b = tape.constant(cfg.bin_biases());
  Var z = ad::matmul(ad::reshape(conf, {n, 1}), w) + b;
  return ad::softmax_rows(ad::scale(z, 1.0 / cfg.tau_b));
}

Var soft_accuracy(Var logits, std::span<const std::size_t> labels, double tau_a) {
  check_batch(logits, labels, "soft_accuracy");
  if (!(tau_a > 0.0)) throw std::invalid_argument("soft_accuracy: tau_a must be positive");
  ad::Tape& tape = logits.tape();
  const Shape shape = logits.shape();
  Var true_logit = ad::broadcast_to(column(ad::gather_rows(logits, labels)), shape);
  Var above = ad::sigmoid(ad::scale(logits - true_logit, tau_a));
  Tensor others(shape, 1.0);
  for (std::size_t i = 0; i < shape[0]; ++i) others.at(i, labels[i]) = 0.0;
  Var rank = ad::sum(above * tape.constant(others), 1) + 1.0;
  return ad::clamp_min(2.0 - rank, 0.0);
}

Var dece(Var logits, std::span<const std::size_t> labels, const DeceConfig& cfg) {
  check_batch(logits, labels, "dece");
  cfg.validate();
  const std::size_t n = labels.size();
  Var conf = confidences(logits);
  Var o = soft_bin_memberships(conf, cfg);
  Var acc = soft_accuracy(logits, labels, cfg.tau_a);
  Var mass = ad::sum(o, 0);
  Var acc_sum = ad::reshape(ad::matmul(row(acc), o), {cfg.num_bins});
  Var conf_sum = ad::reshape(ad::matmul(row(conf), o), {cfg.num_bins});
  return weighted_gap(mass, acc_sum, conf_sum, n);
}

double dece(const Tensor& logits, std::span<const std::size_t> labels, const DeceConfig& cfg) {
  ad::Tape tape;
  return dece(tape.constant(logits), labels, cfg).value().item();
}

Tensor hard_correctness(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto pred = kernels::argmax_rows(logits);
  if (labels.size() != pred.size()) throw ShapeError("hard_correctness: one label per row required");
  Tensor out({pred.size()});
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] == labels[i] ? 1.0 : 0.0;
  return out;
}

Var sb_ece(Var logits, std::span<const std::size_t> labels, const DeceConfig& cfg) {
  check_batch(logits, labels, "sb_ece");
  cfg.validate();
  ad::Tape& tape = logits.tape();
  const std::size_t n = labels.size(), mb = cfg.num_bins;
  Var o = soft_bin_memberships(confidences(logits), cfg);
  Var correct = tape.constant(hard_correctness(logits.value(), labels).reshaped({1, n}));
  Tensor centres({mb});
  for (std::size_t m = 0; m < mb; ++m) centres[m] = (2.0 * static_cast<double>(m) + 1.0) / (2.0 * static_cast<double>(mb));
  Var mass = ad::sum(o, 0);
  Var acc_sum = ad::reshape(ad::matmul(correct, o), {mb});
  return weighted_gap(mass, acc_sum, mass * tape.constant(centres), n);
}

double sb_ece(const Tensor& logits, std::span<const std::size_t> labels, const DeceConfig& cfg) {
  ad::Tape tape;
  return sb_ece(tape.constant(logits), labels, cfg).value().item();
}

Var mmce(Var conf, const Tensor& correctness, double kernel_width) {
  if (!(kernel_width > 0.0)) throw std::invalid_argument("mmce: kernel width must be positive");
  const std::size_t n = conf.value().size();
  if (n == 0) throw std::invalid_argument("mmce: empty batch");
  if (correctness.size() != n) throw ShapeError("mmce: correctness length does not match confidences");
  ad::Tape& tape = conf.tape();
  Var r = tape.constant(correctness.reshaped({n})) - ad::reshape(conf, {n});
  Var c = ad::reshape(conf, {n});
  Var diff = ad::broadcast_to(column(c), {n, n}) - ad::broadcast_to(row(c), {n, n});
  Var kernel = ad::exp(ad::scale(ad::abs(diff), -1.0 / kernel_width));
  Var q = ad::matmul(ad::matmul(row(r), kernel), column(r));
  q = ad::scale(ad::reshape(q, {1}), 1.0 / static_cast<double>(n * n));
  return ad::sqrt(ad::clamp_min(q, 0.0));
}

Var mmce(Var logits, std::span<const std::size_t> labels, double kernel_width) {
  check_batch(logits, labels, "mmce");
  return mmce(confidences(logits), hard_correctness(logits.value(), labels), kernel_width);
}

}  // namespace metacal::calib
