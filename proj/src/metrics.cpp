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

#include "metacal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "metacal/io.hpp"

namespace metacal::calib {

PredictionBatch PredictionBatch::from_logits(const Tensor& logits, std::vector<std::size_t> labels) {
  return {kernels::softmax_rows(logits), std::move(labels)};
}

void PredictionBatch::validate() const {
  const std::size_t n = probs.rows(), k = probs.cols();
  if (labels.size() != n) throw ShapeError("prediction batch has " + std::to_string(n) + " rows but " +
                                           std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::out_of_range("label " + std::to_string(labels[i]) + " out of range");
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs.at(i, j);
      if (!(p >= 0.0)) throw DomainError("negative or NaN probability in row " + std::to_string(i));
      total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw DomainError("probability row " + std::to_string(i) + " does not sum to 1");
  }
}

std::size_t BinStats::total() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

std::string BinStats::to_csv() const {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count,acc,conf,gap\n";
  for (const auto& b : bins) {
    os << io::format_double(b.lo) << ',' << io::format_double(b.hi) << ',' << b.count << ','
       << io::format_double(b.acc) << ',' << io::format_double(b.conf) << ',' << io::format_double(b.gap) << '\n';
  }
  return os.str();
}

std::size_t bin_index(double confidence, std::size_t num_bins) {
  const double m_count = static_cast<double>(num_bins);
  auto edge = [&](std::size_t m) { return static_cast<double>(m) / m_count; };
  // Initial guess, then correct against the exact edges.
  double guess = std::ceil(confidence * m_count);
  std::size_t m = guess < 1.0 ? 1 : std::min<std::size_t>(num_bins, static_cast<std::size_t>(guess));
  while (m > 1 && confidence <= edge(m - 1)) --m;
  while (m < num_bins && confidence > edge(m)) ++m;
  return m - 1;
}

namespace {

struct Sample {
  double conf;
  bool correct;
};

std::vector<Sample> summarize(const PredictionBatch& batch) {
  const std::size_t n = batch.probs.rows(), k = batch.probs.cols();
  if (n == 0 || batch.labels.empty()) throw std::invalid_argument("empty prediction batch");
  if (batch.labels.size() != n) throw ShapeError("labels and probability rows differ in count");
  const auto pred = kernels::argmax_rows(batch.probs);
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.labels[i] >= k) throw std::out_of_range("label out of range");
    out[i] = {batch.probs.at(i, pred[i]), pred[i] == batch.labels[i]};
  }
  return out;
}

void finish_bin(Bin& bin, double correct_sum, double conf_sum) {
  if (bin.count == 0) return;
  const double c = static_cast<double>(bin.count);
  bin.acc = correct_sum / c;
  bin.conf = conf_sum / c;
  bin.gap = std::fabs(bin.acc - bin.conf);
}

double weighted_gap(const BinStats& stats, std::size_t n) {
  double ece = 0.0;
  for (const auto& b : stats.bins) {
    if (b.count == 0) continue;
    ece += static_cast<double>(b.count) / static_cast<double>(n) * b.gap;
  }
  return ece;
}

}  // namespace

EceResult ece_with_bins(const PredictionBatch& batch, std::size_t num_bins) {
  if (num_bins == 0) throw std::invalid_argument("ece: need at least one bin");
  const auto samples = summarize(batch);
  EceResult result;
  result.bins.bins.resize(num_bins);
  std::vector<double> correct(num_bins, 0.0), conf(num_bins, 0.0);
  for (std::size_t m = 0; m < num_bins; ++m) {
    result.bins.bins[m].lo = static_cast<double>(m) / static_cast<double>(num_bins);
    result.bins.bins[m].hi = static_cast<double>(m + 1) / static_cast<double>(num_bins);
  }
  for (const auto& s : samples) {
    const std::size_t m = bin_index(s.conf, num_bins);
    result.bins.bins[m].count += 1;
    correct[m] += s.correct ? 1.0 : 0.0;
    conf[m] += s.conf;
  }
  for (std::size_t m = 0; m < num_bins; ++m) finish_bin(result.bins.bins[m], correct[m], conf[m]);
  result.ece = weighted_gap(result.bins, samples.size());
  return result;
}

EceResult aece_with_bins(const PredictionBatch& batch, std::size_t num_bins) {
  if (num_bins == 0) throw std::invalid_argument("aece: need at least one bin");
  const auto samples = summarize(batch);
  const std::size_t n = samples.size();
  if (n < num_bins) {
    throw std::invalid_argument("aece: " + std::to_string(n) + " samples cannot fill " + std::to_string(num_bins) +
                                " bins");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].conf < samples[b].conf; });

  EceResult result;
  result.bins.bins.resize(num_bins);
  const std::size_t base = n / num_bins, extra = n % num_bins;
  std::size_t pos = 0;
  for (std::size_t m = 0; m < num_bins; ++m) {
    const std::size_t size = base + (m < extra ? 1 : 0);
    Bin& bin = result.bins.bins[m];
    bin.count = size;
    bin.lo = samples[order[pos]].conf;
    bin.hi = samples[order[pos + size - 1]].conf;
    double correct = 0.0, conf = 0.0;
    for (std::size_t j = pos; j < pos + size; ++j) {
      correct += samples[order[j]].correct ? 1.0 : 0.0;
      conf += samples[order[j]].conf;
    }
    finish_bin(bin, correct, conf);
    pos += size;
  }
  result.ece = weighted_gap(result.bins, n);
  return result;
}

double aece(const PredictionBatch& batch, std::size_t num_bins) { return aece_with_bins(batch, num_bins).ece; }

Scores evaluate_scores(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.rows(), k = logits.cols();
  if (n == 0 || labels.size() != n) throw ShapeError("evaluate_scores: one label per row required");
  const Tensor logp = kernels::log_softmax_rows(logits);
  const auto pred = kernels::argmax_rows(logits);
  Scores s;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::out_of_range("label out of range");
    s.nll -= logp.at(i, labels[i]);
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = std::exp(logp.at(i, j)) - (j == labels[i] ? 1.0 : 0.0);
      sq += d * d;
    }
    s.brier += sq;
    s.error_rate += pred[i] != labels[i] ? 1.0 : 0.0;
  }
  const double dn = static_cast<double>(n);
  s.nll /= dn;
  s.brier /= dn;
  s.error_rate /= dn;
  return s;
}

Tensor apply_temperature(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  Tensor scaled = logits;
  for (auto& v : scaled.values()) v /= temperature;
  return kernels::softmax_rows(scaled);
}

double nll_at_temperature(const Tensor& logits, std::span<const std::size_t> labels, double temperature) {
  Tensor scaled = logits;
  for (auto& v : scaled.values()) v /= temperature;
  const Tensor logp = kernels::log_softmax_rows(scaled);
  double nll = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) nll -= logp.at(i, labels[i]);
  return nll / static_cast<double>(labels.size());
}

TemperatureFit fit_temperature(const Tensor& logits, std::span<const std::size_t> labels,
                               const TemperatureGrid& grid) {
  if (logits.rows() == 0 || labels.size() != logits.rows()) throw ShapeError("fit_temperature: one label per row");
  if (grid.lo < 0.05 - 1e-12 || grid.hi > 10.0 + 1e-12 || grid.lo > grid.hi || !(grid.step > 0.0)) {
    throw std::invalid_argument("temperature grid must lie within [0.05, 10] with a positive step");
  }
  for (auto y : labels) {
    if (y >= logits.cols()) throw std::out_of_range("label out of range");
  }
  // Integer ticks keep grid points like 1.00 exact.
  const double per_unit = std::round(1.0 / grid.step);
  const long first = std::lround(grid.lo * per_unit);
  const long last = std::lround(grid.hi * per_unit);
  TemperatureFit best;
  best.nll = std::numeric_limits<double>::infinity();
  for (long tick = first; tick <= last; ++tick) {
    const double t = static_cast<double>(tick) / per_unit;
    const double nll = nll_at_temperature(logits, labels, t);
    if (nll < best.nll) {
      best.nll = nll;
      best.temperature = t;
    }
  }
  best.probs = apply_temperature(logits, best.temperature);
  return best;
}

}  // namespace metacal::calib
