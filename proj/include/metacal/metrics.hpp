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

// Reference (non-differentiable) calibration metrics and temperature
// scaling. Nothing here depends on the autodiff tape.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "metacal/tensor.hpp"

namespace metacal::calib {

/// Probability rows plus true labels.
struct PredictionBatch {
  Tensor probs;  // [n x K], rows on the simplex
  std::vector<std::size_t> labels;

  static PredictionBatch from_logits(const Tensor& logits, std::vector<std::size_t> labels);

  std::size_t size() const { return labels.size(); }
  /// Throws if rows are off the simplex (1e-9) or labels are out of range.
  void validate() const;
};

struct Bin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double acc = 0.0;
  double conf = 0.0;
  double gap = 0.0;
};

struct BinStats {
  std::vector<Bin> bins;

  std::size_t total() const;
  /// CSV with header `bin_lo,bin_hi,count,acc,conf,gap`, one row per bin.
  std::string to_csv() const;
};

struct EceResult {
  double ece = 0.0;
  BinStats bins;
};

/// 0-based bin index for confidence c with bins ((m-1)/M, m/M]; c = 0 goes
/// to the first bin.
std::size_t bin_index(double confidence, std::size_t num_bins);

/// Equal-width expected calibration error.
EceResult ece_with_bins(const PredictionBatch& batch, std::size_t num_bins);

/// Adaptive ECE: samples sorted by (confidence, index) and split into
/// num_bins contiguous groups whose sizes differ by at most one.
EceResult aece_with_bins(const PredictionBatch& batch, std::size_t num_bins);
double aece(const PredictionBatch& batch, std::size_t num_bins);

struct Scores {
  double nll = 0.0;
  double brier = 0.0;
  double error_rate = 0.0;
};

Scores evaluate_scores(const Tensor& logits, std::span<const std::size_t> labels);

/// Temperature grid, in [0.05, 10]. `step` must divide 1 (e.g. 0.01).
struct TemperatureGrid {
  double lo = 0.05;
  double hi = 10.0;
  double step = 0.01;
};

struct TemperatureFit {
  double temperature = 1.0;
  double nll = 0.0;
  Tensor probs;
};

double nll_at_temperature(const Tensor& logits, std::span<const std::size_t> labels, double temperature);

/// Grid search for the NLL-minimising temperature; ties go to the smaller T.
TemperatureFit fit_temperature(const Tensor& logits, std::span<const std::size_t> labels,
                               const TemperatureGrid& grid = {});

/// softmax(logits / temperature).
Tensor apply_temperature(const Tensor& logits, double temperature);

}  // namespace metacal::calib
