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

// Differentiable ECE (soft binning plus all-pairs soft accuracy) and the
// SB-ECE and MMCE comparators. All functions record onto the tape that owns
// their input Vars.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metacal/autodiff.hpp"
#include "metacal/tensor.hpp"

namespace metacal::calib {

using autodiff::Var;

struct DeceConfig {
  std::size_t num_bins = 15;
  double tau_a = 100.0;
  double tau_b = 0.01;

  void validate() const;
  /// w_m = m for m = 1..M.
  Tensor bin_weights() const;
  /// b_m = -(m-1)m / (2M).
  Tensor bin_biases() const;
};

/// Below this soft mass a bin contributes nothing.
inline constexpr double kEmptyBinMass = 1e-12;

/// Max softmax probability per row, shape [n]. The argmax (lowest index on
/// ties) is fixed; the gradient flows through the selected entry.
Var confidences(Var logits);

/// o[i][m] = softmax_m((w_m * c_i + b_m) / tau_b), shape [n x M].
Var soft_bin_memberships(Var confidences, const DeceConfig& cfg);

/// max(0, 2 - R_l) with R_l = 1 + sum_{j != l} sigmoid(tau_a (z_j - z_l)),
/// l the true class. Shape [n].
Var soft_accuracy(Var logits, std::span<const std::size_t> labels, double tau_a);

/// Differentiable expected calibration error of a batch of logits.
Var dece(Var logits, std::span<const std::size_t> labels, const DeceConfig& cfg = {});
double dece(const Tensor& logits, std::span<const std::size_t> labels, const DeceConfig& cfg = {});

/// Soft-binned ECE: soft memberships, hard correctness, bin centres
/// (2m-1)/(2M) as the per-bin confidence.
Var sb_ece(Var logits, std::span<const std::size_t> labels, const DeceConfig& cfg = {});
double sb_ece(const Tensor& logits, std::span<const std::size_t> labels, const DeceConfig& cfg = {});

inline constexpr double kMmceWidth = 0.4;

/// sqrt(sum_ij (r_i r_j) exp(-|c_i - c_j| / width) / n^2) with r = correct - c.
Var mmce(Var confidences, const Tensor& correctness, double kernel_width = kMmceWidth);
/// MMCE of the predictions in `logits` (confidence and hard correctness).
Var mmce(Var logits, std::span<const std::size_t> labels, double kernel_width = kMmceWidth);

/// 1 where argmax (lowest index on ties) equals the label, else 0. Shape [n].
Tensor hard_correctness(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace metacal::calib
