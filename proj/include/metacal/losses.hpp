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

// Training losses and the learnable regularisers they are parameterised by.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "metacal/autodiff.hpp"
#include "metacal/model.hpp"
#include "metacal/tensor.hpp"

namespace metacal::losses {

using autodiff::Var;

enum class HyperKind { ls_scalar, ls_vector, l2_unitwise };

std::string to_string(HyperKind kind);
HyperKind hyper_kind_from_string(const std::string& name);

/// Largest label-smoothing value kept after projection.
inline constexpr double kMaxSmoothing = 0.999;

struct HyperParams {
  HyperKind kind = HyperKind::ls_scalar;
  /// [1] for ls_scalar, [K] for ls_vector, [d_feat*K + K] for l2_unitwise
  /// (classifier weight entries row-major, then bias entries).
  Tensor values;

  static HyperParams zeros(HyperKind kind, std::size_t num_classes, std::size_t feature_dim);
  static std::size_t size_for(HyperKind kind, std::size_t num_classes, std::size_t feature_dim);

  bool is_smoothing() const { return kind != HyperKind::l2_unitwise; }
  /// Throws unless values has the size required by (K, d_feat).
  void check(std::size_t num_classes, std::size_t feature_dim) const;
  /// Clamps label-smoothing entries into [0, kMaxSmoothing]; no-op for L2.
  void project();

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

nlohmann::json hyper_to_json(const HyperParams& h);
HyperParams hyper_from_json(const nlohmann::json& j);
void save_hyper(const HyperParams& h, const std::filesystem::path& path);
HyperParams load_hyper(const std::filesystem::path& path);

/// Row i: (1 - w) at labels[i] plus w / K everywhere, with w = omega[0]
/// (omega of size 1) or omega[labels[i]] (omega of size K).
Var smooth_labels(std::span<const std::size_t> labels, Var omega, std::size_t num_classes);
Tensor smooth_labels(std::span<const std::size_t> labels, const Tensor& omega, std::size_t num_classes);

/// Mean over rows of -sum_k targets * log_softmax(logits).
Var cross_entropy_soft(Var logits, Var targets);
/// Cross-entropy against hard labels.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

enum class FocalMode { fixed, flsd53 };

/// Mean of -(1 - p)^gamma log p over the true-class probability p. In
/// flsd53 mode gamma is 5 where p < 0.2 and 3 otherwise (gamma argument
/// ignored); the choice is not differentiated.
Var focal_loss(Var logits, std::span<const std::size_t> labels, double gamma, FocalMode mode = FocalMode::fixed);

/// Mean over rows of sum_k (softmax - onehot)^2.
Var brier_loss(Var logits, std::span<const std::size_t> labels);

/// sum of omega * phi^2 over classifier weight and bias entries.
Var l2_penalty(const nn::BoundLinear& phi, Var omega);

}  // namespace metacal::losses
