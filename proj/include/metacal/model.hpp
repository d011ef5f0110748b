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

// MLP base model: a relu feature extractor followed by a linear classifier,
// plus the two optimizers used for training (SGD with momentum for the model
// weights, Adam for hyper-parameters).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "metacal/autodiff.hpp"
#include "metacal/tensor.hpp"

namespace metacal::nn {

/// y = x W + b with W [d_in x d_out] and b [d_out].
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct ModelParams {
  std::vector<Linear> theta;  // feature extractor, relu after each layer
  Linear phi;                 // classifier

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t num_classes() const;
  std::size_t parameter_count() const;

  /// theta weights/biases in layer order, then phi weight and bias.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  /// Throws ShapeError unless the layers chain and there are >= 2 classes.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

bool operator==(const Linear& a, const Linear& b);

/// He-uniform initialisation: weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)),
/// biases zero. `dims` lists the input size followed by every hidden width;
/// dims = {d} gives a linear model on the raw inputs.
ModelParams init_params(std::uint64_t seed, std::span<const std::size_t> dims, std::size_t num_classes);

struct BoundLinear {
  autodiff::Var weight;
  autodiff::Var bias;
};

/// Model parameters placed on a tape as leaves.
struct BoundParams {
  std::vector<BoundLinear> theta;
  BoundLinear phi;

  /// Same order as ModelParams::tensors().
  std::vector<autodiff::Var> vars() const;
};

BoundParams bind(autodiff::Tape& tape, const ModelParams& params, bool requires_grad = true);
BoundLinear bind(autodiff::Tape& tape, const Linear& layer, bool requires_grad = true);

autodiff::Var linear(const BoundLinear& layer, autodiff::Var x);
autodiff::Var features(const BoundParams& params, autodiff::Var x);
autodiff::Var forward(const BoundParams& params, autodiff::Var x);
autodiff::Var forward(autodiff::Tape& tape, const BoundParams& params, const Tensor& x);

/// Tape-free inference, bit-identical to the recorded forward pass.
Tensor extract_features(const ModelParams& params, const Tensor& x);
Tensor predict_logits(const ModelParams& params, const Tensor& x);
Tensor classify(const Linear& phi, const Tensor& features);

struct SgdMomentumState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor> velocity;
};

SgdMomentumState make_sgd(const ModelParams& params, double lr, double momentum = 0.9,
                          double weight_decay = 5e-4);

/// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdMomentumState& state);
void sgd_momentum_step(ModelParams& params, std::span<const Tensor> grads, SgdMomentumState& state);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam(std::span<const Tensor* const> params, double lr = 1e-3);

/// Bias-corrected Adam update.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

/// Multi-step schedule: base_lr * factor^(number of drop epochs <= epoch).
double scheduled_lr(double base_lr, std::size_t epoch, std::span<const std::size_t> drop_epochs,
                    double factor = 0.1);

// Checkpoints: JSON {"format": "metacal.params", "version": 1,
// "theta": [{"weight": T, "bias": T}, ...], "phi": {"weight": T, "bias": T}}
// with T = {"shape": [...], "data": [row-major doubles]}.
inline constexpr int kParamsFormatVersion = 1;
nlohmann::json params_to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& j);
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace metacal::nn
