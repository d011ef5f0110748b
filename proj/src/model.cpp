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

#include "metacal/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "metacal/io.hpp"

namespace metacal::nn {

using autodiff::Tape;
using autodiff::Var;

bool operator==(const Linear& a, const Linear& b) { return a.weight == b.weight && a.bias == b.bias; }

std::size_t ModelParams::input_dim() const { return theta.empty() ? phi.weight.shape()[0] : theta.front().weight.shape()[0]; }
std::size_t ModelParams::feature_dim() const { return phi.weight.shape()[0]; }
std::size_t ModelParams::num_classes() const { return phi.weight.shape()[1]; }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& layer : theta) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  out.push_back(&phi.weight);
  out.push_back(&phi.bias);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : theta) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  out.push_back(&phi.weight);
  out.push_back(&phi.bias);
  return out;
}

namespace {

void validate_layer(const Linear& layer, std::size_t d_in, const std::string& name) {
  const Shape& w = layer.weight.shape();
  if (w.size() != 2 || w[0] != d_in) {
    throw ShapeError(name + " weight " + shape_str(w) + " does not accept input width " + std::to_string(d_in));
  }
  if (layer.bias.shape() != Shape{w[1]}) {
    throw ShapeError(name + " bias " + shape_str(layer.bias.shape()) + " does not match weight " + shape_str(w));
  }
}

Linear init_linear(std::mt19937_64& rng, std::size_t d_in, std::size_t d_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(d_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Linear layer{Tensor({d_in, d_out}), Tensor({d_out})};
  for (auto& v : layer.weight.values()) v = u(rng);
  return layer;
}

Tensor affine(const Tensor& x, const Linear& layer) {
  Tensor out = kernels::matmul(x, layer.weight);
  const std::size_t n = out.rows(), k = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) += layer.bias[j];
  return out;
}

}  // namespace

void ModelParams::validate() const {
  std::size_t width = input_dim();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    validate_layer(theta[i], width, "theta[" + std::to_string(i) + "]");
    width = theta[i].weight.shape()[1];
  }
  validate_layer(phi, width, "phi");
  if (num_classes() < 2) throw ShapeError("classifier needs at least 2 classes");
}

ModelParams init_params(std::uint64_t seed, std::span<const std::size_t> dims, std::size_t num_classes) {
  if (dims.empty()) throw std::invalid_argument("init_params: dims must list at least the input width");
  if (num_classes < 2) throw std::invalid_argument("init_params: need at least 2 classes");
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("init_params: layer widths must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) params.theta.push_back(init_linear(rng, dims[i], dims[i + 1]));
  params.phi = init_linear(rng, dims.back(), num_classes);
  return params;
}

std::vector<Var> BoundParams::vars() const {
  std::vector<Var> out;
  for (const auto& layer : theta) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  out.push_back(phi.weight);
  out.push_back(phi.bias);
  return out;
}

BoundLinear bind(Tape& tape, const Linear& layer, bool requires_grad) {
  return {tape.leaf(layer.weight, requires_grad), tape.leaf(layer.bias, requires_grad)};
}

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundParams out;
  for (const auto& layer : params.theta) out.theta.push_back(bind(tape, layer, requires_grad));
  out.phi = bind(tape, params.phi, requires_grad);
  return out;
}

Var linear(const BoundLinear& layer, Var x) { return autodiff::matmul(x, layer.weight) + layer.bias; }

Var features(const BoundParams& params, Var x) {
  Var h = x;
  for (const auto& layer : params.theta) h = autodiff::relu(linear(layer, h));
  return h;
}

Var forward(const BoundParams& params, Var x) { return linear(params.phi, features(params, x)); }

Var forward(Tape& tape, const BoundParams& params, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("forward expects a batch matrix, got " + shape_str(x.shape()));
  const std::size_t d = params.theta.empty() ? params.phi.weight.shape()[0] : params.theta.front().weight.shape()[0];
  if (x.cols() != d) {
    throw ShapeError("input width " + std::to_string(x.cols()) + " does not match model input " + std::to_string(d));
  }
  return forward(params, tape.constant(x));
}

Tensor extract_features(const ModelParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != params.input_dim()) {
    throw ShapeError("input " + shape_str(x.shape()) + " does not match model input width " +
                     std::to_string(params.input_dim()));
  }
  Tensor h = x;
  for (const auto& layer : params.theta) {
    h = affine(h, layer);
    for (auto& v : h.values()) v = v > 0.0 ? v : 0.0;
  }
  return h;
}

Tensor classify(const Linear& phi, const Tensor& features) { return affine(features, phi); }

Tensor predict_logits(const ModelParams& params, const Tensor& x) {
  return classify(params.phi, extract_features(params, x));
}

// ---------------------------------------------------------------------------
// Optimizers

namespace {

void check_grads(std::span<Tensor* const> params, std::span<const Tensor> grads, const char* who) {
  if (params.size() != grads.size()) {
    throw ShapeError(std::string(who) + ": " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError(std::string(who) + ": gradient " + shape_str(grads[i].shape()) + " vs parameter " +
                       shape_str(params[i]->shape()));
    }
    if (!grads[i].all_finite()) throw DomainError(std::string(who) + ": non-finite gradient");
  }
}

}  // namespace

SgdMomentumState make_sgd(const ModelParams& params, double lr, double momentum, double weight_decay) {
  SgdMomentumState state{lr, momentum, weight_decay, {}};
  for (const Tensor* t : params.tensors()) state.velocity.push_back(zeros_like(*t));
  return state;
}

void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdMomentumState& state) {
  check_grads(params, grads, "sgd_momentum_step");
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_momentum_step: velocity buffers do not match");
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    Tensor& v = state.velocity[p];
    const Tensor& g = grads[p];
    if (v.shape() != w.shape()) throw ShapeError("sgd_momentum_step: velocity shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state.momentum * v[i] + (g[i] + state.weight_decay * w[i]);
      w[i] -= state.lr * v[i];
    }
  }
}

void sgd_momentum_step(ModelParams& params, std::span<const Tensor> grads, SgdMomentumState& state) {
  auto ptrs = params.tensors();
  sgd_momentum_step(ptrs, grads, state);
}

AdamState make_adam(std::span<const Tensor* const> params, double lr) {
  AdamState state;
  state.lr = lr;
  for (const Tensor* t : params) {
    state.m.push_back(zeros_like(*t));
    state.v.push_back(zeros_like(*t));
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  check_grads(params, grads, "adam_step");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double scheduled_lr(double base_lr, std::size_t epoch, std::span<const std::size_t> drop_epochs, double factor) {
  double lr = base_lr;
  for (auto e : drop_epochs) {
    if (epoch >= e) lr *= factor;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json linear_to_json(const Linear& layer) {
  return {{"weight", io::tensor_to_json(layer.weight)}, {"bias", io::tensor_to_json(layer.bias)}};
}

Linear linear_from_json(const nlohmann::json& j) {
  return {io::tensor_from_json(j.at("weight")), io::tensor_from_json(j.at("bias"))};
}

}  // namespace

nlohmann::json params_to_json(const ModelParams& params) {
  nlohmann::json theta = nlohmann::json::array();
  for (const auto& layer : params.theta) theta.push_back(linear_to_json(layer));
  return {{"format", "metacal.params"},
          {"version", kParamsFormatVersion},
          {"theta", theta},
          {"phi", linear_to_json(params.phi)}};
}

ModelParams params_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "metacal.params") throw std::invalid_argument("not a metacal.params document");
  if (j.value("version", 0) != kParamsFormatVersion) {
    throw std::invalid_argument("unsupported params version " + std::to_string(j.value("version", 0)));
  }
  ModelParams params;
  for (const auto& layer : j.at("theta")) params.theta.push_back(linear_from_json(layer));
  params.phi = linear_from_json(j.at("phi"));
  params.validate();
  return params;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  io::write_text_atomic(path, params_to_json(params).dump() + "\n");
}

ModelParams load_params(const std::filesystem::path& path) {
  return params_from_json(nlohmann::json::parse(io::read_text(path)));
}

}  // namespace metacal::nn
