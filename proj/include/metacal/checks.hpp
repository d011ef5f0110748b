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

// Finite-difference check suites shared by the grad-check and
// hypergrad-check commands.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metacal/trainer.hpp"

namespace metacal::checks {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Every differentiable tape op on random inputs kept at least 1e-3 away
/// from relu/abs/clamp/max kinks, plus a second-order (create-graph) case.
std::vector<CheckResult> autodiff_op_checks(std::uint64_t seed, double tol = 1e-5);

/// DECE end to end on random logit batches whose confidences avoid bin
/// edges and whose logits differ pairwise, so no kink is crossed by h.
std::vector<CheckResult> dece_checks(std::uint64_t seed, std::size_t batches = 10, double tol = 1e-4);

/// Hypergradient against central differences on a 2-8-4 model for scalar
/// LS, vector LS and unit-wise L2; then an inner learning rate of 0 must
/// give an exactly zero hypergradient.
std::vector<CheckResult> hypergrad_checks(std::uint64_t seed, train::MetaObjective objective, double tol = 1e-3);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace metacal::checks
