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

// Correlation coefficients for metric-fidelity studies.

#pragma once

#include <span>
#include <vector>

namespace metacal::stats {

/// Pearson correlation; throws std::invalid_argument on length mismatch,
/// fewer than two points or a constant input.
double pearson(std::span<const double> a, std::span<const double> b);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> v);

/// Pearson correlation of the average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
/// Middle element after sorting; mean of the two middle ones for even sizes.
double median(std::span<const double> v);

}  // namespace metacal::stats
