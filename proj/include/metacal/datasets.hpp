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

// Synthetic classification data, stratified splits, input corruptions and
// CSV ingestion.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metacal/tensor.hpp"

namespace metacal::data {

/// Malformed data file; the message names the line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor X;                        // [n x d]
  std::vector<std::size_t> y;      // n labels in [0, K)
  std::size_t num_classes = 0;
  std::string provenance;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return X.cols(); }
  /// Throws unless shapes agree, labels are in range and features finite.
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// K Gaussian clusters (unit within-class standard deviation) whose means
/// sit on a circle of radius `separation` in the first two coordinates
/// (on a line when d = 1). Class sizes are balanced; a `label_noise`
/// fraction of labels is then flipped uniformly to another class.
Dataset gen_blobs(std::uint64_t seed, std::size_t num_classes, std::size_t n, std::size_t d, double separation,
                  double label_noise);

/// Seeded stratified split. `fractions` must be positive and sum to 1; every
/// class is divided within one sample of its proportional share and split
/// sizes follow the largest-remainder rounding of fractions * n.
std::vector<Dataset> split_dataset(const Dataset& data, std::span<const double> fractions, std::uint64_t seed);

enum class CorruptionFamily { gauss_noise, scale, shift, feature_dropout };

std::string to_string(CorruptionFamily f);
CorruptionFamily corruption_from_string(const std::string& name);

struct CorruptionSpec {
  CorruptionFamily family = CorruptionFamily::gauss_noise;
  int severity = 1;  // 1..5; 0 is the identity
  std::uint64_t seed = 0;

  std::string name() const;  // e.g. "gauss_noise:3"
};

/// Severity table, index 1..5 (index 0 unused):
///   gauss_noise     additive N(0, s^2) noise, s = 0.25 0.5 0.75 1.0 1.5
///   scale           x * s, s = 0.9 0.8 0.7 0.6 0.5
///   shift           x + s u with a seeded random unit direction u, s = 0.5 1 1.5 2 2.5
///   feature_dropout each entry zeroed with probability s = 0.1 0.2 0.3 0.4 0.5
double corruption_magnitude(CorruptionFamily family, int severity);

/// Applies the corruption; a pure function of (spec, X).
Tensor corrupt(const Tensor& X, const CorruptionSpec& spec);

/// Parses "family:severity".
CorruptionSpec parse_corruption(const std::string& text);

/// CSV with header f0,...,f{d-1},label.
void save_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

}  // namespace metacal::data
