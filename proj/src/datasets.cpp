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

#include "metacal/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "metacal/io.hpp"

namespace metacal::data {

void Dataset::validate() const {
  if (y.empty()) throw std::invalid_argument("dataset is empty");
  if (X.rank() != 2 || X.rows() != y.size()) {
    throw ShapeError("dataset features " + shape_str(X.shape()) + " vs " + std::to_string(y.size()) + " labels");
  }
  if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
  for (auto label : y) {
    if (label >= num_classes) throw std::out_of_range("label " + std::to_string(label) + " out of range");
  }
  if (!X.all_finite()) throw DomainError("dataset has non-finite features");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  Dataset out{Tensor({rows.size(), d}), std::vector<std::size_t>(rows.size()), num_classes, provenance};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.y[i] = y.at(rows[i]);
    std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.X.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto label : y) counts.at(label) += 1;
  return counts;
}

Dataset gen_blobs(std::uint64_t seed, std::size_t num_classes, std::size_t n, std::size_t d, double separation,
                  double label_noise) {
  if (num_classes < 2) throw std::invalid_argument("gen_blobs: need K >= 2");
  if (n < num_classes) throw std::invalid_argument("gen_blobs: need n >= K");
  if (d < 1) throw std::invalid_argument("gen_blobs: need d >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw std::invalid_argument("gen_blobs: separation must be >= 0");
  if (!(label_noise >= 0.0 && label_noise < 0.5)) throw std::invalid_argument("gen_blobs: label_noise must be in [0, 0.5)");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % num_classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  Tensor means({num_classes, d});
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (d == 1) {
      means.at(k, 0) = separation * (static_cast<double>(k) - 0.5 * static_cast<double>(num_classes - 1));
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
      means.at(k, 0) = separation * std::cos(angle);
      means.at(k, 1) = separation * std::sin(angle);
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset out{Tensor({n, d}), labels, num_classes, ""};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.X.at(i, j) = means.at(labels[i], j) + noise(rng);

  const auto flips = static_cast<std::size_t>(std::llround(label_noise * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> other(1, num_classes - 1);
  for (std::size_t f = 0; f < flips; ++f) {
    auto& label = out.y[order[f]];
    label = (label + other(rng)) % num_classes;
  }

  std::ostringstream prov;
  prov << "blobs(seed=" << seed << ",K=" << num_classes << ",n=" << n << ",d=" << d
       << ",separation=" << io::format_double(separation) << ",label_noise=" << io::format_double(label_noise) << ")";
  out.provenance = prov.str();
  return out;
}

namespace {

// Largest-remainder rounding of shares * total; ties favour lower indices.
std::vector<std::size_t> apportion(std::span<const double> shares, std::size_t total) {
  std::vector<std::size_t> out(shares.size());
  std::vector<std::pair<double, std::size_t>> rest;
  std::size_t used = 0;
  for (std::size_t s = 0; s < shares.size(); ++s) {
    const double exact = shares[s] * static_cast<double>(total);
    out[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += out[s];
    rest.emplace_back(exact - static_cast<double>(out[s]), s);
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total && i < rest.size(); ++i, ++used) out[rest[i].second] += 1;
  return out;
}

}  // namespace

std::vector<Dataset> split_dataset(const Dataset& data, std::span<const double> fractions, std::uint64_t seed) {
  data.validate();
  if (fractions.empty()) throw std::invalid_argument("split_dataset: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split_dataset: fractions must be positive");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("split_dataset: fractions must sum to 1");

  const std::size_t n = data.size(), parts = fractions.size(), k = data.num_classes;
  const auto sizes = apportion(fractions, n);
  for (std::size_t s = 0; s < parts; ++s) {
    if (sizes[s] == 0) throw std::invalid_argument("split_dataset: split " + std::to_string(s) + " would be empty");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < n; ++i) by_class[data.y[i]].push_back(i);
  for (auto& rows : by_class) std::shuffle(rows.begin(), rows.end(), rng);

  // Per-class floors, then hand each class's leftover samples to distinct
  // splits, most-needed split first, so split totals match `sizes`.
  std::vector<std::vector<std::size_t>> quota(k, std::vector<std::size_t>(parts));
  std::vector<long> need(parts);
  std::vector<std::size_t> leftover(k);
  for (std::size_t s = 0; s < parts; ++s) need[s] = static_cast<long>(sizes[s]);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t used = 0;
    for (std::size_t s = 0; s < parts; ++s) {
      quota[c][s] = static_cast<std::size_t>(std::floor(fractions[s] * static_cast<double>(by_class[c].size()) + 1e-9));
      used += quota[c][s];
      need[s] -= static_cast<long>(quota[c][s]);
    }
    leftover[c] = by_class[c].size() - used;
  }
  std::vector<std::size_t> class_order(k);
  std::iota(class_order.begin(), class_order.end(), 0);
  std::stable_sort(class_order.begin(), class_order.end(),
                   [&](std::size_t a, std::size_t b) { return leftover[a] > leftover[b]; });
  for (std::size_t c : class_order) {
    std::vector<std::size_t> splits(parts);
    std::iota(splits.begin(), splits.end(), 0);
    std::stable_sort(splits.begin(), splits.end(), [&](std::size_t a, std::size_t b) { return need[a] > need[b]; });
    for (std::size_t j = 0; j < leftover[c]; ++j) {
      quota[c][splits[j]] += 1;
      need[splits[j]] -= 1;
    }
  }

  std::vector<std::vector<std::size_t>> rows(parts);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pos = 0;
    for (std::size_t s = 0; s < parts; ++s) {
      for (std::size_t j = 0; j < quota[c][s]; ++j) rows[s].push_back(by_class[c][pos++]);
    }
  }
  std::vector<Dataset> out;
  for (std::size_t s = 0; s < parts; ++s) {
    if (rows[s].empty()) throw std::invalid_argument("split_dataset: split " + std::to_string(s) + " would be empty");
    std::sort(rows[s].begin(), rows[s].end());
    out.push_back(data.subset(rows[s]));
  }
  return out;
}

std::string to_string(CorruptionFamily f) {
  switch (f) {
    case CorruptionFamily::gauss_noise: return "gauss_noise";
    case CorruptionFamily::scale: return "scale";
    case CorruptionFamily::shift: return "shift";
    case CorruptionFamily::feature_dropout: return "feature_dropout";
  }
  return "?";
}

CorruptionFamily corruption_from_string(const std::string& name) {
  if (name == "gauss_noise") return CorruptionFamily::gauss_noise;
  if (name == "scale") return CorruptionFamily::scale;
  if (name == "shift") return CorruptionFamily::shift;
  if (name == "feature_dropout") return CorruptionFamily::feature_dropout;
  throw std::invalid_argument("unknown corruption family '" + name + "'");
}

std::string CorruptionSpec::name() const { return to_string(family) + ":" + std::to_string(severity); }

double corruption_magnitude(CorruptionFamily family, int severity) {
  static constexpr double kNoise[] = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5};
  static constexpr double kScale[] = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
  static constexpr double kShift[] = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  static constexpr double kDrop[] = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  if (severity < 0 || severity > 5) throw std::invalid_argument("corruption severity must be in 0..5");
  switch (family) {
    case CorruptionFamily::gauss_noise: return kNoise[severity];
    case CorruptionFamily::scale: return kScale[severity];
    case CorruptionFamily::shift: return kShift[severity];
    case CorruptionFamily::feature_dropout: return kDrop[severity];
  }
  return 0.0;
}

Tensor corrupt(const Tensor& X, const CorruptionSpec& spec) {
  const double s = corruption_magnitude(spec.family, spec.severity);
  if (spec.severity == 0) return X;
  const std::uint64_t stream = spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(spec.family) * 8 +
                               static_cast<std::uint64_t>(spec.severity);
  std::mt19937_64 rng(stream);
  Tensor out = X;
  switch (spec.family) {
    case CorruptionFamily::gauss_noise: {
      std::normal_distribution<double> z(0.0, s);
      for (auto& v : out.values()) v += z(rng);
      break;
    }
    case CorruptionFamily::scale:
      for (auto& v : out.values()) v *= s;
      break;
    case CorruptionFamily::shift: {
      const std::size_t d = X.cols();
      std::normal_distribution<double> z(0.0, 1.0);
      std::vector<double> dir(d);
      double norm = 0.0;
      while (norm < 1e-12) {
        norm = 0.0;
        for (auto& v : dir) {
          v = z(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
      }
      for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) += s * dir[j] / norm;
      break;
    }
    case CorruptionFamily::feature_dropout: {
      std::bernoulli_distribution drop(s);
      for (auto& v : out.values()) {
        if (drop(rng)) v = 0.0;
      }
      break;
    }
  }
  return out;
}

CorruptionSpec parse_corruption(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("corruption must look like family:severity, got '" + text + "'");
  CorruptionSpec spec;
  spec.family = corruption_from_string(text.substr(0, colon));
  const std::string sev = text.substr(colon + 1);
  int value = -1;
  auto [ptr, ec] = std::from_chars(sev.data(), sev.data() + sev.size(), value);
  if (ec != std::errc() || ptr != sev.data() + sev.size() || value < 1 || value > 5) {
    throw std::invalid_argument("corruption severity must be 1..5, got '" + sev + "'");
  }
  spec.severity = value;
  return spec;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ostringstream os;
  for (std::size_t j = 0; j < data.dim(); ++j) os << 'f' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) os << io::format_double(data.X.at(i, j)) << ',';
    os << data.y[i] << '\n';
  }
  io::write_text_atomic(path, os.str());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    const auto a = f.find_first_not_of(" \t\r");
    const auto b = f.find_last_not_of(" \t\r");
    f = a == std::string::npos ? std::string() : f.substr(a, b - a + 1);
  }
  return fields;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  const std::string where = path.string() + ":";
  if (!std::getline(in, line)) throw ParseError(where + "1: missing header");
  ++line_no;
  const auto header = split_fields(line);
  if (header.size() < 2 || header.back() != "label") {
    throw ParseError(where + "1: header must be f0,...,f{d-1},label");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) throw ParseError(where + "1: expected column f" + std::to_string(j));
  }
  std::vector<double> features;
  std::vector<std::size_t> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    const std::string at = where + std::to_string(line_no) + ": ";
    if (fields.size() != d + 1) {
      throw ParseError(at + "expected " + std::to_string(d + 1) + " columns, found " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError(at + "bad number '" + f + "' in column f" + std::to_string(j));
      }
      features.push_back(v);
    }
    std::size_t label = 0;
    const auto& f = fields[d];
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
      throw ParseError(at + "label '" + f + "' is not a non-negative integer");
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError(where + " no data rows");
  const std::size_t k = std::max<std::size_t>(2, *std::max_element(labels.begin(), labels.end()) + 1);
  Dataset out{Tensor({labels.size(), d}, std::move(features)), std::move(labels), k, path.string()};
  out.validate();
  return out;
}

}  // namespace metacal::data
