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

// Run reports on disk: report.json (versioned schema), reliability.csv and
// omega_trajectory.csv, all written atomically.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "metacal/trainer.hpp"

namespace metacal::report {

inline constexpr const char* kReportFormat = "metacal.report";
inline constexpr int kReportVersion = 1;

/// Schema violation; the message names the offending JSON path.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json report_to_json(const train::RunReport& r);

/// Throws SchemaError unless j has every required field with the right type.
void validate_report(const nlohmann::json& j);

/// Header `iter,component_index,value`, one row per omega entry per
/// meta-update (iter counts meta-updates from 0).
std::string trajectory_csv(const std::vector<Tensor>& trajectory);

struct WrittenFiles {
  std::filesystem::path report;
  std::filesystem::path reliability;
  std::filesystem::path trajectory;
};

/// Creates dir if needed and writes the three files atomically.
WrittenFiles write_report(const train::RunReport& r, const std::filesystem::path& dir);

/// Deterministic JSON text (two-space indent, trailing newline).
std::string dump(const nlohmann::json& j);

}  // namespace metacal::report
