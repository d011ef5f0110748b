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

#include "metacal/report.hpp"

#include <sstream>

#include "metacal/io.hpp"

namespace metacal::report {

using nlohmann::json;

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json report_to_json(const train::RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"val_error", e.val_error},
                      {"val_ece", e.val_ece}});
  }
  json domains = json::array();
  for (const auto& d : r.domains) domains.push_back({{"name", d.name}, {"error", d.error}, {"ece", d.ece}});
  json bins = json::array();
  for (const auto& b : r.reliability.bins) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.acc}, {"conf", b.conf}, {"gap", b.gap}});
  }
  json j;
  j["format"] = kReportFormat;
  j["version"] = kReportVersion;
  j["seed"] = r.config.seed;
  j["config"] = train::config_to_json(r.config);
  j["data_provenance"] = r.data_provenance;
  j["epochs"] = std::move(epochs);
  j["best_epoch"] = r.best_epoch;
  j["test"] = {{"error", r.test.error},         {"ece", r.test.ece},   {"aece", r.test.aece},
               {"nll", r.test.nll},             {"brier", r.test.brier}, {"temperature", r.test.temperature},
               {"ece_after_temperature", r.test.ece_temp}};
  j["domains"] = std::move(domains);
  j["domain_summary"] = {{"mean_ece", r.domain_mean_ece},
                         {"worst_ece", r.domain_worst_ece},
                         {"mean_error", r.domain_mean_error}};
  j["omega"] = losses::hyper_to_json(r.omega_final);
  j["meta_updates"] = r.trajectory.size();
  j["reliability"] = std::move(bins);
  return j;
}

namespace {

const json& require(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(path + "." + key + ": missing");
  return j.at(key);
}

void expect_number(const json& j, const std::string& path, const std::string& key) {
  if (!require(j, path, key).is_number()) throw SchemaError(path + "." + key + ": expected a number");
}

void expect_count(const json& j, const std::string& path, const std::string& key) {
  if (!require(j, path, key).is_number_unsigned()) throw SchemaError(path + "." + key + ": expected a count");
}

void expect_array(const json& j, const std::string& path, const std::string& key) {
  if (!require(j, path, key).is_array()) throw SchemaError(path + "." + key + ": expected an array");
}

}  // namespace

void validate_report(const json& j) {
  const std::string root = "$";
  if (!j.is_object()) throw SchemaError("$: expected an object");
  if (require(j, root, "format") != kReportFormat) throw SchemaError("$.format: expected " + std::string(kReportFormat));
  if (require(j, root, "version") != kReportVersion) throw SchemaError("$.version: unsupported");
  expect_count(j, root, "seed");
  try {
    train::config_from_json(require(j, root, "config"));
  } catch (const train::ConfigError& e) {
    throw SchemaError(std::string("$.config: ") + e.what());
  }
  if (!require(j, root, "data_provenance").is_string()) throw SchemaError("$.data_provenance: expected a string");
  expect_array(j, root, "epochs");
  for (std::size_t i = 0; i < j["epochs"].size(); ++i) {
    const auto path = "$.epochs[" + std::to_string(i) + "]";
    const auto& e = j["epochs"][i];
    expect_count(e, path, "epoch");
    for (const char* k : {"lr", "train_loss", "val_error", "val_ece"}) expect_number(e, path, k);
  }
  expect_count(j, root, "best_epoch");
  const auto& test = require(j, root, "test");
  for (const char* k : {"error", "ece", "aece", "nll", "brier", "temperature", "ece_after_temperature"}) {
    expect_number(test, "$.test", k);
  }
  expect_array(j, root, "domains");
  for (std::size_t i = 0; i < j["domains"].size(); ++i) {
    const auto path = "$.domains[" + std::to_string(i) + "]";
    const auto& d = j["domains"][i];
    if (!require(d, path, "name").is_string()) throw SchemaError(path + ".name: expected a string");
    expect_number(d, path, "error");
    expect_number(d, path, "ece");
  }
  const auto& summary = require(j, root, "domain_summary");
  for (const char* k : {"mean_ece", "worst_ece", "mean_error"}) expect_number(summary, "$.domain_summary", k);
  try {
    losses::hyper_from_json(require(j, root, "omega"));
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(std::string("$.omega: ") + e.what());
  }
  expect_count(j, root, "meta_updates");
  expect_array(j, root, "reliability");
  for (std::size_t i = 0; i < j["reliability"].size(); ++i) {
    const auto path = "$.reliability[" + std::to_string(i) + "]";
    const auto& b = j["reliability"][i];
    expect_count(b, path, "count");
    for (const char* k : {"lo", "hi", "acc", "conf", "gap"}) expect_number(b, path, k);
  }
}

std::string trajectory_csv(const std::vector<Tensor>& trajectory) {
  std::ostringstream os;
  os << "iter,component_index,value\n";
  for (std::size_t it = 0; it < trajectory.size(); ++it) {
    for (std::size_t c = 0; c < trajectory[it].size(); ++c) {
      os << it << ',' << c << ',' << io::format_double(trajectory[it][c]) << '\n';
    }
  }
  return os.str();
}

WrittenFiles write_report(const train::RunReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io::IoError(dir.string() + ": cannot create directory: " + ec.message());
  WrittenFiles files{dir / "report.json", dir / "reliability.csv", dir / "omega_trajectory.csv"};
  const json j = report_to_json(r);
  validate_report(j);
  io::write_text_atomic(files.reliability, r.reliability.to_csv());
  io::write_text_atomic(files.trajectory, trajectory_csv(r.trajectory));
  io::write_text_atomic(files.report, dump(j));
  return files;
}

}  // namespace metacal::report
