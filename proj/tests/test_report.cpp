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

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "metacal/io.hpp"
#include "metacal/report.hpp"
#include "metacal/stats.hpp"
#include "oracles.hpp"

using namespace metacal;
namespace fs = std::filesystem;

namespace {

train::RunReport small_run() {
  train::TrainConfig cfg;
  cfg.task_n = 400;
  cfg.test_n = 200;
  cfg.hidden = {8};
  cfg.epochs = 2;
  return train::run_training(cfg, train::prepare_data(cfg));
}

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("pearson and spearman") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(50), b(50);
    for (std::size_t i = 0; i < 50; ++i) {
      a[i] = n01(rng);
      b[i] = a[i] + n01(rng);
    }
    CHECK(stats::pearson(a, b) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-12));
    // Spearman is invariant under monotone transforms.
    std::vector<double> c(b);
    for (auto& v : c) v = std::exp(v);
    CHECK(stats::spearman(a, c) == doctest::Approx(stats::spearman(a, b)).epsilon(1e-12));
  }
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, r{4, 3, 2, 1};
  CHECK(stats::pearson(x, y) == doctest::Approx(1.0));
  CHECK(stats::spearman(x, r) == doctest::Approx(-1.0));
  const std::vector<double> tied{1, 2, 2, 3};
  CHECK(stats::average_ranks(tied) == std::vector<double>{1, 2.5, 2.5, 4});
  const std::vector<double> constant{1, 1, 1, 1};
  CHECK_THROWS(stats::pearson(x, constant));
  const std::vector<double> odd{3, 1, 2}, even{4, 1, 3, 2};
  CHECK(stats::median(odd) == 2.0);
  CHECK(stats::median(even) == 2.5);
}

TEST_CASE("report JSON passes its own validator and echoes the config") {
  const auto r = small_run();
  const auto j = report::report_to_json(r);
  CHECK_NOTHROW(report::validate_report(j));
  CHECK(j.at("config") == train::config_to_json(r.config));
  CHECK(j.at("seed") == r.config.seed);
  CHECK(j.at("epochs").size() == 2);
  CHECK(j.at("reliability").size() == r.config.eval_bins);
  CHECK(losses::hyper_from_json(j.at("omega")) == r.omega_final);
  CHECK(report::dump(j) == report::dump(report::report_to_json(r)));

  auto missing = j;
  missing["test"].erase("ece");
  CHECK_THROWS_WITH_AS(report::validate_report(missing), "$.test.ece: missing", report::SchemaError);
  auto wrong = j;
  wrong["epochs"][1]["val_ece"] = "high";
  CHECK_THROWS_AS(report::validate_report(wrong), report::SchemaError);
  auto version = j;
  version["version"] = 99;
  CHECK_THROWS_AS(report::validate_report(version), report::SchemaError);
  auto config = j;
  config["config"]["mystery"] = 1;
  CHECK_THROWS_AS(report::validate_report(config), report::SchemaError);
}

TEST_CASE("write_report produces the three files") {
  const auto r = small_run();
  const auto dir = scratch("metacal_report_test");
  const auto files = report::write_report(r, dir / "nested");
  CHECK(count_lines(files.reliability) == r.config.eval_bins + 1);
  const std::size_t k = r.omega_final.values.size();
  CHECK(count_lines(files.trajectory) == r.trajectory.size() * k + 1);
  std::ifstream in(files.trajectory);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "iter,component_index,value");
  CHECK(first.rfind("0,0,", 0) == 0);
  const auto j = nlohmann::json::parse(io::read_text(files.report));
  CHECK_NOTHROW(report::validate_report(j));
  for (const auto& e : fs::directory_iterator(dir / "nested")) CHECK(e.path().extension() != ".tmp");
  fs::remove_all(dir);
}

TEST_CASE("a failed write leaves the previous report in place") {
  const auto r = small_run();
  const auto dir = scratch("metacal_atomic_test");
  io::write_text_atomic(dir / "report.json", "previous\n");
  fs::create_directories(dir / "report.json.tmp");  // blocks the temporary file
  CHECK_THROWS_AS(report::write_report(r, dir), io::IoError);
  CHECK(io::read_text(dir / "report.json") == "previous\n");
  fs::remove_all(dir);
}

TEST_CASE("trajectory CSV format") {
  std::vector<Tensor> t{Tensor::vector({0.0, 0.5}), Tensor::vector({0.25, 1.0})};
  CHECK(report::trajectory_csv(t) == "iter,component_index,value\n0,0,0\n0,1,0.5\n1,0,0.25\n1,1,1\n");
}
