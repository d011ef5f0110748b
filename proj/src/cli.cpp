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

#include "metacal/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "metacal/checks.hpp"
#include "metacal/io.hpp"
#include "metacal/report.hpp"
#include "metacal/stats.hpp"
#include "metacal/trainer.hpp"

namespace metacal::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Raised for check suites that ran but failed.
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file (see the key list below)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key, key=value (repeatable; wins over --config)");
  cmd->add_option("--seed", c.seed, "shorthand for --set seed=N");
  cmd->add_option("--out", c.out, std::string("output directory (default $") + kOutEnv + " or " + kDefaultOut + ")");
}

json load_config_json(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    j = json::parse(io::read_text(c.config_path), nullptr, false);
    if (j.is_discarded()) throw train::ConfigError(c.config_path + ": not valid JSON");
  }
  for (const auto& o : c.overrides) train::apply_override(j, o);
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

train::TrainConfig load_config(const Common& c) { return train::config_from_json(load_config_json(c)); }

fs::path out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') return env;
  return kDefaultOut;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError(dir.string() + ": cannot create directory: " + ec.message());
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw train::ConfigError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (seeds.empty()) throw train::ConfigError("--seeds: empty list");
  return seeds;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_json(const fs::path& path, const json& j) { io::write_text_atomic(path, report::dump(j)); }

// Writes report files plus the selected checkpoint and final omega.
void write_run(const train::RunReport& r, const fs::path& dir) {
  report::write_report(r, dir);
  nn::save_params(r.params, dir / "params.json");
  losses::save_hyper(r.omega_final, dir / "omega.json");
}

std::string run_summary(const train::RunReport& r) {
  std::string s = "seed " + std::to_string(r.config.seed) + ": test error " + fmt(r.test.error) + " ece " +
                  fmt(r.test.ece) + " aece " + fmt(r.test.aece) + " ece_after_temperature " + fmt(r.test.ece_temp);
  if (!r.domains.empty()) s += " domain_mean_ece " + fmt(r.domain_mean_ece) + " domain_worst_ece " + fmt(r.domain_worst_ece);
  return s;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c, bool with_domains, std::ostream& out) {
  const auto cfg = load_config(c);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto splits = train::prepare_data(cfg);
  data::save_csv(splits.train, dir / "train.csv");
  data::save_csv(splits.val, dir / "val.csv");
  data::save_csv(splits.metaval, dir / "metaval.csv");
  data::save_csv(splits.test, dir / "test.csv");
  json domains = json::array();
  if (with_domains) {
    for (std::size_t i = 0; i < cfg.test_corruptions.size(); ++i) {
      auto spec = data::parse_corruption(cfg.test_corruptions[i]);
      spec.seed = cfg.seed + i;
      data::Dataset d = splits.test;
      d.X = data::corrupt(d.X, spec);
      std::string name = cfg.test_corruptions[i];
      std::replace(name.begin(), name.end(), ':', '_');
      data::save_csv(d, dir / ("test_" + name + ".csv"));
      domains.push_back(cfg.test_corruptions[i]);
    }
  }
  write_json(dir / "data.json", {{"config", train::config_to_json(cfg)},
                                 {"provenance", splits.train.provenance},
                                 {"sizes",
                                  {{"train", splits.train.size()},
                                   {"val", splits.val.size()},
                                   {"metaval", splits.metaval.size()},
                                   {"test", splits.test.size()}}},
                                 {"domains", domains}});
  out << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.metaval.size() << "/"
      << splits.test.size() << " train/val/metaval/test rows to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, bool multi_domain, const std::string& seeds_text, bool save_epochs, std::ostream& out) {
  json base = load_config_json(c);
  if (multi_domain) base["multi_domain"] = true;
  std::vector<std::uint64_t> seeds;
  if (!seeds_text.empty()) {
    seeds = parse_seeds(seeds_text);
  } else {
    seeds.push_back(train::config_from_json(base).seed);
  }
  const auto dir = out_dir(c);
  ensure_dir(dir);
  json runs = json::array();
  std::vector<double> ece, err, dom;
  for (auto seed : seeds) {
    json j = base;
    j["seed"] = seed;
    const auto cfg = train::config_from_json(j);
    const fs::path run_dir = seeds_text.empty() ? dir : dir / ("seed_" + std::to_string(seed));
    const auto data = train::prepare_data(cfg);
    train::EpochHook hook;
    if (save_epochs) {
      ensure_dir(run_dir / "checkpoints");
      hook = [&](std::size_t epoch, const nn::ModelParams& p) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu.json", epoch);
        nn::save_params(p, run_dir / "checkpoints" / name);
      };
    }
    const auto r = train::run_training(cfg, data, hook);
    write_run(r, run_dir);
    out << run_summary(r) << "\n";
    ece.push_back(r.test.ece);
    err.push_back(r.test.error);
    dom.push_back(r.domain_mean_ece);
    runs.push_back({{"seed", seed},
                    {"dir", run_dir.lexically_relative(dir).string()},
                    {"test_error", r.test.error},
                    {"test_ece", r.test.ece},
                    {"domain_mean_ece", r.domain_mean_ece}});
  }
  if (!seeds_text.empty()) {
    write_json(dir / "summary.json", {{"runs", runs},
                                      {"median_test_ece", stats::median(ece)},
                                      {"median_test_error", stats::median(err)},
                                      {"median_domain_mean_ece", stats::median(dom)}});
    out << "median over " << seeds.size() << " seeds: test error " << fmt(stats::median(err)) << " ece "
        << fmt(stats::median(ece)) << " domain_mean_ece " << fmt(stats::median(dom)) << "\n";
  }
  return 0;
}

struct Method {
  std::string name;
  std::string description;
  std::function<void(json&)> apply;
  std::optional<double> fixed_smoothing;
};

std::vector<Method> ablation_methods(bool baselines) {
  std::vector<Method> m = {
      {"M0", "cross-entropy", [](json& j) { j["meta_objective"] = "none"; }, {}},
      {"M1", "multi-task cross-entropy + DECE, no meta-learning",
       [](json& j) {
         j["meta_objective"] = "none";
         j["base_loss"] = "ce_dece";
       },
       {}},
      {"M2", "meta-learned smoothing, cross-entropy meta-objective", [](json& j) { j["meta_objective"] = "ce"; }, {}},
      {"M3", "meta-learned smoothing, MMCE meta-objective", [](json& j) { j["meta_objective"] = "mmce"; }, {}},
      {"M4", "meta-learned smoothing, DECE meta-objective", [](json& j) { j["meta_objective"] = "dece"; }, {}},
  };
  if (baselines) {
    auto plain = [](const char* loss) {
      return [loss](json& j) {
        j["meta_objective"] = "none";
        j["base_loss"] = loss;
      };
    };
    m.push_back({"brier", "Brier score loss", plain("brier"), {}});
    m.push_back({"focal", "focal loss with focal_gamma", plain("focal"), {}});
    m.push_back({"flsd53", "sample-dependent focal loss (gamma 5 below p=0.2, else 3)", plain("flsd53"), {}});
    m.push_back({"ls_0.05", "fixed label smoothing 0.05",
                 [](json& j) {
                   j["meta_objective"] = "none";
                   j["hyper_kind"] = "ls_scalar";
                 },
                 0.05});
  }
  return m;
}

int cmd_ablate(const Common& c, const std::string& seeds_text, bool baselines, std::ostream& out) {
  const json base = load_config_json(c);
  train::config_from_json(base);
  const auto seeds = parse_seeds(seeds_text);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  std::ostringstream csv;
  csv << "method,seed,error,ece,aece,nll,brier,ece_after_temperature,domain_mean_ece\n";
  json methods = json::array();
  for (const auto& m : ablation_methods(baselines)) {
    std::vector<double> ece, err, aece, dom;
    for (auto seed : seeds) {
      json j = base;
      j["seed"] = seed;
      m.apply(j);
      const auto cfg = train::config_from_json(j);
      const auto data = train::prepare_data(cfg);
      std::optional<losses::HyperParams> fixed;
      if (m.fixed_smoothing) {
        fixed = losses::HyperParams{losses::HyperKind::ls_scalar, Tensor::vector({*m.fixed_smoothing})};
      }
      const auto r = train::run_training(cfg, data, {}, fixed);
      csv << m.name << ',' << seed << ',' << io::format_double(r.test.error) << ',' << io::format_double(r.test.ece)
          << ',' << io::format_double(r.test.aece) << ',' << io::format_double(r.test.nll) << ','
          << io::format_double(r.test.brier) << ',' << io::format_double(r.test.ece_temp) << ','
          << io::format_double(r.domain_mean_ece) << '\n';
      ece.push_back(r.test.ece);
      err.push_back(r.test.error);
      aece.push_back(r.test.aece);
      dom.push_back(r.domain_mean_ece);
    }
    methods.push_back({{"name", m.name},
                       {"description", m.description},
                       {"median_ece", stats::median(ece)},
                       {"median_error", stats::median(err)},
                       {"median_aece", stats::median(aece)},
                       {"median_domain_mean_ece", stats::median(dom)}});
    out << m.name << " (" << m.description << "): median test error " << fmt(stats::median(err)) << " ece "
        << fmt(stats::median(ece)) << "\n";
  }
  io::write_text_atomic(dir / "ablation.csv", csv.str());
  write_json(dir / "ablation.json", {{"config", base}, {"seeds", seeds}, {"methods", methods}});
  return 0;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw train::ConfigError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw train::ConfigError(dir.string() + ": no checkpoint files");
  return files;
}

int cmd_metric_compare(const Common& c, const std::string& checkpoints, std::size_t batches, std::size_t batch_size,
                       std::ostream& out) {
  const auto cfg = load_config(c);
  if (batch_size < 1 || batches < 1) throw train::ConfigError("--batches and --batch-size must be positive");
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto data = train::prepare_data(cfg);
  fs::path ckpt_dir = checkpoints;
  if (checkpoints.empty()) {
    ckpt_dir = dir / "checkpoints";
    ensure_dir(ckpt_dir);
    train::run_training(cfg, data, [&](std::size_t epoch, const nn::ModelParams& p) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.json", epoch);
      nn::save_params(p, ckpt_dir / name);
    });
  }
  std::mt19937_64 rng(cfg.seed);
  std::ostringstream csv;
  csv << "checkpoint,batch,ece,dece,sbece\n";
  std::vector<double> ece, dece, sbece;
  std::vector<double> ckpt_ece, ckpt_dece, ckpt_sbece;
  for (const auto& file : list_checkpoints(ckpt_dir)) {
    const std::size_t first = ece.size();
    const auto params = nn::load_params(file);
    const Tensor logits = nn::predict_logits(params, data.test.X);
    std::vector<std::size_t> order(data.test.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t b = 0; b < batches; ++b) {
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t n = std::min(batch_size, order.size());
      std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
      Tensor z({n, logits.cols()});
      std::vector<std::size_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < logits.cols(); ++k) z.at(i, k) = logits.at(rows[i], k);
        y[i] = data.test.y[rows[i]];
      }
      const double e = calib::ece_with_bins(calib::PredictionBatch::from_logits(z, y), cfg.dece.num_bins).ece;
      const double d = calib::dece(z, y, cfg.dece);
      const double s = calib::sb_ece(z, y, cfg.dece);
      csv << file.filename().string() << ',' << b << ',' << io::format_double(e) << ',' << io::format_double(d) << ','
          << io::format_double(s) << '\n';
      ece.push_back(e);
      dece.push_back(d);
      sbece.push_back(s);
    }
    auto tail_mean = [first](const std::vector<double>& v) {
      return stats::mean(std::span(v).subspan(first));
    };
    ckpt_ece.push_back(tail_mean(ece));
    ckpt_dece.push_back(tail_mean(dece));
    ckpt_sbece.push_back(tail_mean(sbece));
  }
  io::write_text_atomic(dir / "metric_compare.csv", csv.str());
  const json summary = {{"rows", ece.size()},
                        {"pearson_dece_ece", stats::pearson(dece, ece)},
                        {"spearman_dece_ece", stats::spearman(dece, ece)},
                        {"pearson_sbece_ece", stats::pearson(sbece, ece)},
                        {"spearman_sbece_ece", stats::spearman(sbece, ece)},
                        {"checkpoints", ckpt_ece.size()},
                        {"checkpoint_pearson_dece_ece", stats::pearson(ckpt_dece, ckpt_ece)},
                        {"checkpoint_spearman_dece_ece", stats::spearman(ckpt_dece, ckpt_ece)},
                        {"mean_ece", stats::mean(ece)},
                        {"mean_dece", stats::mean(dece)},
                        {"mean_sbece", stats::mean(sbece)}};
  write_json(dir / "metric_compare.json", summary);
  out << "rows " << ece.size() << " pearson(dece, ece) " << fmt(summary["pearson_dece_ece"]) << " spearman(dece, ece) "
      << fmt(summary["spearman_dece_ece"]) << " per checkpoint " << fmt(summary["checkpoint_pearson_dece_ece"]) << " "
      << fmt(summary["checkpoint_spearman_dece_ece"]) << " mean ece " << fmt(summary["mean_ece"]) << " mean dece "
      << fmt(summary["mean_dece"]) << "\n";
  return 0;
}

int cmd_reliability(const Common& c, const std::string& params_path, std::ostream& out) {
  const auto cfg = load_config(c);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto data = train::prepare_data(cfg);
  const auto params = nn::load_params(params_path);
  calib::BinStats bins;
  const auto m = train::evaluate(params, data.test, data.val, cfg.eval_bins, &bins);
  const Tensor probs = calib::apply_temperature(nn::predict_logits(params, data.test.X), m.temperature);
  const auto after = calib::ece_with_bins({probs, data.test.y}, cfg.eval_bins);
  io::write_text_atomic(dir / "reliability.csv", bins.to_csv());
  io::write_text_atomic(dir / "reliability_temperature.csv", after.bins.to_csv());
  write_json(dir / "reliability.json", {{"bins", cfg.eval_bins},
                                        {"test_error", m.error},
                                        {"ece", m.ece},
                                        {"temperature", m.temperature},
                                        {"ece_after_temperature", m.ece_temp}});
  out << "ece " << fmt(m.ece) << " temperature " << fmt(m.temperature) << " ece_after_temperature "
      << fmt(m.ece_temp) << "\n";
  return 0;
}

int cmd_temp_scale(const Common& c, const std::string& params_path, std::ostream& out) {
  const auto cfg = load_config(c);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto data = train::prepare_data(cfg);
  const auto params = nn::load_params(params_path);
  const Tensor val_logits = nn::predict_logits(params, data.val.X);
  const Tensor test_logits = nn::predict_logits(params, data.test.X);
  const auto fit = calib::fit_temperature(val_logits, data.val.y);
  const Tensor scaled = calib::apply_temperature(test_logits, fit.temperature);  // probabilities
  const auto before_batch = calib::PredictionBatch::from_logits(test_logits, data.test.y);
  const calib::PredictionBatch after_batch{scaled, data.test.y};
  const bool aece_ok = data.test.size() >= cfg.eval_bins;
  const json j = {{"temperature", fit.temperature},
                  {"val_nll_before", calib::nll_at_temperature(val_logits, data.val.y, 1.0)},
                  {"val_nll_after", fit.nll},
                  {"test_ece_before", calib::ece_with_bins(before_batch, cfg.eval_bins).ece},
                  {"test_ece_after", calib::ece_with_bins(after_batch, cfg.eval_bins).ece},
                  {"test_aece_before", aece_ok ? calib::aece(before_batch, cfg.eval_bins) : 0.0},
                  {"test_aece_after", aece_ok ? calib::aece(after_batch, cfg.eval_bins) : 0.0},
                  {"test_nll_before", calib::nll_at_temperature(test_logits, data.test.y, 1.0)},
                  {"test_nll_after", calib::nll_at_temperature(test_logits, data.test.y, fit.temperature)}};
  write_json(dir / "temp_scale.json", j);
  out << "temperature " << fmt(fit.temperature) << " test ece " << fmt(j["test_ece_before"]) << " -> "
      << fmt(j["test_ece_after"]) << "\n";
  return 0;
}

json check_json(const std::vector<checks::CheckResult>& results) {
  json a = json::array();
  for (const auto& r : results) {
    a.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance}, {"passed", r.passed}});
  }
  return a;
}

void print_checks(const std::vector<checks::CheckResult>& results, std::ostream& out) {
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s max_rel_error %.3e tol %.0e %s\n", r.name.c_str(), r.max_rel_error,
                  r.tolerance, r.passed ? "PASS" : "FAIL");
    out << line;
  }
}

int cmd_grad_check(const Common& c, std::ostream& out) {
  const auto cfg = load_config(c);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto ops = checks::autodiff_op_checks(cfg.seed);
  const auto dece = checks::dece_checks(cfg.seed);
  print_checks(ops, out);
  print_checks(dece, out);
  const bool ok = checks::all_passed(ops) && checks::all_passed(dece);
  write_json(dir / "grad_check.json", {{"seed", cfg.seed}, {"ops", check_json(ops)}, {"dece", check_json(dece)}, {"passed", ok}});
  out << (ok ? "PASS" : "FAIL") << "\n";
  if (!ok) throw CheckFailure("gradient check failed");
  return 0;
}

int cmd_hypergrad_check(const Common& c, double tol, std::ostream& out) {
  const auto cfg = load_config(c);
  if (!cfg.meta_enabled()) throw train::ConfigError("hypergrad-check needs a meta objective");
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto results = checks::hypergrad_checks(cfg.seed, cfg.meta_objective, tol);
  print_checks(results, out);
  const bool ok = checks::all_passed(results);
  double worst = 0.0;
  for (const auto& r : results) {
    if (r.tolerance > 0.0) worst = std::max(worst, r.max_rel_error);
  }
  write_json(dir / "hypergrad_check.json", {{"seed", cfg.seed},
                                            {"objective", train::to_string(cfg.meta_objective)},
                                            {"checks", check_json(results)},
                                            {"max_rel_error", worst},
                                            {"passed", ok}});
  out << "max relative error " << worst << " at tol " << tol << ": " << (ok ? "PASS" : "FAIL") << "\n";
  if (!ok) throw CheckFailure("hypergradient check failed");
  return 0;
}

int cmd_retrain(const Common& c, const std::string& omega_path, std::ostream& out) {
  const auto cfg = load_config(c);
  losses::HyperParams omega;
  try {
    omega = losses::load_hyper(omega_path);
  } catch (const io::IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw train::ConfigError(omega_path + ": " + e.what());
  }
  const auto dir = out_dir(c);
  const auto r = train::retrain_with_fixed_hparams(omega, cfg, train::prepare_data(cfg));
  write_run(r, dir);
  out << run_summary(r) << "\n";
  return 0;
}

void print_error(std::ostream& err, const char* kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"metacal: calibration metrics and meta-calibration training on synthetic data"};
  app.name("metacal");
  app.require_subcommand(1);
  app.footer("Config keys and defaults ([published setting ...] marks values taken from the reference setup):\n" +
             train::describe_config());

  Common common;
  bool with_domains = false, multi_domain = false, save_epochs = false, baselines = false;
  std::string seeds, ablate_seeds = "0,1,2,3,4", checkpoints, params_path, omega_path;
  std::size_t batches = 20, batch_size = 128;
  double tol = 1e-3;

  auto* gen = app.add_subcommand("gen-data", "write the train/val/meta-val/test splits as CSV");
  add_common(gen, common);
  gen->add_flag("--domains", with_domains, "also write every held-out corrupted test domain");

  auto* trn = app.add_subcommand("train", "train one model (meta-calibration unless meta_objective=none)");
  add_common(trn, common);
  trn->add_flag("--multi-domain", multi_domain, "corrupt meta-validation batches (same as --set multi_domain=true)");
  trn->add_option("--seeds", seeds, "comma-separated seeds, run one after another into seed_<N>/");
  trn->add_flag("--save-epochs", save_epochs, "keep a checkpoint after every epoch under checkpoints/");

  auto* abl = app.add_subcommand("ablate", "M0-M4 ablation over several seeds");
  add_common(abl, common);
  abl->add_option("--seeds", ablate_seeds, "comma-separated seeds")->capture_default_str();
  abl->add_flag("--baselines", baselines, "add Brier, focal, FLSD-53 and fixed label smoothing 0.05");

  auto* cmp = app.add_subcommand("metric-compare", "DECE and SB-ECE against ECE over checkpoints and minibatches");
  add_common(cmp, common);
  cmp->add_option("--checkpoints", checkpoints, "directory of checkpoint JSON files (default: train one run and keep every epoch)");
  cmp->add_option("--batches", batches, "minibatches per checkpoint")->capture_default_str();
  cmp->add_option("--batch-size", batch_size, "minibatch size")->capture_default_str();

  auto* rel = app.add_subcommand("reliability", "reliability diagram bins of a checkpoint on the test split");
  add_common(rel, common);
  rel->add_option("--params", params_path, "checkpoint JSON")->required()->check(CLI::ExistingFile);

  auto* gck = app.add_subcommand("grad-check", "finite-difference checks of every tape op and of DECE");
  add_common(gck, common);

  auto* hck = app.add_subcommand("hypergrad-check", "finite-difference check of the meta-gradient on a 2-8-4 model");
  add_common(hck, common);
  hck->add_option("--tol", tol, "relative tolerance")->capture_default_str();

  auto* ret = app.add_subcommand("retrain", "plain training on train + meta-val with omega frozen");
  add_common(ret, common);
  ret->add_option("--omega", omega_path, "omega.json from an earlier run")->required()->check(CLI::ExistingFile);

  auto* tmp = app.add_subcommand("temp-scale", "temperature scaling of a checkpoint: fit on val, report on test");
  add_common(tmp, common);
  tmp->add_option("--params", params_path, "checkpoint JSON")->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, with_domains, out);
    if (trn->parsed()) return cmd_train(common, multi_domain, seeds, save_epochs, out);
    if (abl->parsed()) return cmd_ablate(common, ablate_seeds, baselines, out);
    if (cmp->parsed()) return cmd_metric_compare(common, checkpoints, batches, batch_size, out);
    if (rel->parsed()) return cmd_reliability(common, params_path, out);
    if (gck->parsed()) return cmd_grad_check(common, out);
    if (hck->parsed()) return cmd_hypergrad_check(common, tol, out);
    if (ret->parsed()) return cmd_retrain(common, omega_path, out);
    if (tmp->parsed()) return cmd_temp_scale(common, params_path, out);
  } catch (const train::ConfigError& e) {
    print_error(err, "config", e.what());
    return 2;
  } catch (const CheckFailure& e) {
    print_error(err, "check", e.what());
    return 1;
  } catch (const io::IoError& e) {
    print_error(err, "io", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "runtime", e.what());
    return 1;
  }
  print_error(err, "usage", "no subcommand");
  return 2;
}

int run_command(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace metacal::cli
