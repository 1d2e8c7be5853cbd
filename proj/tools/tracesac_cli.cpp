// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0

// tracesac: data preparation, training, evaluation, aggregation and
// self-checks. Exit codes: 0 success, 1 configuration or input error,
// 2 failed check.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tracesac/tracesac.hpp"

namespace fs = std::filesystem;
using namespace tracesac;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitCheck = 2;

void write_json(const fs::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Json dataset_summary(const Dataset& data) {
  Json j;
  j["rows"] = data.size();
  j["feature_count"] = data.feature_count();
  if (data.size() > 0) {
    j["first_timestamp"] = data.bars.front().timestamp;
    j["last_timestamp"] = data.bars.back().timestamp;
  }
  return j;
}

fs::path output_dir(const std::string& flag, const RunConfig* cfg) {
  if (!flag.empty()) return flag;
  if (cfg && !cfg->out.empty()) return cfg->out;
  throw ConfigError("out: no output directory (pass --out or set \"out\" in the config)");
}

int cmd_ingest(const std::string& input, const std::string& config_path, int feature_count, const std::string& out_flag) {
  std::optional<RunConfig> cfg;
  std::string path = input;
  if (!config_path.empty()) {
    cfg = load_run_config(config_path);
    if (path.empty()) {
      if (!cfg->data.csv_path) throw ConfigError("data.csv: ingest needs a CSV source");
      path = *cfg->data.csv_path;
      feature_count = cfg->data.feature_count;
    }
  }
  if (path.empty()) throw ConfigError("ingest: pass an input CSV or --config");
  if (!fs::exists(path)) throw ConfigError("input file '" + path + "' does not exist");
  const Dataset data = ingest_csv(path, CsvSchema{feature_count});
  const fs::path out = output_dir(out_flag, cfg ? &*cfg : nullptr);
  fs::create_directories(out);
  write_csv((out / "data.csv").string(), data);
  Json sidecar;
  sidecar["source"] = fs::absolute(path).string();
  sidecar["dataset"] = dataset_summary(data);
  if (cfg) sidecar["config"] = cfg->source;
  write_json(out / "data.json", sidecar);
  std::cout << "ingested " << data.size() << " bars with " << data.feature_count() << " features into "
            << (out / "data.csv").string() << '\n';
  return kExitOk;
}

int cmd_synth(const std::string& config_path, const std::string& kind, std::size_t length,
              std::optional<std::uint64_t> seed, const std::string& out_flag) {
  DataSource source;
  std::optional<RunConfig> cfg;
  if (!config_path.empty()) {
    cfg = load_run_config(config_path);
    if (cfg->data.csv_path) throw ConfigError("data.synth: synth needs a synthetic data source");
    source = cfg->data;
    if (source.length == 0) source.length = required_length(cfg->separation);
  } else {
    source.length = required_length(SeparationConfig{});
  }
  if (!kind.empty()) source.kind = market_kind_from_string(kind);
  if (length) source.length = length;
  if (seed) source.seed = *seed;
  const Dataset data = synthesize_market(source.kind, source.length, source.params, source.seed);

  const fs::path out = output_dir(out_flag, cfg ? &*cfg : nullptr);
  fs::create_directories(out);
  write_csv((out / "market.csv").string(), data);
  Json sidecar;
  sidecar["synth"] = {{"kind", to_string(source.kind)},
                      {"length", source.length},
                      {"seed", source.seed},
                      {"base", source.params.base},
                      {"half_spread", source.params.half_spread},
                      {"amplitude", source.params.amplitude},
                      {"period", source.params.period},
                      {"drift", source.params.drift},
                      {"volatility", source.params.volatility},
                      {"start_timestamp", source.params.start_timestamp}};
  sidecar["dataset"] = dataset_summary(data);
  if (cfg) sidecar["config"] = cfg->source;
  write_json(out / "market.json", sidecar);
  std::cout << "wrote " << data.size() << " synthetic bars to " << (out / "market.csv").string() << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_flag, std::optional<std::uint64_t> seed,
              bool quiet) {
  if (config_path.empty()) throw ConfigError("train: --config is required");
  RunConfig cfg = load_run_config(config_path);
  if (seed) {
    cfg.seeds = {*seed};
    cfg.source["seeds"] = Json::array({*seed});
  }
  const fs::path out = output_dir(out_flag, &cfg);
  run_training(cfg, out, quiet ? nullptr : &std::cerr);
  std::cout << "run written to " << out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& run_dir) {
  if (run_dir.empty()) throw ConfigError("eval: pass the run directory with --out");
  const auto rows = run_evaluation(run_dir, &std::cout);
  std::cout << rows.size() << " evaluation episodes written to " << (fs::path(run_dir) / "eval.csv").string() << '\n';
  return kExitOk;
}

int cmd_report(const std::string& run_dir) {
  if (run_dir.empty()) throw ConfigError("report: pass the run directory with --out");
  const Report report = build_report(run_dir);
  {
    std::ofstream out(fs::path(run_dir) / "report.csv");
    write_report_csv(out, report);
  }
  Json sidecar;
  sidecar["config"] = read_manifest(run_dir).at("config");
  sidecar["statistic"] = "mean and sample standard deviation (n-1) of final validation returns across seeds";
  write_json(fs::path(run_dir) / "report.json", sidecar);
  std::cout << format_report_table(report);
  return kExitOk;
}

int cmd_verify(std::uint64_t seed, bool corrupt) {
  VerifyOptions opts;
  opts.seed = seed;
  opts.corrupt_lstm_backward = corrupt;
  const auto results = run_verify(opts);
  std::cout << format_check_table(results);
  int failed = 0;
  for (const auto& r : results) {
    if (!r.passed) {
      std::cerr << "check failed: " << r.name << '\n';
      ++failed;
    }
  }
  std::cout << (failed ? std::to_string(failed) + " check(s) failed" : "all checks passed") << '\n';
  return failed ? kExitCheck : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracesac: trace-corrected soft actor-critic for single-asset trading"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  std::optional<std::uint64_t> seed;

  auto* ingest = app.add_subcommand("ingest", "Validate a market CSV and write a canonical copy");
  std::string input;
  int feature_count = -1;
  ingest->add_option("input", input, "Market CSV to ingest");
  ingest->add_option("--config", config_path, "Run config whose data.csv is ingested");
  ingest->add_option("--feature-count", feature_count, "Expected number of feature columns");
  ingest->add_option("--out", out_flag, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic market CSV");
  std::string kind;
  std::size_t length = 0;
  synth->add_option("--config", config_path, "Run config with a data.synth section");
  synth->add_option("--kind", kind, "flat, random_walk or sinusoid");
  synth->add_option("--length", length, "Number of one-minute bars");
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--out", out_flag, "Output directory");

  auto* train_cmd = app.add_subcommand("train", "Train every environment, trace and seed in a config");
  bool quiet = false;
  train_cmd->add_option("--config", config_path, "Run config (JSON)")->required();
  train_cmd->add_option("--out", out_flag, "Run directory (overrides \"out\")");
  train_cmd->add_option("--seed", seed, "Train this single seed instead of the config's list");
  train_cmd->add_flag("--quiet", quiet, "No progress lines");

  auto* eval = app.add_subcommand("eval", "Evaluate the checkpoints of a run on validation and test slices");
  eval->add_option("--out", out_flag, "Run directory")->required();

  auto* report = app.add_subcommand("report", "Aggregate final validation returns of a run");
  std::string run_dir;
  report->add_option("run_dir", run_dir, "Run directory");
  report->add_option("--out", out_flag, "Run directory");

  auto* verify = app.add_subcommand("verify", "Run the built-in oracle and gradient checks");
  std::uint64_t verify_seed = 7;
  bool corrupt = false;
  verify->add_option("--seed", verify_seed, "Fixture seed");
  verify->add_flag("--corrupt-lstm-backward", corrupt, "Negative control for the gradient checks")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(input, config_path, feature_count, out_flag);
    if (*synth) return cmd_synth(config_path, kind, length, seed, out_flag);
    if (*train_cmd) return cmd_train(config_path, out_flag, seed, quiet);
    if (*eval) return cmd_eval(out_flag);
    if (*report) return cmd_report(run_dir.empty() ? out_flag : run_dir);
    if (*verify) return cmd_verify(verify_seed, corrupt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
