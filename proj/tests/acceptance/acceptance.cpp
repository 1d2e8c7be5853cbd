// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0

// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: tracesac_acceptance [criterion numbers...]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "tracesac/tracesac.hpp"

namespace fs = std::filesystem;
using namespace tracesac;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream out;
  out.precision(2);
  out << std::scientific << v;
  return out.str();
}

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("tracesac_accept_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

struct Captured {
  int status = -1;
  std::string output;
};

Captured run_cli(const std::string& args) {
  const std::string cmd = std::string(TRACESAC_CLI_PATH) + " " + args + " 2>&1";
  Captured c;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return c;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) c.output.append(buf, n);
  const int status = ::pclose(pipe);
  c.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return c;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

const fs::path kConfigDir = fs::path(TRACESAC_SOURCE_DIR) / "configs";

// 1 ---------------------------------------------------------------------------

Outcome tabular_convergence() {
  Rng rng(2026);
  double worst = 0.0;
  std::size_t slowest = 0;
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const auto mdp = tabular::random_mdp(5, 3, 0.9, rng);
    const auto mu = tabular::random_policy(5, 3, rng);
    const auto pi = tabular::random_policy(5, 3, rng);
    const auto exact = tabular::exact_q(mdp, pi);
    for (TraceKind kind : {TraceKind::retrace, TraceKind::importance_sampling, TraceKind::tree_backup}) {
      const auto run = tabular::tabular_retrace_iterate(mdp, mu, pi, TraceSpec{kind, 1.0, 0, 0.9, 0.0}, 50, 1000);
      std::optional<std::size_t> hit;
      for (std::size_t k = 0; k < run.iterates.size() && !hit; ++k) {
        if ((run.iterates[k] - exact).cwiseAbs().maxCoeff() <= 1e-6) hit = k;
      }
      if (!hit || run.diverged) ok = false;
      slowest = std::max(slowest, hit.value_or(run.iterates.size()));
      worst = std::max(worst, (run.iterates.back() - exact).cwiseAbs().maxCoeff());
    }
  }
  return {ok, "60 runs, final max error " + sci(worst) + ", slowest within 1e-6 at iteration " +
                  std::to_string(slowest)};
}

// 2 ---------------------------------------------------------------------------

Outcome single_step_reduction() {
  Rng rng(11);
  double worst = 0.0;
  for (TraceKind kind : kAllTraceKinds) {
    for (int i = 0; i < 1000; ++i) {
      const TraceSpec spec{kind, 0.0, rng.index(8), rng.uniform(0.0, 0.999), rng.uniform(0.0, 1.0)};
      const std::size_t len = 1 + rng.index(8);
      SegmentEval eval;
      std::vector<double> reward(len), q_next(len), log_pi_next(len), q_cur(len);
      std::vector<bool> done(len, false);
      for (std::size_t j = 0; j < len; ++j) {
        reward[j] = rng.uniform(-0.05, 0.05);
        q_next[j] = rng.uniform(-5.0, 5.0);
        log_pi_next[j] = rng.uniform(-4.0, 4.0);
        q_cur[j] = rng.uniform(-5.0, 5.0);
        done[j] = j + 1 == len && rng.uniform() < 0.2;
        const double qn = done[j] ? 0.0 : q_next[j];
        const double lp = done[j] ? 0.0 : log_pi_next[j];
        eval.delta.push_back(soft_td_error(reward[j], qn, lp, q_cur[j], spec.gamma, spec.alpha_ent));
        eval.log_pi.push_back(rng.uniform(-4.0, 2.0));
        eval.log_mu.push_back(rng.uniform(-4.0, 2.0));
      }
      fill_coefficients(eval, kind, spec.lambda);
      const double backup =
          done[0] ? reward[0] : reward[0] + spec.gamma * (q_next[0] - spec.alpha_ent * log_pi_next[0]);
      worst = std::max(worst, std::abs(retrace_target(eval, q_cur[0], spec) - backup));
    }
  }
  return {worst <= 1e-12, "5 kinds x 1000 segments, max deviation " + sci(worst)};
}

// 3 ---------------------------------------------------------------------------

Outcome coefficient_table() {
  Rng rng(12);
  std::size_t formula_mismatch = 0, column_mismatch = 0;
  for (int i = 0; i < 10000; ++i) {
    const double pi = std::exp(rng.uniform(-6.0, 3.0));
    const double mu = std::exp(rng.uniform(-6.0, 3.0));
    formula_mismatch += trace_coefficient(TraceKind::retrace, pi, mu) != std::min(1.0, pi / mu);
    formula_mismatch += trace_coefficient(TraceKind::importance_sampling, pi, mu) != pi / mu;
    formula_mismatch += trace_coefficient(TraceKind::tree_backup, pi, mu) != std::min(1.0, pi);
    formula_mismatch += trace_coefficient(TraceKind::peng_q, pi, mu) != 1.0;
    formula_mismatch += trace_coefficient(TraceKind::uncorrected, pi, mu) != 1.0;

    // Conservative column: YES for Retrace, IS and TreeBackup. Peng's Q and
    // the uncorrected return only satisfy c <= pi/mu where pi >= mu. Checked
    // on action probabilities in (0, 1].
    const double p = 1.0 - rng.uniform();
    const double m = 1.0 - rng.uniform();
    column_mismatch += !is_conservative(TraceKind::retrace, p, m);
    column_mismatch += !is_conservative(TraceKind::importance_sampling, p, m);
    column_mismatch += !is_conservative(TraceKind::tree_backup, p, m);
    column_mismatch += is_conservative(TraceKind::peng_q, p, m) != (p >= m);
    column_mismatch += is_conservative(TraceKind::uncorrected, p, m) != (p >= m);
  }
  return {formula_mismatch == 0 && column_mismatch == 0,
          "10000 pairs, " + std::to_string(formula_mismatch) + " formula and " + std::to_string(column_mismatch) +
              " conservative-column mismatches"};
}

// 4 ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const std::set<std::string> wanted{"grad.dense", "grad.lstm", "grad.squashed_log_density", "grad.critic_loss",
                                     "grad.actor_loss"};
  bool ok = true;
  std::string detail;
  std::size_t seen = 0;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    VerifyOptions opts;
    opts.seed = seed;
    for (const CheckResult& r : run_verify(opts)) {
      if (!wanted.count(r.name)) continue;
      ++seen;
      ok &= r.passed;
      if (!r.passed) detail += " " + r.name + "(seed " + std::to_string(seed) + "): " + r.detail;
    }
  }
  ok &= seen == 15;
  return {ok, std::to_string(seen) + " checks over 3 seeds, tolerance 1e-4" + (detail.empty() ? "" : ";" + detail)};
}

// 5 ---------------------------------------------------------------------------

Outcome environment_accounting() {
  SynthParams p;
  p.half_spread = 0.03;
  p.volatility = 3e-3;
  const Dataset walk = synthesize_market(MarketKind::random_walk, 400, p, 5);
  Rng rng(13);

  double telescoping = 0.0;
  for (int ep = 0; ep < 100; ++ep) {
    EnvConfig cfg;
    cfg.h_max = rng.uniform(0.05, 2.0);
    cfg.unit = 0.01;
    cfg.commission = rng.uniform(0.0, 2e-3);
    cfg.mark_rule = rng.uniform() < 0.5 ? MarkRule::mid : MarkRule::bid_for_long;
    TradingEnv env(walk, cfg);
    const std::size_t begin = rng.index(300);
    env.reset({begin, begin + 5 + rng.index(95)});
    double sum = 0.0;
    while (!env.done()) sum += env.step(rng.uniform(-cfg.h_max, cfg.h_max)).reward;
    telescoping = std::max(telescoping, std::abs(sum - std::log(env.state().wealth / cfg.initial_balance)));
  }

  double zero_total = 0.0;
  for (int ep = 0; ep < 20; ++ep) {
    EnvConfig cfg;
    cfg.commission = 1e-3;
    TradingEnv env(walk, cfg);
    env.reset({0, 400});
    double sum = 0.0;
    // Orders smaller than one unit never fill.
    while (!env.done()) sum += env.step(rng.uniform(-0.0099, 0.0099)).reward;
    zero_total = std::max(zero_total, std::abs(sum));
  }

  const Dataset flat = synthesize_market(MarketKind::flat, 300, SynthParams{}, 0);
  double drift = 0.0;
  for (int ep = 0; ep < 50; ++ep) {
    EnvConfig cfg;
    cfg.h_max = 1.0;
    TradingEnv env(flat, cfg);
    env.reset({0, 300});
    const int trades = 1 + static_cast<int>(rng.index(100));
    for (int k = 0; k < trades; ++k) env.step(rng.uniform(-1.0, 1.0));
    while (!env.done() && std::abs(env.state().holdings) > 1e-12) env.step(std::clamp(-env.state().holdings, -1.0, 1.0));
    drift = std::max(drift, std::abs(env.state().wealth - cfg.initial_balance));
  }

  const bool ok = telescoping <= 1e-9 && zero_total == 0.0 && drift <= 1e-12;
  return {ok, "(a) max telescoping error " + sci(telescoping) + " over 100 episodes; (b) zero-exposure total " +
                  format_exact(zero_total) + "; (c) round-trip wealth drift " + sci(drift)};
}

// 6 and 8 ---------------------------------------------------------------------

struct SmokeRun {
  fs::path dir;
  double mean_val = 0.0;
  double random_mean = 0.0;
  std::vector<double> finals;
};

SmokeRun smoke_run(const std::string& tag) {
  SmokeRun out;
  out.dir = scratch(tag);
  const RunConfig cfg = load_run_config(kConfigDir / "sinusoid_smoke.json");
  run_training(cfg, out.dir);

  for (std::uint64_t seed : cfg.seeds) {
    std::ifstream in(out.dir / ("metrics_" + run_stem(0, cfg.traces.front().label, seed) + ".csv"));
    std::optional<double> last;
    for (const MetricsRow& r : read_metrics_csv(in)) {
      if (r.val_return_pct) last = r.val_return_pct;
    }
    if (!last) throw Error("no validation record for seed " + std::to_string(seed));
    out.finals.push_back(*last);
  }
  for (double v : out.finals) out.mean_val += v / static_cast<double>(out.finals.size());

  const auto envs = prepare_environments(cfg, load_dataset(cfg));
  for (std::uint64_t seed : cfg.seeds) {
    out.random_mean += run_random_episode(envs.front().data, envs.front().split.validation, cfg.env, seed).return_pct /
                       static_cast<double>(cfg.seeds.size());
  }
  return out;
}

std::optional<SmokeRun> first_smoke;

Outcome learning_smoke() {
  first_smoke = smoke_run("smoke_a");
  std::string finals;
  for (double v : first_smoke->finals) finals += (finals.empty() ? "" : ", ") + format_fixed(v, 3);
  const bool ok = first_smoke->mean_val > 0.0 && first_smoke->mean_val > first_smoke->random_mean;
  return {ok, "mean final validation return " + format_fixed(first_smoke->mean_val, 4) + "% [" + finals +
                  "] vs random policy " + format_fixed(first_smoke->random_mean, 4) + "%"};
}

Outcome determinism() {
  if (!first_smoke) first_smoke = smoke_run("smoke_a");
  const SmokeRun again = smoke_run("smoke_b");
  std::size_t files = 0, identical = 0;
  for (const auto& entry : fs::directory_iterator(first_smoke->dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) != 0) continue;
    ++files;
    identical += fs::exists(again.dir / name) && slurp(entry.path()) == slurp(again.dir / name);
  }
  fs::remove_all(first_smoke->dir);
  fs::remove_all(again.dir);
  return {files == 5 && identical == files,
          std::to_string(identical) + "/" + std::to_string(files) + " metrics CSVs byte-identical"};
}

// 7 ---------------------------------------------------------------------------

Outcome protocol_fidelity() {
  const fs::path dir = scratch("protocol");
  const fs::path config = kConfigDir / "protocol_20day.json";
  const Captured trained = run_cli("train --quiet --config " + config.string() + " --out " + dir.string());
  if (trained.status != 0) return {false, "train exited " + std::to_string(trained.status) + ": " + trained.output};
  const Captured reported = run_cli("report " + dir.string());
  if (reported.status != 0) return {false, "report exited " + std::to_string(reported.status) + ": " + reported.output};

  std::vector<std::string> problems;
  const RunConfig cfg = load_run_config(config);
  const std::size_t day = cfg.separation.minutes_per_day;
  if (cfg.separation.n_envs * cfg.separation.days_per_env != 20) problems.push_back("config is not 20 days");

  const Json manifest = read_manifest(dir);
  const Json& envs = manifest.at("environments");
  if (envs.size() != 4) problems.push_back("expected 4 environments, got " + std::to_string(envs.size()));
  std::size_t expected_start = 0;
  for (const Json& e : envs) {
    const auto range = [&](const char* key) {
      return IndexRange{e.at(key)[0].get<std::size_t>(), e.at(key)[1].get<std::size_t>()};
    };
    const IndexRange tr = range("train"), va = range("validation"), te = range("test");
    const bool layout = tr.begin == expected_start && tr.size() == 3 * day && va.begin == tr.end &&
                        va.size() == day && te.begin == va.end && te.size() == day;
    if (!layout) problems.push_back("env " + e.at("env_id").dump() + " is not a 3/1/1-day split");
    expected_start = te.end;
  }

  std::size_t metric_files = 0;
  std::set<std::size_t> env_ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) != 0) continue;
    ++metric_files;
    std::ifstream in(entry.path());
    const auto rows = read_metrics_csv(in);
    if (rows.size() != cfg.agent.episodes) problems.push_back(name + ": wrong row count");
    for (const MetricsRow& r : rows) {
      env_ids.insert(r.env_id);
      if (r.val_return_pct.has_value() != ((r.episode + 1) % 5 == 0)) {
        problems.push_back(name + ": validation record at episode " + std::to_string(r.episode));
      }
      if (r.steps != 3 * day - 1) problems.push_back(name + ": training episode does not span 3 days");
    }
  }
  if (metric_files != 4 || env_ids.size() != 4) problems.push_back("expected 4 independent runs");

  const std::string& table = reported.output;
  std::size_t mean_std_rows = 0;
  bool market_row = false;
  std::istringstream lines(table);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind(cfg.traces.front().label, 0) == 0) {
      std::size_t cells = 0;
      for (std::size_t at = line.find("±"); at != std::string::npos; at = line.find("±", at + 1)) ++cells;
      mean_std_rows += cells == 4;
    }
    market_row |= line.rfind("Market", 0) == 0;
  }
  if (mean_std_rows != 1) problems.push_back("report has no mean ± std row across 4 environments");
  if (!market_row) problems.push_back("report has no Market row");
  const std::string csv = slurp(dir / "report.csv");
  for (int e = 0; e < 4; ++e) {
    if (csv.find("Market," + std::to_string(e) + ",") == std::string::npos) problems.push_back("report.csv lacks Market rows");
  }
  fs::remove_all(dir);

  std::string detail = std::to_string(metric_files) + " runs, 3/1/1-day splits of " + std::to_string(day) +
                       "-minute days, validation every 5 episodes, report with Market row";
  if (!problems.empty()) {
    detail = problems.front();
    if (problems.size() > 1) detail += " (+" + std::to_string(problems.size() - 1) + " more)";
  }
  return {problems.empty(), detail};
}

struct Criterion {
  int number;
  std::string title;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "tabular retrace convergence", 5.0, tabular_convergence},
      {2, "single-step reduction", 1.0, single_step_reduction},
      {3, "trace-coefficient table", 1.0, coefficient_table},
      {4, "gradient fidelity", 30.0, gradient_fidelity},
      {5, "environment accounting", 5.0, environment_accounting},
      {6, "learning smoke test", 900.0, learning_smoke},
      {7, "protocol fidelity", 120.0, protocol_fidelity},
      {8, "determinism", 900.0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > c.limit_seconds) {
      o.passed = false;
      o.detail += "; exceeded " + format_fixed(c.limit_seconds, 0) + " s";
    }
    failed += !o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << c.number << " (" << c.title << "): " << o.detail
              << " [" << format_fixed(seconds, 2) << " s]" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion/criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
