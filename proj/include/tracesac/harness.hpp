// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration, the multi-environment training protocol, checkpoint
// evaluation and result aggregation.
//
// A run directory holds one metrics CSV and one checkpoint per
// (environment, trace label, seed) plus manifest.json, which embeds the
// exact configuration and the per-environment market returns.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tracesac/agent.hpp"
#include "tracesac/common.hpp"
#include "tracesac/data.hpp"
#include "tracesac/env.hpp"
#include "tracesac/traces.hpp"

namespace tracesac {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace detail {

/// Reads fields from one JSON object, remembering which keys were used so
/// leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  const Json& child(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(field(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<std::int64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError(field(item.key()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline std::string sanitize_label(const std::string& label) {
  std::string out;
  for (char ch : label) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ? ch : '_';
  return out;
}

}  // namespace detail

struct DataSource {
  std::optional<std::string> csv_path;  ///< resolved against the config file's directory
  int feature_count = -1;
  MarketKind kind = MarketKind::sinusoid;
  std::size_t length = 0;  ///< 0: exactly what the separation needs
  SynthParams params;
  std::uint64_t seed = 0;
};

/// One trace configuration to train, with the name used in outputs.
struct TraceRun {
  TraceSpec spec;
  std::string label;
};

struct RunConfig {
  DataSource data;
  SeparationConfig separation;
  EnvConfig env;
  AgentConfig agent;
  std::vector<TraceRun> traces;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> envs;  ///< empty: every environment
  bool standardize = true;
  std::string out;
  Json source;  ///< the document the config was parsed from
};

inline MarkRule mark_rule_from_string(const std::string& name) {
  if (name == "bid_for_long") return MarkRule::bid_for_long;
  if (name == "mid") return MarkRule::mid;
  throw ConfigError("env.mark_rule: expected 'bid_for_long' or 'mid', got '" + name + "'");
}

inline std::string to_string(MarkRule rule) { return rule == MarkRule::mid ? "mid" : "bid_for_long"; }

inline SynthParams parse_synth_params(detail::ObjectReader& r, SynthParams p = {}) {
  p.base = r.number("base", p.base);
  p.half_spread = r.number("half_spread", p.half_spread);
  p.amplitude = r.number("amplitude", p.amplitude);
  p.period = r.number("period", p.period);
  p.drift = r.number("drift", p.drift);
  p.volatility = r.number("volatility", p.volatility);
  p.start_timestamp = r.integer("start_timestamp", p.start_timestamp);
  return p;
}

inline RunConfig parse_run_config(const Json& doc, const fs::path& base_dir = {}) {
  RunConfig cfg;
  cfg.source = doc;
  detail::ObjectReader root(doc, "");

  if (!root.has("data")) throw ConfigError("data: required");
  {
    detail::ObjectReader data(root.child("data"), "data");
    const bool has_csv = data.has("csv");
    const bool has_synth = data.has("synth");
    if (has_csv == has_synth) throw ConfigError("data: give exactly one of 'csv' or 'synth'");
    if (has_csv) {
      fs::path p = data.string("csv", "");
      if (p.empty()) throw ConfigError("data.csv: empty path");
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      cfg.data.csv_path = p.string();
      cfg.data.feature_count = static_cast<int>(data.integer("feature_count", -1));
    } else {
      detail::ObjectReader synth(data.child("synth"), "data.synth");
      try {
        cfg.data.kind = market_kind_from_string(synth.string("kind", "sinusoid"));
      } catch (const Error& e) {
        throw ConfigError(std::string("data.synth.kind: ") + e.what());
      }
      cfg.data.length = synth.count("length", 0);
      cfg.data.seed = synth.count("seed", 0);
      cfg.data.params = parse_synth_params(synth);
      synth.finish();
    }
    data.finish();
  }

  if (root.has("separation")) {
    detail::ObjectReader s(root.child("separation"), "separation");
    cfg.separation.n_envs = s.count("n_envs", cfg.separation.n_envs);
    cfg.separation.days_per_env = s.count("days_per_env", cfg.separation.days_per_env);
    cfg.separation.train_days = s.count("train_days", cfg.separation.train_days);
    cfg.separation.minutes_per_day = s.count("minutes_per_day", cfg.separation.minutes_per_day);
    s.finish();
  }
  if (cfg.separation.n_envs == 0 || cfg.separation.days_per_env == 0 || cfg.separation.minutes_per_day == 0) {
    throw ConfigError("separation: n_envs, days_per_env and minutes_per_day must be positive");
  }
  if (cfg.separation.train_days + 2 > cfg.separation.days_per_env) {
    throw ConfigError("separation.train_days: must leave one validation and at least one test day");
  }

  if (root.has("env")) {
    detail::ObjectReader e(root.child("env"), "env");
    cfg.env.h_max = e.number("h_max", cfg.env.h_max);
    cfg.env.lookback = e.count("lookback", cfg.env.lookback);
    cfg.env.unit = e.number("unit", cfg.env.unit);
    cfg.env.commission = e.number("commission", cfg.env.commission);
    cfg.env.initial_balance = e.number("initial_balance", cfg.env.initial_balance);
    cfg.env.mark_rule = mark_rule_from_string(e.string("mark_rule", to_string(cfg.env.mark_rule)));
    e.finish();
  }
  cfg.env.validate();

  if (root.has("agent")) {
    AgentConfig& a = cfg.agent;
    detail::ObjectReader r(root.child("agent"), "agent");
    a.lr_actor = r.number("lr_actor", a.lr_actor);
    a.lr_critic = r.number("lr_critic", a.lr_critic);
    a.tau = r.number("tau", a.tau);
    a.batch = r.count("batch", a.batch);
    a.grad_steps_per_env_step = r.count("grad_steps_per_env_step", a.grad_steps_per_env_step);
    a.policy_delay = r.count("policy_delay", a.policy_delay);
    a.episodes = r.count("episodes", a.episodes);
    a.validate_every = r.count("validate_every", a.validate_every);
    if (r.has("replay")) {
      detail::ObjectReader rp(r.child("replay"), "agent.replay");
      a.replay.capacity = rp.count("capacity", a.replay.capacity);
      a.replay.warmup = rp.count("warmup", a.replay.warmup);
      rp.finish();
    }
    if (r.has("network")) {
      detail::ObjectReader n(r.child("network"), "agent.network");
      a.network.lstm_hidden = n.count("lstm_hidden", a.network.lstm_hidden);
      a.network.hidden = n.count("hidden", a.network.hidden);
      n.finish();
    }
    if (r.has("adam")) {
      detail::ObjectReader ad(r.child("adam"), "agent.adam");
      a.adam_beta1 = ad.number("beta1", a.adam_beta1);
      a.adam_beta2 = ad.number("beta2", a.adam_beta2);
      a.adam_eps = ad.number("eps", a.adam_eps);
      ad.finish();
    }
    r.finish();
  }

  if (root.has("traces")) {
    const Json& list = root.child("traces");
    if (!list.is_array() || list.empty()) throw ConfigError("traces: expected a non-empty array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      detail::ObjectReader t(list[i], "traces[" + std::to_string(i) + "]");
      TraceRun run;
      try {
        run.spec.kind = trace_kind_from_string(t.string("kind", "retrace"));
      } catch (const ConfigError& e) {
        throw ConfigError(t.field("kind") + ": " + e.what());
      }
      run.spec.lambda = t.number("lambda", run.spec.lambda);
      run.spec.n = t.count("n", run.spec.n);
      run.spec.gamma = t.number("gamma", run.spec.gamma);
      run.spec.alpha_ent = t.number("alpha_ent", run.spec.alpha_ent);
      run.label = t.string("label", to_string(run.spec.kind));
      t.finish();
      try {
        run.spec.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("traces[" + std::to_string(i) + "]: " + e.what());
      }
      cfg.traces.push_back(std::move(run));
    }
  } else {
    cfg.traces.push_back({TraceSpec{}, to_string(TraceKind::retrace)});
  }
  std::set<std::string> labels;
  for (const TraceRun& t : cfg.traces) {
    if (!labels.insert(detail::sanitize_label(t.label)).second) {
      throw ConfigError("traces: duplicate label '" + t.label + "'");
    }
  }

  if (root.has("seeds")) {
    const Json& seeds = root.child("seeds");
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds: expected a non-empty array of integers");
    cfg.seeds.clear();
    for (const Json& s : seeds) {
      if (!s.is_number_unsigned()) throw ConfigError("seeds: expected non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (root.has("envs")) {
    const Json& envs = root.child("envs");
    if (!envs.is_array() || envs.empty()) throw ConfigError("envs: expected a non-empty array of environment ids");
    for (const Json& e : envs) {
      if (!e.is_number_unsigned() || e.get<std::size_t>() >= cfg.separation.n_envs) {
        throw ConfigError("envs: ids must lie in [0, separation.n_envs)");
      }
      cfg.envs.push_back(e.get<std::size_t>());
    }
  }
  cfg.standardize = root.boolean("standardize", cfg.standardize);
  cfg.out = root.string("out", "");
  root.finish();

  AgentConfig probe = cfg.agent;
  probe.trace = cfg.traces.front().spec;
  probe.validate();
  if (cfg.envs.empty()) {
    for (std::size_t e = 0; e < cfg.separation.n_envs; ++e) cfg.envs.push_back(e);
  }
  return cfg;
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_json_file(path), path.parent_path());
}

/// Total bars the separation needs.
inline std::size_t required_length(const SeparationConfig& s) {
  return s.n_envs * s.days_per_env * s.minutes_per_day;
}

/// Loads or synthesizes the raw dataset. A missing CSV is a config error.
inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.csv_path) {
    if (!fs::exists(*cfg.data.csv_path)) throw ConfigError("data.csv: file '" + *cfg.data.csv_path + "' does not exist");
    return ingest_csv(*cfg.data.csv_path, CsvSchema{cfg.data.feature_count});
  }
  const std::size_t length = cfg.data.length ? cfg.data.length : required_length(cfg.separation);
  return synthesize_market(cfg.data.kind, length, cfg.data.params, cfg.data.seed);
}

/// 100 log(last mid / first mid) over a range.
inline double market_return_pct(const Dataset& data, IndexRange range) {
  if (range.size() < 2) throw Error("market_return_pct: range needs at least two bars");
  return 100.0 * std::log(data[range.end - 1].mid() / data[range.begin].mid());
}

struct PreparedEnvironment {
  EnvironmentSplit split;
  Dataset data;  ///< features standardized on split.train when enabled
  double market_return_pct = 0.0;  ///< over split.validation
};

inline std::vector<PreparedEnvironment> prepare_environments(const RunConfig& cfg, const Dataset& raw) {
  const auto splits = separate_environments(raw, cfg.separation);
  std::vector<PreparedEnvironment> out;
  for (std::size_t id : cfg.envs) {
    const EnvironmentSplit& split = splits.at(id);
    PreparedEnvironment env;
    env.split = split;
    env.data = cfg.standardize && raw.feature_count() > 0 ? standardize(raw, split.train) : raw;
    env.market_return_pct = market_return_pct(raw, split.validation);
    out.push_back(std::move(env));
  }
  return out;
}

inline std::string run_stem(std::size_t env_id, const std::string& label, std::uint64_t seed) {
  return "env" + std::to_string(env_id) + "_" + detail::sanitize_label(label) + "_seed" + std::to_string(seed);
}

inline AgentConfig agent_config_for(const RunConfig& cfg, const TraceRun& trace, std::uint64_t seed) {
  AgentConfig a = cfg.agent;
  a.trace = trace.spec;
  a.seed = seed;
  return a;
}

inline Json range_json(IndexRange r) { return Json::array({r.begin, r.end}); }

/// Trains every (environment, trace, seed) cell and writes the run
/// directory. The dataset is loaded and validated before anything is
/// written.
inline void run_training(const RunConfig& cfg, const fs::path& out_dir, std::ostream* log = nullptr) {
  const Dataset raw = load_dataset(cfg);
  const auto envs = prepare_environments(cfg, raw);
  for (const TraceRun& t : cfg.traces) {
    agent_config_for(cfg, t, 0).validate();
  }
  fs::create_directories(out_dir);

  Json manifest;
  manifest["format"] = "tracesac-run v1";
  manifest["config"] = cfg.source;
  if (cfg.data.csv_path) manifest["data_csv"] = fs::absolute(*cfg.data.csv_path).string();
  manifest["environments"] = Json::array();
  for (const PreparedEnvironment& e : envs) {
    manifest["environments"].push_back({{"env_id", e.split.env_id},
                                        {"train", range_json(e.split.train)},
                                        {"validation", range_json(e.split.validation)},
                                        {"test", range_json(e.split.test)},
                                        {"market_return_pct", e.market_return_pct}});
  }
  manifest["runs"] = Json::array();

  for (const PreparedEnvironment& e : envs) {
    for (const TraceRun& t : cfg.traces) {
      for (std::uint64_t seed : cfg.seeds) {
        const std::string stem = run_stem(e.split.env_id, t.label, seed);
        if (log) *log << "training " << stem << std::endl;
        auto result = train<float>(e.data, e.split, cfg.env, agent_config_for(cfg, t, seed), t.label);
        const std::string metrics_file = "metrics_" + stem + ".csv";
        const std::string checkpoint_file = "checkpoint_" + stem + ".txt";
        {
          std::ofstream out(out_dir / metrics_file);
          if (!out) throw Error("cannot write " + (out_dir / metrics_file).string());
          write_metrics_csv(out, result.metrics);
        }
        {
          std::ofstream out(out_dir / checkpoint_file);
          if (!out) throw Error("cannot write " + (out_dir / checkpoint_file).string());
          result.agent.save(out);
        }
        manifest["runs"].push_back({{"env_id", e.split.env_id},
                                    {"trace_kind", t.label},
                                    {"seed", seed},
                                    {"metrics", metrics_file},
                                    {"checkpoint", checkpoint_file}});
      }
    }
  }
  std::ofstream out(out_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

/// Loads a run directory's manifest and the config embedded in it.
inline Json read_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) throw Error("no manifest.json in '" + run_dir.string() + "'");
  std::ifstream in(path);
  return Json::parse(in);
}

struct EvalRow {
  std::string trace_kind;
  std::size_t env_id = 0;
  std::uint64_t seed = 0;
  std::string split;
  double return_pct = 0.0;
};

/// Deterministic episodes of every checkpoint in a run directory on the
/// validation and test slices. Writes eval.csv and per-episode traces.
inline std::vector<EvalRow> run_evaluation(const fs::path& run_dir, std::ostream* log = nullptr) {
  const Json manifest = read_manifest(run_dir);
  RunConfig cfg = parse_run_config(manifest.at("config"));
  if (manifest.contains("data_csv")) cfg.data.csv_path = manifest.at("data_csv").get<std::string>();
  const Dataset raw = load_dataset(cfg);
  const auto envs = prepare_environments(cfg, raw);
  std::map<std::size_t, const PreparedEnvironment*> by_id;
  for (const auto& e : envs) by_id[e.split.env_id] = &e;
  std::map<std::string, const TraceRun*> by_label;
  for (const auto& t : cfg.traces) by_label[t.label] = &t;

  std::vector<EvalRow> rows;
  for (const Json& run : manifest.at("runs")) {
    const auto env_id = run.at("env_id").get<std::size_t>();
    const auto label = run.at("trace_kind").get<std::string>();
    const auto seed = run.at("seed").get<std::uint64_t>();
    const PreparedEnvironment& env = *by_id.at(env_id);
    TraceSacAgent<float> agent(agent_config_for(cfg, *by_label.at(label), seed), cfg.env, env.data.feature_count());
    std::ifstream ckpt(run_dir / run.at("checkpoint").get<std::string>());
    if (!ckpt) throw Error("missing checkpoint for " + run_stem(env_id, label, seed));
    agent.load(ckpt);
    for (const auto& [split_name, range] :
         {std::pair<std::string, IndexRange>{"validation", env.split.validation}, {"test", env.split.test}}) {
      const EpisodeOutcome ep = run_policy_episode(agent, env.data, range, cfg.env, false);
      rows.push_back({label, env_id, seed, split_name, ep.return_pct});
      std::ofstream trace(run_dir / ("episode_" + run_stem(env_id, label, seed) + "_" + split_name + ".csv"));
      write_episode_trace(trace, ep.trace);
      if (log) *log << run_stem(env_id, label, seed) << ' ' << split_name << ' ' << format_fixed(ep.return_pct, 4) << '\n';
    }
  }
  std::ofstream out(run_dir / "eval.csv");
  out << "trace_kind,env_id,seed,split,return_pct\n";
  for (const EvalRow& r : rows) {
    out << r.trace_kind << ',' << r.env_id << ',' << r.seed << ',' << r.split << ',' << format_exact(r.return_pct) << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation.
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string trace_kind;
  std::size_t env_id = 0;
  double mean_return_pct = 0.0;
  double std_return_pct = 0.0;
  std::size_t n_seeds = 0;
};

/// Mean and sample (n - 1) standard deviation; std is 0 for one value.
inline ResultRow summarize_returns(const std::string& trace_kind, std::size_t env_id, const std::vector<double>& values) {
  if (values.empty()) throw Error("summarize_returns: no values for " + trace_kind);
  ResultRow row{trace_kind, env_id, 0.0, 0.0, values.size()};
  for (double v : values) row.mean_return_pct += v;
  row.mean_return_pct /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean_return_pct) * (v - row.mean_return_pct);
    row.std_return_pct = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return row;
}

inline std::string format_mean_std(double mean, double std) {
  return format_fixed(mean, 4) + " ± " + format_fixed(std, 4);
}

struct Report {
  std::vector<ResultRow> rows;                    ///< one per (trace label, env)
  std::vector<std::pair<std::size_t, double>> market;  ///< (env_id, buy-and-hold return %)
};

inline constexpr const char* kMarketLabel = "Market";

/// Final validation return of each metrics file, grouped by (trace, env).
/// Labels keep the order of the sorted file list.
inline Report build_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw Error("report: '" + run_dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  if (files.empty()) throw Error("report: no metrics files in '" + run_dir.string() + "'");
  std::sort(files.begin(), files.end());

  std::vector<std::string> label_order;
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> cells;
  for (const fs::path& file : files) {
    std::ifstream in(file);
    const auto rows = read_metrics_csv(in);
    std::optional<double> last;
    std::string label;
    std::size_t env_id = 0;
    for (const MetricsRow& r : rows) {
      label = r.trace_kind;
      env_id = r.env_id;
      if (r.val_return_pct) last = r.val_return_pct;
    }
    if (!last) throw Error("report: " + file.filename().string() + " has no validation record");
    if (std::find(label_order.begin(), label_order.end(), label) == label_order.end()) label_order.push_back(label);
    cells[{label, env_id}].push_back(*last);
  }

  Report report;
  for (const std::string& label : label_order) {
    for (const auto& [key, values] : cells) {
      if (key.first == label) report.rows.push_back(summarize_returns(label, key.second, values));
    }
  }
  const Json manifest = read_manifest(run_dir);
  for (const Json& env : manifest.at("environments")) {
    report.market.emplace_back(env.at("env_id").get<std::size_t>(), env.at("market_return_pct").get<double>());
  }
  return report;
}

/// Long-form CSV. Market rows carry std 0 and n_seeds 1.
inline void write_report_csv(std::ostream& out, const Report& report) {
  out << "trace_kind,env_id,mean_return_pct,std_return_pct,n_seeds\n";
  for (const ResultRow& r : report.rows) {
    out << r.trace_kind << ',' << r.env_id << ',' << format_fixed(r.mean_return_pct, 4) << ','
        << format_fixed(r.std_return_pct, 4) << ',' << r.n_seeds << '\n';
  }
  for (const auto& [env, value] : report.market) {
    out << kMarketLabel << ',' << env << ',' << format_fixed(value, 4) << ",0.0000,1\n";
  }
}

/// Wide console table: one row per trace label, one column per environment.
inline std::string format_report_table(const Report& report) {
  std::vector<std::size_t> env_ids;
  for (const auto& [env, value] : report.market) env_ids.push_back(env);
  for (const ResultRow& r : report.rows) {
    if (std::find(env_ids.begin(), env_ids.end(), r.env_id) == env_ids.end()) env_ids.push_back(r.env_id);
  }
  std::sort(env_ids.begin(), env_ids.end());

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{""};
  for (std::size_t e : env_ids) header.push_back("Env" + std::to_string(e));
  table.push_back(header);
  std::vector<std::string> labels;
  for (const ResultRow& r : report.rows) {
    if (std::find(labels.begin(), labels.end(), r.trace_kind) == labels.end()) labels.push_back(r.trace_kind);
  }
  for (const std::string& label : labels) {
    std::vector<std::string> line{label};
    for (std::size_t e : env_ids) {
      std::string cell = "-";
      for (const ResultRow& r : report.rows) {
        if (r.trace_kind == label && r.env_id == e) cell = format_mean_std(r.mean_return_pct, r.std_return_pct);
      }
      line.push_back(cell);
    }
    table.push_back(line);
  }
  if (!report.market.empty()) {
    std::vector<std::string> line{kMarketLabel};
    for (std::size_t e : env_ids) {
      std::string cell = "-";
      for (const auto& [env, value] : report.market) {
        if (env == e) cell = format_fixed(value, 4);
      }
      line.push_back(cell);
    }
    table.push_back(line);
  }

  // Column widths count code points so the plus-minus sign lines up.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  }
  std::ostringstream out;
  out << "Final validation return (%): mean ± sample std (n-1) across seeds\n";
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      out << line[c] << std::string(widths[c] - width(line[c]), ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tracesac
