// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minute-bar market data: CSV ingestion, z-score standardization,
// environment slicing and synthetic market generators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tracesac/common.hpp"

namespace tracesac {

struct MarketBar {
  std::int64_t timestamp = 0;  ///< epoch minutes
  double bid = 0.0;
  double ask = 0.0;
  std::vector<double> features;

  double mid() const noexcept { return 0.5 * (bid + ask); }
  friend bool operator==(const MarketBar&, const MarketBar&) = default;
};

struct FeatureStats {
  double mean = 0.0;
  double std = 0.0;
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

struct Dataset {
  std::vector<MarketBar> bars;
  std::optional<std::vector<FeatureStats>> feature_stats;

  std::size_t size() const noexcept { return bars.size(); }
  std::size_t feature_count() const noexcept { return bars.empty() ? 0 : bars.front().features.size(); }
  const MarketBar& operator[](std::size_t i) const { return bars[i]; }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct EnvironmentSplit {
  std::size_t env_id = 0;
  IndexRange train;
  IndexRange validation;
  IndexRange test;
};

/// Checks every Dataset invariant; throws InvariantError or OrderingError.
inline void validate_dataset(const Dataset& data) {
  if (data.bars.empty()) throw InvariantError("dataset is empty");
  const std::size_t n_features = data.bars.front().features.size();
  for (std::size_t i = 0; i < data.bars.size(); ++i) {
    const MarketBar& bar = data.bars[i];
    const std::string where = "bar " + std::to_string(i);
    if (!std::isfinite(bar.bid) || !std::isfinite(bar.ask)) throw InvariantError(where + ": non-finite price");
    if (bar.bid <= 0.0 || bar.ask <= 0.0) throw InvariantError(where + ": prices must be positive");
    if (bar.bid > bar.ask) throw InvariantError(where + ": bid exceeds ask");
    if (bar.features.size() != n_features) throw InvariantError(where + ": inconsistent feature count");
    for (double f : bar.features) {
      if (!std::isfinite(f)) throw InvariantError(where + ": non-finite feature");
    }
    if (i > 0) {
      const std::int64_t gap = bar.timestamp - data.bars[i - 1].timestamp;
      if (gap <= 0) throw OrderingError(where + ": timestamp not strictly increasing");
      if (gap != 1) throw OrderingError(where + ": gap of " + std::to_string(gap) + " minutes in the minute grid");
    }
  }
}

/// Expected CSV layout. feature_count < 0 accepts whatever the header has.
struct CsvSchema {
  int feature_count = -1;
};

inline std::string csv_header(std::size_t feature_count) {
  std::string header = "timestamp,bid,ask";
  for (std::size_t f = 0; f < feature_count; ++f) header += ",f" + std::to_string(f);
  return header;
}

/// Reads `timestamp,bid,ask,f0,...,f{F-1}`. Line numbers in errors are
/// 1-based and count the header.
inline Dataset read_csv(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto header = split_csv_line(trim(line));
  if (header.size() < 3 || trim(header[0]) != "timestamp" || trim(header[1]) != "bid" || trim(header[2]) != "ask") {
    throw ParseError(1, "header must start with timestamp,bid,ask");
  }
  const std::size_t n_features = header.size() - 3;
  for (std::size_t f = 0; f < n_features; ++f) {
    if (trim(header[3 + f]) != "f" + std::to_string(f)) {
      throw ParseError(1, "expected feature column 'f" + std::to_string(f) + "'");
    }
  }
  if (schema.feature_count >= 0 && static_cast<std::size_t>(schema.feature_count) != n_features) {
    throw ParseError(1, "header has " + std::to_string(n_features) + " features, schema expects " +
                            std::to_string(schema.feature_count));
  }

  Dataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    MarketBar bar;
    bar.timestamp = parse_int(fields[0], line_no, "timestamp");
    bar.bid = parse_double(fields[1], line_no, "bid");
    bar.ask = parse_double(fields[2], line_no, "ask");
    bar.features.reserve(n_features);
    for (std::size_t f = 0; f < n_features; ++f) {
      bar.features.push_back(parse_double(fields[3 + f], line_no, header[3 + f]));
    }
    if (bar.bid <= 0.0 || bar.ask <= 0.0) throw InvariantError("line " + std::to_string(line_no) + ": prices must be positive");
    if (bar.bid > bar.ask) {
      throw InvariantError("line " + std::to_string(line_no) + ": bid " + format_exact(bar.bid) + " exceeds ask " +
                           format_exact(bar.ask));
    }
    if (!data.bars.empty()) {
      const std::int64_t gap = bar.timestamp - data.bars.back().timestamp;
      if (gap <= 0) throw OrderingError("line " + std::to_string(line_no) + ": timestamp not strictly increasing");
      if (gap != 1) {
        throw OrderingError("line " + std::to_string(line_no) + ": gap of " + std::to_string(gap) +
                            " minutes in the minute grid");
      }
    }
    data.bars.push_back(std::move(bar));
  }
  if (data.bars.empty()) throw InvariantError("dataset is empty");
  return data;
}

inline Dataset ingest_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_csv(in, schema);
}

inline void write_csv(std::ostream& out, const Dataset& data) {
  out << csv_header(data.feature_count()) << '\n';
  for (const MarketBar& bar : data.bars) {
    out << bar.timestamp << ',' << format_exact(bar.bid) << ',' << format_exact(bar.ask);
    for (double f : bar.features) out << ',' << format_exact(f);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(out, data);
}

/// Z-scores every feature column with mean and population std fitted on
/// `fit_range` only. Columns with zero spread become zeros.
inline Dataset standardize(const Dataset& data, IndexRange fit_range) {
  if (fit_range.empty() || fit_range.end > data.size()) {
    throw Error("standardize: fit range [" + std::to_string(fit_range.begin) + ", " + std::to_string(fit_range.end) +
                ") is empty or out of bounds");
  }
  const std::size_t n_features = data.feature_count();
  const double count = static_cast<double>(fit_range.size());
  std::vector<FeatureStats> stats(n_features);
  for (std::size_t f = 0; f < n_features; ++f) {
    double sum = 0.0;
    for (std::size_t i = fit_range.begin; i < fit_range.end; ++i) sum += data.bars[i].features[f];
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t i = fit_range.begin; i < fit_range.end; ++i) {
      const double d = data.bars[i].features[f] - mean;
      sq += d * d;
    }
    stats[f] = {mean, std::sqrt(sq / count)};
  }

  Dataset out = data;
  for (MarketBar& bar : out.bars) {
    for (std::size_t f = 0; f < n_features; ++f) {
      bar.features[f] = stats[f].std > 0.0 ? (bar.features[f] - stats[f].mean) / stats[f].std : 0.0;
    }
  }
  out.feature_stats = std::move(stats);
  return out;
}

struct SeparationConfig {
  std::size_t n_envs = 4;
  std::size_t days_per_env = 5;
  std::size_t train_days = 3;
  std::size_t minutes_per_day = 1440;
};

/// Cuts `length` bars into n_envs consecutive slices. Within a slice the
/// first train_days days train, the next day validates, the rest test.
inline std::vector<EnvironmentSplit> separate_environments(std::size_t length, const SeparationConfig& cfg) {
  if (cfg.n_envs == 0 || cfg.days_per_env == 0 || cfg.minutes_per_day == 0) {
    throw Error("separate_environments: n_envs, days_per_env and minutes_per_day must be positive");
  }
  if (cfg.train_days == 0 || cfg.train_days + 2 > cfg.days_per_env) {
    throw Error("separate_environments: need at least one train day plus one validation and one test day");
  }
  const std::size_t expected = cfg.n_envs * cfg.days_per_env * cfg.minutes_per_day;
  if (length != expected) {
    throw LengthMismatchError("dataset has " + std::to_string(length) + " bars, layout requires exactly " +
                              std::to_string(expected));
  }
  std::vector<EnvironmentSplit> splits;
  const std::size_t day = cfg.minutes_per_day;
  for (std::size_t e = 0; e < cfg.n_envs; ++e) {
    const std::size_t start = e * cfg.days_per_env * day;
    EnvironmentSplit split;
    split.env_id = e;
    split.train = {start, start + cfg.train_days * day};
    split.validation = {split.train.end, split.train.end + day};
    split.test = {split.validation.end, start + cfg.days_per_env * day};
    splits.push_back(split);
  }
  return splits;
}

inline std::vector<EnvironmentSplit> separate_environments(const Dataset& data, const SeparationConfig& cfg) {
  return separate_environments(data.size(), cfg);
}

enum class MarketKind { flat, random_walk, sinusoid };

inline std::string to_string(MarketKind kind) {
  switch (kind) {
    case MarketKind::flat: return "flat";
    case MarketKind::random_walk: return "random_walk";
    case MarketKind::sinusoid: return "sinusoid";
  }
  return "unknown";
}

inline MarketKind market_kind_from_string(const std::string& name) {
  if (name == "flat") return MarketKind::flat;
  if (name == "random_walk") return MarketKind::random_walk;
  if (name == "sinusoid") return MarketKind::sinusoid;
  throw ConfigError("unknown market kind '" + name + "'");
}

/// Parameters of the synthetic generators. Fields a kind does not use are
/// ignored by it.
struct SynthParams {
  double base = 100.0;           ///< starting / centre mid-price
  double half_spread = 0.0;      ///< ask - mid (random_walk, sinusoid)
  double amplitude = 1.0;        ///< sinusoid only
  double period = 120.0;         ///< sinusoid only, in minutes
  double drift = 0.0;            ///< random_walk per-minute log drift
  double volatility = 1e-3;      ///< random_walk per-minute log volatility
  std::int64_t start_timestamp = 27447840;  // 2022-03-10T00:00Z in epoch minutes
};

/// Number of engineered features attached to synthetic bars.
inline constexpr std::size_t kSynthFeatureCount = 7;

/// Derives the synthetic feature set from a mid-price path. Rolling
/// windows are truncated at the start of the series.
///   f0  1-minute log return (percent)
///   f1  5-minute log return (percent)
///   f2  15-minute log return (percent)
///   f3  deviation of mid from its 15-minute rolling mean (percent)
///   f4  deviation of mid from its 60-minute rolling mean (percent)
///   f5  population std of 1-minute log returns over 15 minutes (percent)
///   f6  z-score of mid within its 120-minute rolling window
inline std::vector<std::vector<double>> mid_price_features(const std::vector<double>& mid) {
  const std::size_t n = mid.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(kSynthFeatureCount, 0.0));
  auto log_ret = [&](std::size_t t, std::size_t lag) {
    const std::size_t from = t >= lag ? t - lag : 0;
    return 100.0 * std::log(mid[t] / mid[from]);
  };
  auto rolling_mean = [&](std::size_t t, std::size_t window) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    double sum = 0.0;
    for (std::size_t i = lo; i <= t; ++i) sum += mid[i];
    return sum / static_cast<double>(t - lo + 1);
  };
  for (std::size_t t = 0; t < n; ++t) {
    auto& f = out[t];
    f[0] = log_ret(t, 1);
    f[1] = log_ret(t, 5);
    f[2] = log_ret(t, 15);
    f[3] = 100.0 * (mid[t] / rolling_mean(t, 15) - 1.0);
    f[4] = 100.0 * (mid[t] / rolling_mean(t, 60) - 1.0);

    if (t > 0) {
      const std::size_t lo = t >= 15 ? t - 14 : 1;
      const double count = static_cast<double>(t - lo + 1);
      double rsum = 0.0, rsq = 0.0;
      for (std::size_t i = lo; i <= t; ++i) rsum += std::log(mid[i] / mid[i - 1]);
      const double rmean = rsum / count;
      for (std::size_t i = lo; i <= t; ++i) {
        const double d = std::log(mid[i] / mid[i - 1]) - rmean;
        rsq += d * d;
      }
      f[5] = 100.0 * std::sqrt(rsq / count);
    }

    const std::size_t lo120 = t >= 119 ? t - 119 : 0;
    const double count120 = static_cast<double>(t - lo120 + 1);
    const double mean120 = rolling_mean(t, 120);
    double var = 0.0;
    for (std::size_t i = lo120; i <= t; ++i) var += (mid[i] - mean120) * (mid[i] - mean120);
    const double sd = std::sqrt(var / count120);
    // Relative threshold: a flat series can still carry rounding noise.
    f[6] = sd > 1e-12 * std::abs(mean120) ? (mid[t] - mean120) / sd : 0.0;
  }
  return out;
}

/// Deterministic synthetic market.
///   flat         bid = ask = base
///   random_walk  mid_t = mid_{t-1} * exp(drift + volatility * z_t), z_t ~ N(0,1)
///   sinusoid     mid_t = base + amplitude * sin(2 pi t / period)
/// bid/ask sit half_spread below/above mid for the non-flat kinds.
inline Dataset synthesize_market(MarketKind kind, std::size_t length, const SynthParams& params, std::uint64_t seed) {
  if (length < 2) throw Error("synthesize_market: length must be at least 2");
  if (!(params.base > 0.0)) throw InvariantError("synthesize_market: base price must be positive");
  if (params.half_spread < 0.0) throw InvariantError("synthesize_market: half_spread must be non-negative");

  std::vector<double> mid(length);
  switch (kind) {
    case MarketKind::flat:
      std::fill(mid.begin(), mid.end(), params.base);
      break;
    case MarketKind::random_walk: {
      if (params.volatility < 0.0) throw InvariantError("synthesize_market: volatility must be non-negative");
      Rng rng(seed);
      mid[0] = params.base;
      for (std::size_t t = 1; t < length; ++t) {
        mid[t] = mid[t - 1] * std::exp(params.drift + params.volatility * rng.normal());
      }
      break;
    }
    case MarketKind::sinusoid: {
      if (!(params.amplitude > 0.0)) throw InvariantError("synthesize_market: amplitude must be positive");
      if (!(params.period > 0.0)) throw InvariantError("synthesize_market: period must be positive");
      for (std::size_t t = 0; t < length; ++t) {
        mid[t] = params.base + params.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / params.period);
      }
      break;
    }
  }

  const double half_spread = kind == MarketKind::flat ? 0.0 : params.half_spread;
  const auto features = mid_price_features(mid);
  Dataset data;
  data.bars.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    MarketBar bar;
    bar.timestamp = params.start_timestamp + static_cast<std::int64_t>(t);
    bar.bid = mid[t] - half_spread;
    bar.ask = mid[t] + half_spread;
    if (!(bar.bid > 0.0) || !std::isfinite(bar.ask)) {
      throw InvariantError("synthesize_market: parameters produce a non-positive price at t=" + std::to_string(t));
    }
    bar.features = features[t];
    data.bars.push_back(std::move(bar));
  }
  return data;
}

}  // namespace tracesac
