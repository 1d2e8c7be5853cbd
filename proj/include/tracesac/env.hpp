// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-asset market replay environment with bid/ask execution,
// proportional commission and log-wealth rewards.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tracesac/common.hpp"
#include "tracesac/data.hpp"

namespace tracesac {

enum class MarkRule {
  bid_for_long,  ///< longs marked at bid, shorts at ask
  mid,
};

struct EnvConfig {
  double h_max = 0.1;  ///< action bound, in shares per step
  std::size_t lookback = 3;
  double unit = 0.01;  ///< minimum trading unit
  double commission = 0.0;
  double initial_balance = 1000.0;
  MarkRule mark_rule = MarkRule::bid_for_long;

  void validate() const {
    if (!(h_max > 0.0)) throw ConfigError("env.h_max must be positive");
    if (!(unit > 0.0)) throw ConfigError("env.unit must be positive");
    if (unit > h_max) throw ConfigError("env.unit must not exceed env.h_max");
    if (commission < 0.0) throw ConfigError("env.commission must be non-negative");
    if (!(initial_balance > 0.0)) throw ConfigError("env.initial_balance must be positive");
  }
};

struct EnvState {
  std::size_t t = 0;
  double balance = 0.0;
  double holdings = 0.0;
  double wealth = 0.0;
};

/// Agent-visible state: cash, position and a (lookback+1) x (F+2) window
/// whose rows run oldest to newest and hold [features..., bid, ask].
struct Observation {
  double balance = 0.0;
  double holdings = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> window;

  double at(std::size_t row, std::size_t col) const { return window[row * cols + col]; }
  double last_bid() const { return at(rows - 1, cols - 2); }
  double last_ask() const { return at(rows - 1, cols - 1); }
  double last_mid() const { return 0.5 * (last_bid() + last_ask()); }
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct StepInfo {
  double requested = 0.0;  ///< action after clamping
  double executed = 0.0;   ///< shares actually traded
  double price = 0.0;      ///< execution price, 0 when nothing traded
  double fee = 0.0;
  bool clamped = false;
  bool ruined = false;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Wealth floor used when a step wipes out the account.
inline constexpr double kRuinFloor = 1e-9;

/// sign(a) * floor(|a| / unit) * unit. A relative slack of 1e-9 absorbs
/// representation error so that e.g. 0.03 / 0.01 floors to 3, not 2.
inline double discretize_action(double action, double unit) {
  const double steps = std::floor(std::abs(action) / unit + 1e-9);
  const double magnitude = steps * unit;
  return action < 0.0 ? -magnitude : magnitude;
}

/// 100 * sum of per-step log rewards, i.e. 100 * log(v_T / v_0).
inline double cumulative_log_return(std::span<const double> step_rewards) {
  if (step_rewards.empty()) throw Error("cumulative_log_return: empty reward sequence");
  double total = 0.0;
  for (double r : step_rewards) total += r;
  return 100.0 * total;
}

struct TraceRow {
  std::size_t t = 0;
  double action = 0.0;
  double executed = 0.0;
  double price = 0.0;
  double fee = 0.0;
  double balance = 0.0;
  double holdings = 0.0;
  double wealth = 0.0;
  double reward = 0.0;
};

inline void write_episode_trace(std::ostream& out, std::span<const TraceRow> rows) {
  out << "t,action,executed,price,fee,balance,holdings,wealth,reward\n";
  for (const TraceRow& r : rows) {
    out << r.t << ',' << format_exact(r.action) << ',' << format_exact(r.executed) << ',' << format_exact(r.price)
        << ',' << format_exact(r.fee) << ',' << format_exact(r.balance) << ',' << format_exact(r.holdings) << ','
        << format_exact(r.wealth) << ',' << format_exact(r.reward) << '\n';
  }
}

class TradingEnv {
 public:
  /// `data` must outlive the environment.
  TradingEnv(const Dataset& data, EnvConfig config) : data_(&data), config_(config) { config_.validate(); }

  const EnvConfig& config() const noexcept { return config_; }
  const EnvState& state() const noexcept { return state_; }
  const std::vector<TraceRow>& trace() const noexcept { return trace_; }
  bool done() const noexcept { return done_; }
  IndexRange range() const noexcept { return range_; }
  std::size_t feature_count() const noexcept { return data_->feature_count(); }

  Observation reset(IndexRange range) {
    if (range.end > data_->size()) throw Error("reset: range exceeds dataset");
    if (range.size() <= config_.lookback + 1) {
      throw Error("reset: range of " + std::to_string(range.size()) + " bars is too short for lookback " +
                  std::to_string(config_.lookback));
    }
    range_ = range;
    state_.t = range.begin;
    state_.balance = config_.initial_balance;
    state_.holdings = 0.0;
    state_.wealth = config_.initial_balance;
    done_ = false;
    trace_.clear();
    return observe();
  }

  StepResult step(double action) {
    if (done_) throw Error("step called on a finished episode");
    StepResult result;
    StepInfo& info = result.info;

    double a = action;
    if (!std::isfinite(a)) a = 0.0;
    if (std::abs(a) > config_.h_max) {
      a = std::clamp(a, -config_.h_max, config_.h_max);
      info.clamped = true;
    }
    info.requested = a;

    const MarketBar& bar = (*data_)[state_.t];
    const double delta = discretize_action(a, config_.unit);
    if (delta != 0.0) {
      const double price = delta > 0.0 ? bar.ask : bar.bid;
      const double fee = config_.commission * price * std::abs(delta);
      state_.balance -= price * delta + fee;
      state_.holdings += delta;
      info.price = price;
      info.fee = fee;
    }
    info.executed = delta;

    const double previous_wealth = state_.wealth;
    const std::size_t acted_at = state_.t;
    state_.t += 1;
    const double next_wealth = state_.balance + state_.holdings * mark_price(state_.t, state_.holdings);
    if (next_wealth <= 0.0 || !std::isfinite(next_wealth)) {
      result.reward = std::log(kRuinFloor / previous_wealth);
      state_.wealth = kRuinFloor;
      info.ruined = true;
      done_ = true;
    } else {
      result.reward = std::log(next_wealth / previous_wealth);
      state_.wealth = next_wealth;
      done_ = state_.t + 1 >= range_.end;
    }
    result.done = done_;
    result.observation = observe();

    trace_.push_back({acted_at, action, delta, info.price, info.fee, state_.balance, state_.holdings, state_.wealth,
                      result.reward});
    return result;
  }

  /// Mark-to-market wealth at bar t for the given position.
  double wealth_at(std::size_t t, double balance, double holdings) const {
    return balance + holdings * mark_price(t, holdings);
  }

  Observation observe() const {
    Observation obs;
    obs.balance = state_.balance;
    obs.holdings = state_.holdings;
    obs.rows = config_.lookback + 1;
    obs.cols = data_->feature_count() + 2;
    obs.window.reserve(obs.rows * obs.cols);
    for (std::size_t r = 0; r < obs.rows; ++r) {
      const std::size_t back = config_.lookback - r;
      const std::size_t idx = state_.t >= range_.begin + back ? state_.t - back : range_.begin;
      const MarketBar& bar = (*data_)[idx];
      obs.window.insert(obs.window.end(), bar.features.begin(), bar.features.end());
      obs.window.push_back(bar.bid);
      obs.window.push_back(bar.ask);
    }
    return obs;
  }

 private:
  double mark_price(std::size_t t, double holdings) const {
    const MarketBar& bar = (*data_)[t];
    if (config_.mark_rule == MarkRule::mid) return bar.mid();
    return holdings >= 0.0 ? bar.bid : bar.ask;
  }

  const Dataset* data_;
  EnvConfig config_;
  EnvState state_;
  IndexRange range_;
  bool done_ = true;
  std::vector<TraceRow> trace_;
};

}  // namespace tracesac
