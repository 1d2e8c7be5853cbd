// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Ring buffer of transitions that hands out contiguous multi-step segments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "tracesac/common.hpp"
#include "tracesac/env.hpp"

namespace tracesac {

struct Transition {
  Observation obs;
  double action = 0.0;  ///< continuous action emitted by the acting policy
  double reward = 0.0;
  Observation next_obs;
  double behavior_log_density = 0.0;  ///< log mu(action | obs) at collection time
  bool done = false;
  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Consecutive transitions of one episode. Only the last may be terminal.
struct Segment {
  std::uint64_t first_id = 0;  ///< push counter of transitions[0]
  std::vector<Transition> transitions;

  std::size_t size() const noexcept { return transitions.size(); }
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  std::size_t warmup = 1000;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig config = {}) : config_(config) {
    if (config_.capacity == 0) throw ConfigError("replay.capacity must be positive");
    slots_.reserve(std::min<std::size_t>(config_.capacity, 4096));
  }

  std::size_t size() const noexcept { return slots_.size(); }
  std::size_t capacity() const noexcept { return config_.capacity; }
  const ReplayConfig& config() const noexcept { return config_; }
  bool ready() const noexcept { return slots_.size() >= config_.warmup; }
  std::uint64_t total_pushed() const noexcept { return pushed_; }

  void push(Transition t) {
    if (!std::isfinite(t.behavior_log_density)) throw InvariantError("replay: behavior log-density must be finite");
    const bool terminal = t.done;
    Slot slot{std::move(t), episode_, pushed_};
    if (slots_.size() < config_.capacity) {
      slots_.push_back(std::move(slot));
    } else {
      slots_[head_] = std::move(slot);
      head_ = (head_ + 1) % config_.capacity;
    }
    if (terminal) ++episode_;
    ++pushed_;
  }

  /// Starts a new episode for subsequent pushes even without a terminal.
  void mark_episode_boundary() noexcept {
    if (!slots_.empty() && !at(slots_.size() - 1).transition.done) ++episode_;
  }

  /// i-th oldest stored transition.
  const Transition& operator[](std::size_t i) const { return at(i).transition; }
  std::uint64_t episode_of(std::size_t i) const { return at(i).episode; }

  /// `batch` segments with uniform random start. Each holds up to n+1
  /// transitions and stops at a terminal, an episode change, or the newest
  /// stored transition.
  std::vector<Segment> sample_segments(std::size_t batch, std::size_t n, Rng& rng) const {
    if (!ready() || slots_.empty()) {
      throw NotReadyError("replay: " + std::to_string(slots_.size()) + " transitions stored, warmup is " +
                          std::to_string(config_.warmup));
    }
    std::vector<Segment> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) out.push_back(segment_from(rng.index(slots_.size()), n));
    return out;
  }

  Segment segment_from(std::size_t start, std::size_t n) const {
    Segment seg;
    const Slot& first = at(start);
    seg.first_id = first.id;
    for (std::size_t k = 0; k <= n && start + k < slots_.size(); ++k) {
      const Slot& s = at(start + k);
      if (s.episode != first.episode) break;
      seg.transitions.push_back(s.transition);
      if (s.transition.done) break;
    }
    return seg;
  }

  /// Text snapshot: a `# tracesac-replay v1` line with capacity, warmup and
  /// window shape, a column header, then one row per transition, oldest
  /// first. Values use round-trip precision.
  void save(std::ostream& out) const {
    const std::size_t rows = slots_.empty() ? 0 : at(0).transition.obs.rows;
    const std::size_t cols = slots_.empty() ? 0 : at(0).transition.obs.cols;
    out << "# tracesac-replay v1 capacity=" << config_.capacity << " warmup=" << config_.warmup << " rows=" << rows
        << " cols=" << cols << " count=" << slots_.size() << '\n';
    out << "episode,action,reward,behavior_log_density,done,balance,holdings";
    for (std::size_t k = 0; k < rows * cols; ++k) out << ",w" << k;
    out << ",next_balance,next_holdings";
    for (std::size_t k = 0; k < rows * cols; ++k) out << ",nw" << k;
    out << '\n';
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const Slot& s = at(i);
      const Transition& t = s.transition;
      out << s.episode << ',' << format_exact(t.action) << ',' << format_exact(t.reward) << ','
          << format_exact(t.behavior_log_density) << ',' << (t.done ? 1 : 0) << ',' << format_exact(t.obs.balance)
          << ',' << format_exact(t.obs.holdings);
      for (double w : t.obs.window) out << ',' << format_exact(w);
      out << ',' << format_exact(t.next_obs.balance) << ',' << format_exact(t.next_obs.holdings);
      for (double w : t.next_obs.window) out << ',' << format_exact(w);
      out << '\n';
    }
  }

  static ReplayBuffer load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("# tracesac-replay v1", 0) != 0) {
      throw ParseError(1, "not a tracesac-replay v1 snapshot");
    }
    auto field = [&](const std::string& key) -> std::size_t {
      const std::size_t pos = line.find(key + "=");
      if (pos == std::string::npos) throw ParseError(1, "missing '" + key + "' in snapshot header");
      return static_cast<std::size_t>(std::stoull(line.substr(pos + key.size() + 1)));
    };
    ReplayConfig cfg{field("capacity"), field("warmup")};
    const std::size_t rows = field("rows");
    const std::size_t cols = field("cols");
    const std::size_t count = field("count");
    ReplayBuffer buffer(cfg);
    std::getline(in, line);  // column header
    const std::size_t width = rows * cols;
    std::size_t line_no = 2;
    std::uint64_t last_episode = 0;
    for (std::size_t i = 0; i < count; ++i) {
      ++line_no;
      if (!std::getline(in, line)) throw ParseError(line_no, "snapshot truncated");
      const auto f = split_csv_line(line);
      if (f.size() != 9 + 2 * width) throw ParseError(line_no, "wrong field count in snapshot row");
      Transition t;
      const auto episode = static_cast<std::uint64_t>(parse_int(f[0], line_no, "episode"));
      t.action = parse_double(f[1], line_no, "action");
      t.reward = parse_double(f[2], line_no, "reward");
      t.behavior_log_density = parse_double(f[3], line_no, "behavior_log_density");
      t.done = parse_int(f[4], line_no, "done") != 0;
      auto read_obs = [&](Observation& obs, std::size_t offset) {
        obs.balance = parse_double(f[offset], line_no, "balance");
        obs.holdings = parse_double(f[offset + 1], line_no, "holdings");
        obs.rows = rows;
        obs.cols = cols;
        obs.window.resize(width);
        for (std::size_t k = 0; k < width; ++k) obs.window[k] = parse_double(f[offset + 2 + k], line_no, "window");
      };
      read_obs(t.obs, 5);
      read_obs(t.next_obs, 7 + width);
      // Episode ids are renumbered densely; boundaries are what matter.
      if (i > 0 && episode != last_episode && !buffer[buffer.size() - 1].done) ++buffer.episode_;
      last_episode = episode;
      buffer.push(std::move(t));
    }
    return buffer;
  }

 private:
  struct Slot {
    Transition transition;
    std::uint64_t episode = 0;
    std::uint64_t id = 0;
  };

  const Slot& at(std::size_t i) const {
    return slots_.size() < config_.capacity ? slots_[i] : slots_[(head_ + i) % config_.capacity];
  }

  ReplayConfig config_;
  std::vector<Slot> slots_;
  std::size_t head_ = 0;  ///< index of the oldest slot once full
  std::uint64_t episode_ = 0;
  std::uint64_t pushed_ = 0;
};

}  // namespace tracesac
