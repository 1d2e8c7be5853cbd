// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Soft actor-critic with multi-step trace-corrected critic targets.
//
// Each critic and the actor own an LSTM encoder over the observation
// window followed by a two-layer tanh MLP head. Bootstrap values come from
// the minimum of two target critics; the actor is updated every
// `policy_delay` critic updates, together with Polyak averaging of the
// target critics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tracesac/common.hpp"
#include "tracesac/data.hpp"
#include "tracesac/env.hpp"
#include "tracesac/nn.hpp"
#include "tracesac/replay.hpp"
#include "tracesac/traces.hpp"

namespace tracesac {

struct NetworkConfig {
  std::size_t lstm_hidden = 64;
  std::size_t hidden = 64;
};

struct AgentConfig {
  TraceSpec trace;
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double tau = 0.005;
  std::size_t batch = 64;
  std::size_t grad_steps_per_env_step = 2;
  std::size_t policy_delay = 2;
  std::size_t episodes = 30;
  std::size_t validate_every = 5;
  std::uint64_t seed = 0;
  ReplayConfig replay;
  NetworkConfig network;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    trace.validate();
    if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw ConfigError("agent learning rates must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("agent.tau must lie in (0, 1]");
    if (batch == 0) throw ConfigError("agent.batch must be positive");
    if (grad_steps_per_env_step == 0) throw ConfigError("agent.grad_steps_per_env_step must be positive");
    if (policy_delay == 0) throw ConfigError("agent.policy_delay must be positive");
    if (episodes == 0) throw ConfigError("agent.episodes must be positive");
    if (validate_every == 0) throw ConfigError("agent.validate_every must be at least 1");
    if (replay.capacity == 0) throw ConfigError("agent.replay.capacity must be positive");
    if (network.lstm_hidden == 0 || network.hidden == 0) throw ConfigError("agent.network sizes must be positive");
  }
};

template <typename Scalar>
struct ObsBatch {
  std::vector<nn::Mat<Scalar>> steps;  ///< one (F+2) x B matrix per window row
  nn::Mat<Scalar> side;                ///< 2 x B: cash and exposure, relative to initial balance

  nn::Index size() const noexcept { return side.cols(); }
};

/// Turns observations into network inputs. Features pass through; bid and
/// ask become percent offsets from the newest mid; cash and exposure are
/// divided by the initial balance.
class ObservationFeaturizer {
 public:
  ObservationFeaturizer(double initial_balance, std::size_t rows, std::size_t cols)
      : initial_balance_(initial_balance), rows_(rows), cols_(cols) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  template <typename Scalar>
  ObsBatch<Scalar> batch(std::span<const Observation* const> obs) const {
    const auto b = static_cast<nn::Index>(obs.size());
    ObsBatch<Scalar> out;
    out.steps.assign(rows_, nn::Mat<Scalar>(static_cast<nn::Index>(cols_), b));
    out.side.resize(2, b);
    for (nn::Index j = 0; j < b; ++j) {
      const Observation& o = *obs[static_cast<std::size_t>(j)];
      if (o.rows != rows_ || o.cols != cols_ || o.window.size() != rows_ * cols_) {
        throw InvariantError("featurizer: observation window shape does not match the agent");
      }
      const double mid = o.last_mid();
      for (std::size_t r = 0; r < rows_; ++r) {
        auto col = out.steps[r].col(j);
        for (std::size_t c = 0; c + 2 < cols_; ++c) col(static_cast<nn::Index>(c)) = static_cast<Scalar>(o.at(r, c));
        col(static_cast<nn::Index>(cols_ - 2)) = static_cast<Scalar>(100.0 * (o.at(r, cols_ - 2) / mid - 1.0));
        col(static_cast<nn::Index>(cols_ - 1)) = static_cast<Scalar>(100.0 * (o.at(r, cols_ - 1) / mid - 1.0));
      }
      out.side(0, j) = static_cast<Scalar>(o.balance / initial_balance_);
      out.side(1, j) = static_cast<Scalar>(o.holdings * mid / initial_balance_);
    }
    return out;
  }

  template <typename Scalar>
  ObsBatch<Scalar> batch(const std::vector<const Observation*>& obs) const {
    return batch<Scalar>(std::span<const Observation* const>(obs.data(), obs.size()));
  }

 private:
  double initial_balance_;
  std::size_t rows_;
  std::size_t cols_;
};

/// LSTM encoder + MLP head over [encoding; side; extra rows].
template <typename Scalar>
class EncoderHead {
 public:
  using Mat = nn::Mat<Scalar>;

  struct Cache {
    typename nn::Lstm<Scalar>::Cache encoder;
    typename nn::Dense<Scalar>::Cache hidden1, hidden2, output;
  };

  EncoderHead() = default;
  EncoderHead(const std::string& name, nn::Index input_size, nn::Index extra_rows, nn::Index outputs,
              const NetworkConfig& net)
      : encoder(name + ".encoder", input_size, static_cast<nn::Index>(net.lstm_hidden)),
        hidden1(name + ".hidden1", static_cast<nn::Index>(net.lstm_hidden) + 2 + extra_rows,
                static_cast<nn::Index>(net.hidden), nn::Activation::tanh),
        hidden2(name + ".hidden2", static_cast<nn::Index>(net.hidden), static_cast<nn::Index>(net.hidden),
                nn::Activation::tanh),
        output(name + ".output", static_cast<nn::Index>(net.hidden), outputs, nn::Activation::identity),
        extra_rows_(extra_rows) {}

  void init(Rng& rng) {
    encoder.init(rng);
    hidden1.init(rng);
    hidden2.init(rng);
    output.init(rng);
  }

  Mat forward(const ObsBatch<Scalar>& obs, const Mat& extra, Cache* cache) const {
    const auto hs = encoder.forward(obs.steps, {}, {}, cache ? &cache->encoder : nullptr);
    const nn::Index h = encoder.hidden_size();
    Mat input(h + 2 + extra_rows_, obs.size());
    input.topRows(h) = hs.back();
    input.middleRows(h, 2) = obs.side;
    if (extra_rows_ > 0) {
      if (extra.rows() != extra_rows_ || extra.cols() != obs.size()) throw InvariantError("head: extra input has the wrong shape");
      input.bottomRows(extra_rows_) = extra;
    }
    Mat y = hidden1.forward(input, cache ? &cache->hidden1 : nullptr);
    y = hidden2.forward(y, cache ? &cache->hidden2 : nullptr);
    return output.forward(y, cache ? &cache->output : nullptr);
  }

  /// Returns the gradient on the extra rows. Parameter gradients are only
  /// touched when `accumulate` is set; otherwise the encoder is skipped.
  Mat backward(const Cache& cache, const Mat& grad_out, bool accumulate) {
    Mat g = output.backward(cache.output, grad_out, accumulate);
    g = hidden2.backward(cache.hidden2, g, accumulate);
    g = hidden1.backward(cache.hidden1, g, accumulate);
    const nn::Index h = encoder.hidden_size();
    if (accumulate) {
      std::vector<Mat> grad_h(cache.encoder.x.size());
      grad_h.back() = g.topRows(h);
      encoder.backward(cache.encoder, grad_h, true);
    }
    return extra_rows_ > 0 ? Mat(g.bottomRows(extra_rows_)) : Mat();
  }

  std::vector<nn::ParamBlock<Scalar>*> params() {
    std::vector<nn::ParamBlock<Scalar>*> out;
    for (auto* p : encoder.params()) out.push_back(p);
    for (auto* layer : {&hidden1, &hidden2, &output}) {
      for (auto* p : layer->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<const nn::ParamBlock<Scalar>*> params() const {
    std::vector<const nn::ParamBlock<Scalar>*> out;
    for (auto* p : const_cast<EncoderHead*>(this)->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  nn::Lstm<Scalar> encoder;
  nn::Dense<Scalar> hidden1;
  nn::Dense<Scalar> hidden2;
  nn::Dense<Scalar> output;

 private:
  nn::Index extra_rows_ = 0;
};

/// Copy of `online` blended in: target <- tau online + (1 - tau) target.
template <typename Scalar>
void polyak_update(EncoderHead<Scalar>& target, EncoderHead<Scalar>& online, double tau) {
  auto dst = target.params();
  auto src = online.params();
  const auto t = static_cast<Scalar>(tau);
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (tau == 1.0) {
      dst[k]->value = src[k]->value;
    } else {
      dst[k]->value = t * src[k]->value + (Scalar(1) - t) * dst[k]->value;
    }
  }
}

struct PolicyAction {
  double action = 0.0;
  double log_density = 0.0;
  double mean = 0.0;
  double log_std = 0.0;
};

struct UpdateStats {
  double critic_loss = 0.0;
  std::optional<double> actor_loss;
};

template <typename Scalar = float>
class TraceSacAgent {
 public:
  using Mat = nn::Mat<Scalar>;
  using Head = EncoderHead<Scalar>;

  TraceSacAgent(const AgentConfig& config, const EnvConfig& env, std::size_t feature_count)
      : config_(config),
        h_max_(env.h_max),
        featurizer_(env.initial_balance, env.lookback + 1, feature_count + 2),
        rng_(config.seed) {
    config_.validate();
    const auto input = static_cast<nn::Index>(feature_count + 2);
    actor_ = Head("actor", input, 0, 2, config.network);
    critic1_ = Head("critic1", input, 1, 1, config.network);
    critic2_ = Head("critic2", input, 1, 1, config.network);
    target1_ = Head("target1", input, 1, 1, config.network);
    target2_ = Head("target2", input, 1, 1, config.network);
    actor_.init(rng_);
    critic1_.init(rng_);
    critic2_.init(rng_);
    polyak_update(target1_, critic1_, 1.0);
    polyak_update(target2_, critic2_, 1.0);
  }

  const AgentConfig& config() const noexcept { return config_; }
  AgentConfig& mutable_config() noexcept { return config_; }
  double h_max() const noexcept { return h_max_; }
  const ObservationFeaturizer& featurizer() const noexcept { return featurizer_; }
  Rng& rng() noexcept { return rng_; }
  std::size_t update_count() const noexcept { return update_count_; }

  Head& actor() noexcept { return actor_; }
  Head& critic1() noexcept { return critic1_; }
  Head& critic2() noexcept { return critic2_; }
  Head& target_critic1() noexcept { return target1_; }
  Head& target_critic2() noexcept { return target2_; }

  /// Raw actor outputs (mean, unclamped log_std) for a batch.
  Mat policy_outputs(const std::vector<const Observation*>& obs) const {
    return actor_.forward(featurizer_.batch<Scalar>(obs), Mat(), nullptr);
  }

  /// Stochastic mode samples fresh noise; deterministic mode uses noise 0,
  /// i.e. h_max tanh(mean).
  PolicyAction act(const Observation& obs, bool stochastic) {
    const Mat out = policy_outputs({&obs});
    const double noise = stochastic ? rng_.normal() : 0.0;
    const auto s = nn::sample_squashed_gaussian(static_cast<double>(out(0, 0)), static_cast<double>(out(1, 0)), noise,
                                                h_max_);
    return {s.action, s.log_density, s.mean, s.log_std};
  }

  Mat q_values(Head& critic, const std::vector<const Observation*>& obs, std::span<const double> actions) const {
    return critic.forward(featurizer_.batch<Scalar>(obs), scaled_actions(actions), nullptr);
  }

  /// Trace-corrected targets, one per segment, built only from the target
  /// critics and the current actor.
  std::vector<double> compute_targets(const std::vector<Segment>& segments) {
    std::vector<const Observation*> obs, next;
    std::vector<double> actions;
    std::vector<std::size_t> offset{0};
    for (const Segment& seg : segments) {
      if (seg.transitions.empty()) throw Error("compute_targets: empty segment");
      for (const Transition& t : seg.transitions) {
        obs.push_back(&t.obs);
        next.push_back(&t.next_obs);
        actions.push_back(t.action);
      }
      offset.push_back(obs.size());
    }
    const std::size_t total = obs.size();
    const auto obs_batch = featurizer_.batch<Scalar>(obs);
    const auto next_batch = featurizer_.batch<Scalar>(next);

    const Mat next_policy = actor_.forward(next_batch, Mat(), nullptr);
    std::vector<double> next_actions(total), next_log_pi(total);
    for (std::size_t i = 0; i < total; ++i) {
      const auto j = static_cast<nn::Index>(i);
      const auto s = nn::sample_squashed_gaussian(static_cast<double>(next_policy(0, j)),
                                                  static_cast<double>(next_policy(1, j)), rng_.normal(), h_max_);
      next_actions[i] = s.action;
      next_log_pi[i] = s.log_density;
    }
    const Mat current_policy = actor_.forward(obs_batch, Mat(), nullptr);
    std::vector<double> stored_log_pi(total);
    for (std::size_t i = 0; i < total; ++i) {
      const auto j = static_cast<nn::Index>(i);
      stored_log_pi[i] = nn::squashed_gaussian_log_density(static_cast<double>(current_policy(0, j)),
                                                           static_cast<double>(current_policy(1, j)), actions[i],
                                                           h_max_);
    }

    const Mat a_stored = scaled_actions(actions);
    const Mat a_next = scaled_actions(next_actions);
    const Mat q_cur = target1_.forward(obs_batch, a_stored, nullptr).cwiseMin(target2_.forward(obs_batch, a_stored, nullptr));
    const Mat q_next = target1_.forward(next_batch, a_next, nullptr).cwiseMin(target2_.forward(next_batch, a_next, nullptr));

    const TraceSpec& spec = config_.trace;
    std::vector<double> targets(segments.size());
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& tr = segments[s].transitions;
      SegmentEval eval;
      for (std::size_t j = 0; j < tr.size(); ++j) {
        const std::size_t i = offset[s] + j;
        double q_boot = static_cast<double>(q_next(0, static_cast<nn::Index>(i)));
        double log_boot = next_log_pi[i];
        if (spec.kind == TraceKind::peng_q && j + 1 < tr.size()) {
          // Mixture bootstrap at the stored next action, where both the
          // target and the behavior density are known.
          q_boot = static_cast<double>(q_cur(0, static_cast<nn::Index>(i + 1)));
          log_boot = std::log(mixed_target_density(spec.lambda, std::exp(stored_log_pi[i + 1]),
                                                   std::exp(tr[j + 1].behavior_log_density)));
        }
        if (tr[j].done) {
          q_boot = 0.0;
          log_boot = 0.0;
        }
        eval.delta.push_back(soft_td_error(tr[j].reward, q_boot, log_boot,
                                           static_cast<double>(q_cur(0, static_cast<nn::Index>(i))), spec.gamma,
                                           spec.alpha_ent));
        eval.log_pi.push_back(stored_log_pi[i]);
        eval.log_mu.push_back(tr[j].behavior_log_density);
      }
      fill_coefficients(eval, spec.kind, spec.lambda);
      targets[s] = retrace_target(eval, static_cast<double>(q_cur(0, static_cast<nn::Index>(offset[s]))), spec);
      if (!std::isfinite(targets[s])) {
        throw InvariantError("critic target for segment " + std::to_string(s) + " (first id " +
                             std::to_string(segments[s].first_id) + ") is not finite");
      }
    }
    return targets;
  }

  /// 0.5 * (L1 + L2), L_k = mean 0.5 (Q_k(s_0, a_0) - target)^2. Adds
  /// gradients into both online critics when `accumulate` is set.
  double critic_loss(const std::vector<Segment>& segments, const std::vector<double>& targets, bool accumulate) {
    std::vector<const Observation*> obs;
    std::vector<double> actions;
    for (const Segment& seg : segments) {
      obs.push_back(&seg.transitions.front().obs);
      actions.push_back(seg.transitions.front().action);
    }
    const auto batch = featurizer_.batch<Scalar>(obs);
    const Mat a = scaled_actions(actions);
    const auto n = static_cast<double>(segments.size());
    double loss = 0.0;
    for (Head* critic : {&critic1_, &critic2_}) {
      typename Head::Cache cache;
      const Mat q = critic->forward(batch, a, accumulate ? &cache : nullptr);
      Mat grad(1, q.cols());
      for (nn::Index j = 0; j < q.cols(); ++j) {
        const double diff = static_cast<double>(q(0, j)) - targets[static_cast<std::size_t>(j)];
        loss += 0.5 * (0.5 * diff * diff) / n;
        grad(0, j) = static_cast<Scalar>(0.5 * diff / n);
      }
      if (accumulate) critic->backward(cache, grad, true);
    }
    return loss;
  }

  double critic_update(const std::vector<Segment>& segments) {
    const std::vector<double> targets = compute_targets(segments);
    critic1_.zero_grad();
    critic2_.zero_grad();
    const double loss = critic_loss(segments, targets, true);
    const nn::AdamConfig adam = adam_config(config_.lr_critic);
    for (auto* p : critic1_.params()) nn::adam_step(*p, adam);
    for (auto* p : critic2_.params()) nn::adam_step(*p, adam);
    return loss;
  }

  /// mean_i [alpha log pi(f(s_i; e_i) | s_i) - min(Q1, Q2)(s_i, f(s_i; e_i))].
  /// With `accumulate`, adds the actor gradient; critics are left untouched.
  double actor_loss(const std::vector<const Observation*>& states, std::span<const double> noise, bool accumulate) {
    const auto batch = featurizer_.batch<Scalar>(states);
    typename Head::Cache actor_cache;
    const Mat out = actor_.forward(batch, Mat(), accumulate ? &actor_cache : nullptr);
    const auto b = out.cols();
    const double alpha = config_.trace.alpha_ent;
    const auto n = static_cast<double>(b);

    std::vector<nn::GaussianPolicyOutput> samples(static_cast<std::size_t>(b));
    Mat a(1, b);
    for (nn::Index j = 0; j < b; ++j) {
      samples[static_cast<std::size_t>(j)] = nn::sample_squashed_gaussian(
          static_cast<double>(out(0, j)), static_cast<double>(out(1, j)), noise[static_cast<std::size_t>(j)], h_max_);
      a(0, j) = static_cast<Scalar>(samples[static_cast<std::size_t>(j)].action / h_max_);
    }
    typename Head::Cache c1_cache, c2_cache;
    const Mat q1 = critic1_.forward(batch, a, accumulate ? &c1_cache : nullptr);
    const Mat q2 = critic2_.forward(batch, a, accumulate ? &c2_cache : nullptr);

    double loss = 0.0;
    Mat g1 = Mat::Zero(1, b), g2 = Mat::Zero(1, b);
    for (nn::Index j = 0; j < b; ++j) {
      const bool first = q1(0, j) <= q2(0, j);
      const double q = static_cast<double>(first ? q1(0, j) : q2(0, j));
      loss += (alpha * samples[static_cast<std::size_t>(j)].log_density - q) / n;
      (first ? g1 : g2)(0, j) = static_cast<Scalar>(-1.0 / n);
    }
    if (!accumulate) return loss;

    // dL/da through the selected critic; critic parameters stay untouched.
    const Mat da1 = critic1_.backward(c1_cache, g1, false);
    const Mat da2 = critic2_.backward(c2_cache, g2, false);
    Mat grad_out(2, b);
    for (nn::Index j = 0; j < b; ++j) {
      const double dl_da = static_cast<double>(da1(0, j) + da2(0, j)) / h_max_;
      const auto g = nn::squashed_sample_grad(static_cast<double>(out(0, j)), static_cast<double>(out(1, j)),
                                              noise[static_cast<std::size_t>(j)], h_max_);
      grad_out(0, j) = static_cast<Scalar>(alpha * g.dlogp_dmean / n + dl_da * g.daction_dmean);
      grad_out(1, j) = static_cast<Scalar>(alpha * g.dlogp_dlog_std / n + dl_da * g.daction_dlog_std);
    }
    actor_.backward(actor_cache, grad_out, true);
    return loss;
  }

  double actor_update(const std::vector<Segment>& segments) {
    std::vector<const Observation*> states;
    for (const Segment& seg : segments) states.push_back(&seg.transitions.front().obs);
    std::vector<double> noise(states.size());
    for (double& e : noise) e = rng_.normal();
    actor_.zero_grad();
    const double loss = actor_loss(states, noise, true);
    const nn::AdamConfig adam = adam_config(config_.lr_actor);
    for (auto* p : actor_.params()) nn::adam_step(*p, adam);
    return loss;
  }

  void target_update(double tau) {
    polyak_update(target1_, critic1_, tau);
    polyak_update(target2_, critic2_, tau);
  }

  /// One critic step; every policy_delay-th call also steps the actor and
  /// the target critics.
  UpdateStats update(const std::vector<Segment>& segments) {
    UpdateStats stats;
    stats.critic_loss = critic_update(segments);
    ++update_count_;
    if (update_count_ % config_.policy_delay == 0) {
      stats.actor_loss = actor_update(segments);
      target_update(config_.tau);
    }
    return stats;
  }

  std::vector<const nn::ParamBlock<Scalar>*> all_params() const {
    std::vector<const nn::ParamBlock<Scalar>*> out;
    for (const Head* h : {&actor_, &critic1_, &critic2_, &target1_, &target2_}) {
      for (auto* p : h->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<nn::ParamBlock<Scalar>*> all_params() {
    std::vector<nn::ParamBlock<Scalar>*> out;
    for (Head* h : {&actor_, &critic1_, &critic2_, &target1_, &target2_}) {
      for (auto* p : h->params()) out.push_back(p);
    }
    return out;
  }

  void save(std::ostream& out) const { nn::save_checkpoint<Scalar>(out, all_params()); }
  void load(std::istream& in) { nn::load_checkpoint<Scalar>(in, all_params()); }

 private:
  Mat scaled_actions(std::span<const double> actions) const {
    Mat a(1, static_cast<nn::Index>(actions.size()));
    for (std::size_t i = 0; i < actions.size(); ++i) a(0, static_cast<nn::Index>(i)) = static_cast<Scalar>(actions[i] / h_max_);
    return a;
  }

  nn::AdamConfig adam_config(double lr) const {
    return {lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps};
  }

  AgentConfig config_;
  double h_max_;
  ObservationFeaturizer featurizer_;
  Rng rng_;
  Head actor_, critic1_, critic2_, target1_, target2_;
  std::size_t update_count_ = 0;
};

// ---------------------------------------------------------------------------
// Episodes and the training loop.
// ---------------------------------------------------------------------------

struct EpisodeOutcome {
  double return_pct = 0.0;
  double initial_wealth = 0.0;
  double final_wealth = 0.0;
  std::vector<double> rewards;
  std::vector<TraceRow> trace;
};

inline EpisodeOutcome finish_episode(const TradingEnv& env, std::vector<double> rewards, double initial_wealth) {
  EpisodeOutcome out;
  out.return_pct = cumulative_log_return(rewards);
  out.initial_wealth = initial_wealth;
  out.final_wealth = env.state().wealth;
  out.rewards = std::move(rewards);
  out.trace = env.trace();
  return out;
}

/// Runs the agent's policy over `range` without learning.
template <typename Scalar>
EpisodeOutcome run_policy_episode(TraceSacAgent<Scalar>& agent, const Dataset& data, IndexRange range,
                                  const EnvConfig& env_cfg, bool stochastic) {
  TradingEnv env(data, env_cfg);
  Observation obs = env.reset(range);
  std::vector<double> rewards;
  while (!env.done()) {
    const PolicyAction a = agent.act(obs, stochastic);
    StepResult step = env.step(a.action);
    rewards.push_back(step.reward);
    obs = std::move(step.observation);
  }
  return finish_episode(env, std::move(rewards), env_cfg.initial_balance);
}

/// Uniform random actions in [-h_max, h_max].
inline EpisodeOutcome run_random_episode(const Dataset& data, IndexRange range, const EnvConfig& env_cfg,
                                         std::uint64_t seed) {
  TradingEnv env(data, env_cfg);
  env.reset(range);
  Rng rng(seed);
  std::vector<double> rewards;
  while (!env.done()) rewards.push_back(env.step(rng.uniform(-env_cfg.h_max, env_cfg.h_max)).reward);
  return finish_episode(env, std::move(rewards), env_cfg.initial_balance);
}

struct MetricsRow {
  std::size_t episode = 0;
  std::size_t steps = 0;
  std::optional<double> critic_loss;
  std::optional<double> actor_loss;
  double train_return_pct = 0.0;
  std::optional<double> val_return_pct;
  std::uint64_t seed = 0;
  std::size_t env_id = 0;
  std::string trace_kind;
};

inline constexpr const char* kMetricsHeader =
    "episode,steps,critic_loss,actor_loss,train_return_pct,val_return_pct,seed,env_id,trace_kind";

inline void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_exact(*v) : std::string(); };
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) {
    out << r.episode << ',' << r.steps << ',' << opt(r.critic_loss) << ',' << opt(r.actor_loss) << ','
        << format_exact(r.train_return_pct) << ',' << opt(r.val_return_pct) << ',' << r.seed << ',' << r.env_id << ','
        << r.trace_kind << '\n';
  }
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) throw ParseError(1, "unexpected metrics header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  auto opt = [&](std::string_view s, const char* col) -> std::optional<double> {
    if (trim(s).empty()) return std::nullopt;
    return parse_double(s, line_no, col);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(trim(line));
    if (f.size() != 9) throw ParseError(line_no, "expected 9 metrics fields");
    MetricsRow r;
    r.episode = static_cast<std::size_t>(parse_int(f[0], line_no, "episode"));
    r.steps = static_cast<std::size_t>(parse_int(f[1], line_no, "steps"));
    r.critic_loss = opt(f[2], "critic_loss");
    r.actor_loss = opt(f[3], "actor_loss");
    r.train_return_pct = parse_double(f[4], line_no, "train_return_pct");
    r.val_return_pct = opt(f[5], "val_return_pct");
    r.seed = static_cast<std::uint64_t>(parse_int(f[6], line_no, "seed"));
    r.env_id = static_cast<std::size_t>(parse_int(f[7], line_no, "env_id"));
    r.trace_kind = std::string(trim(f[8]));
    rows.push_back(std::move(r));
  }
  return rows;
}

template <typename Scalar = float>
struct TrainingResult {
  std::vector<MetricsRow> metrics;
  TraceSacAgent<Scalar> agent;
};

/// Collect-and-train loop on one environment split: one stochastic env
/// step, then grad_steps_per_env_step updates once the buffer is warm. A
/// deterministic validation episode follows every validate_every-th
/// training episode.
template <typename Scalar = float>
TrainingResult<Scalar> train(const Dataset& data, const EnvironmentSplit& split, const EnvConfig& env_cfg,
                             const AgentConfig& cfg, const std::string& trace_label = {}) {
  cfg.validate();
  env_cfg.validate();
  TraceSacAgent<Scalar> agent(cfg, env_cfg, data.feature_count());
  ReplayBuffer buffer(cfg.replay);
  Rng sampler(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::string label = trace_label.empty() ? to_string(cfg.trace.kind) : trace_label;

  std::vector<MetricsRow> metrics;
  TradingEnv env(data, env_cfg);
  for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
    Observation obs = env.reset(split.train);
    std::vector<double> rewards;
    double critic_sum = 0.0, actor_sum = 0.0;
    std::size_t critic_n = 0, actor_n = 0;
    while (!env.done()) {
      const PolicyAction a = agent.act(obs, true);
      StepResult step = env.step(a.action);
      rewards.push_back(step.reward);
      buffer.push(Transition{obs, a.action, step.reward, step.observation, a.log_density, step.done});
      obs = std::move(step.observation);
      if (!buffer.ready()) continue;
      for (std::size_t g = 0; g < cfg.grad_steps_per_env_step; ++g) {
        const auto segments = buffer.sample_segments(cfg.batch, cfg.trace.n, sampler);
        const UpdateStats stats = agent.update(segments);
        critic_sum += stats.critic_loss;
        ++critic_n;
        if (stats.actor_loss) {
          actor_sum += *stats.actor_loss;
          ++actor_n;
        }
      }
    }
    MetricsRow row;
    row.episode = episode;
    row.steps = rewards.size();
    if (critic_n) row.critic_loss = critic_sum / static_cast<double>(critic_n);
    if (actor_n) row.actor_loss = actor_sum / static_cast<double>(actor_n);
    row.train_return_pct = cumulative_log_return(rewards);
    if ((episode + 1) % cfg.validate_every == 0) {
      row.val_return_pct = run_policy_episode(agent, data, split.validation, env_cfg, false).return_pct;
    }
    row.seed = cfg.seed;
    row.env_id = split.env_id;
    row.trace_kind = label;
    metrics.push_back(std::move(row));
  }
  return {std::move(metrics), std::move(agent)};
}

}  // namespace tracesac
