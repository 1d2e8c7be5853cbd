// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Built-in self-checks behind `tracesac verify`: the tabular oracle,
// trace identities, finite-difference gradients and environment
// accounting, each on small fixed fixtures.

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tracesac/agent.hpp"
#include "tracesac/common.hpp"
#include "tracesac/data.hpp"
#include "tracesac/env.hpp"
#include "tracesac/nn.hpp"
#include "tracesac/replay.hpp"
#include "tracesac/tabular.hpp"
#include "tracesac/traces.hpp"

namespace tracesac {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Negative control: drop the forget-gate term from the LSTM backward
  /// pass used by the gradient checks.
  bool corrupt_lstm_backward = false;
  std::uint64_t seed = 7;
};

namespace verify_detail {

inline std::string sci(double v) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

inline CheckResult grad_result(const std::string& name, const nn::GradientCheckReport& r) {
  return {name, r.passed,
          "max rel err " + sci(r.max_rel_error) + " over " + std::to_string(r.checked) + " coords" +
              (r.worst.empty() ? "" : " (worst " + r.worst + ")"),
          0.0};
}

/// A tiny double-precision agent with a few replay segments to check.
struct AgentFixture {
  Dataset data;
  EnvConfig env;
  AgentConfig cfg;
  std::vector<Segment> segments;

  explicit AgentFixture(std::uint64_t seed) {
    SynthParams p;
    p.volatility = 2e-3;
    p.half_spread = 0.01;
    data = synthesize_market(MarketKind::random_walk, 80, p, seed);
    data = standardize(data, {0, 60});
    env.h_max = 1.0;
    env.lookback = 2;
    env.unit = 0.01;
    env.initial_balance = 100.0;
    cfg.trace = {TraceKind::retrace, 0.9, 3, 0.9, 0.2};
    cfg.network = {3, 4};
    cfg.batch = 4;
    cfg.seed = seed;
    cfg.replay = {64, 1};

    TradingEnv trading(data, env);
    ReplayBuffer buffer(cfg.replay);
    Rng rng(seed + 1);
    Observation obs = trading.reset({0, 20});
    while (!trading.done()) {
      const double a = rng.uniform(-0.9, 0.9);
      StepResult step = trading.step(a);
      buffer.push({obs, a, step.reward, step.observation, rng.uniform(-1.0, 1.0), step.done});
      obs = std::move(step.observation);
    }
    segments = buffer.sample_segments(cfg.batch, cfg.trace.n, rng);
  }
};

}  // namespace verify_detail

inline CheckResult check_exact_q_geometric() {
  tabular::TabularMDP mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.transitions = Eigen::MatrixXd::Ones(1, 1);
  mdp.rewards = Eigen::MatrixXd::Ones(1, 1);
  mdp.gamma = 0.5;
  const double q = tabular::exact_q(mdp, Eigen::MatrixXd::Ones(1, 1))(0, 0);
  return {"tabular.exact_q", std::abs(q - 2.0) < 1e-12, "Q = " + format_exact(q) + " (expected 2)", 0.0};
}

inline CheckResult check_bellman_residual(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto mdp = tabular::random_mdp(5, 3, 0.9, rng);
    const auto pi = tabular::random_policy(5, 3, rng);
    worst = std::max(worst, tabular::bellman_residual(mdp, pi, tabular::exact_q(mdp, pi)));
  }
  return {"tabular.bellman_residual", worst < 1e-10, "max residual " + verify_detail::sci(worst), 0.0};
}

inline CheckResult check_retrace_convergence(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t max_iters = 0;
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const auto mdp = tabular::random_mdp(5, 3, 0.9, rng);
    const auto mu = tabular::random_policy(5, 3, rng);
    const auto pi = tabular::random_policy(5, 3, rng);
    const auto exact = tabular::exact_q(mdp, pi);
    for (TraceKind kind : {TraceKind::retrace, TraceKind::importance_sampling, TraceKind::tree_backup}) {
      TraceSpec spec{kind, 1.0, 0, mdp.gamma, 0.0};
      const auto run = tabular::tabular_retrace_iterate(mdp, mu, pi, spec, 50, 1000);
      std::size_t hit = 0;
      for (std::size_t k = 0; k < run.iterates.size(); ++k) {
        if ((run.iterates[k] - exact).cwiseAbs().maxCoeff() <= 1e-6) {
          hit = k;
          break;
        }
      }
      const double err = (run.iterates.back() - exact).cwiseAbs().maxCoeff();
      worst = std::max(worst, err);
      if (run.diverged || err > 1e-6) ok = false;
      max_iters = std::max(max_iters, hit);
    }
  }
  return {"tabular.retrace_convergence", ok,
          "max error " + verify_detail::sci(worst) + ", slowest reached 1e-6 at iteration " + std::to_string(max_iters),
          0.0};
}

inline CheckResult check_single_step_reduction(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    for (TraceKind kind : kAllTraceKinds) {
      TraceSpec spec{kind, 0.0, 1 + rng.index(6), rng.uniform(0.5, 0.999), rng.uniform(0.0, 0.5)};
      SegmentEval eval;
      const std::size_t len = 1 + rng.index(7);
      for (std::size_t j = 0; j < len; ++j) {
        eval.log_pi.push_back(rng.uniform(-3.0, 2.0));
        eval.log_mu.push_back(rng.uniform(-3.0, 2.0));
        eval.delta.push_back(rng.uniform(-2.0, 2.0));
      }
      fill_coefficients(eval, kind, spec.lambda);
      const double q = rng.uniform(-5.0, 5.0);
      worst = std::max(worst, std::abs(retrace_target(eval, q, spec) - (q + eval.delta[0])));
    }
  }
  return {"traces.single_step_reduction", worst <= 1e-12, "max deviation " + verify_detail::sci(worst), 0.0};
}

inline CheckResult check_coefficient_table(std::uint64_t seed) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const double pi = std::exp(rng.uniform(-5.0, 3.0));
    const double mu = std::exp(rng.uniform(-5.0, 3.0));
    const double ratio = pi / mu;
    const double expected[] = {std::min(1.0, ratio), ratio, std::min(1.0, pi), 1.0, 1.0};
    for (std::size_t k = 0; k < 5; ++k) {
      if (trace_coefficient(kAllTraceKinds[k], pi, mu) != expected[k]) ++mismatches;
    }
    // The YES/NO column is stated for probabilities, so both lie in (0, 1].
    const double p = 1.0 - rng.uniform();
    const double m = 1.0 - rng.uniform();
    for (TraceKind kind : kAllTraceKinds) {
      const bool expected_yes = conservative_by_construction(kind) || p / m >= 1.0;
      if (is_conservative(kind, p, m) != expected_yes) ++mismatches;
    }
  }
  return {"traces.coefficient_table", mismatches == 0, std::to_string(mismatches) + " mismatches", 0.0};
}

inline CheckResult check_dense_gradient(std::uint64_t seed) {
  Rng rng(seed);
  nn::Dense<double> layer("dense", 4, 3, nn::Activation::tanh);
  layer.init(rng);
  nn::Mat<double> x(4, 5), w(3, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.normal();
  auto loss = [&] { return (layer.forward(x).array() * w.array()).sum(); };
  typename nn::Dense<double>::Cache cache;
  layer.forward(x, &cache);
  for (auto* p : layer.params()) p->zero_grad();
  layer.backward(cache, w, true);
  return verify_detail::grad_result("grad.dense", nn::gradient_check(loss, layer.params()));
}

inline CheckResult check_lstm_gradient(const VerifyOptions& opts) {
  Rng rng(opts.seed);
  nn::Lstm<double> lstm("lstm", 3, 4);
  lstm.init(rng);
  lstm.corrupt_backward_for_testing = opts.corrupt_lstm_backward;
  std::vector<nn::Mat<double>> xs(4, nn::Mat<double>(3, 2)), ws(4, nn::Mat<double>(4, 2));
  for (auto& x : xs) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  }
  for (auto& w : ws) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.normal();
  }
  auto loss = [&] {
    const auto hs = lstm.forward(xs);
    double total = 0.0;
    for (std::size_t k = 0; k < hs.size(); ++k) total += (hs[k].array() * ws[k].array()).sum();
    return total;
  };
  typename nn::Lstm<double>::Cache cache;
  lstm.forward(xs, {}, {}, &cache);
  for (auto* p : lstm.params()) p->zero_grad();
  lstm.backward(cache, ws, true);
  return verify_detail::grad_result("grad.lstm", nn::gradient_check(loss, lstm.params()));
}

inline CheckResult check_squashed_density_gradient(std::uint64_t seed) {
  Rng rng(seed);
  // Block rows: mean, log_std. Loss: log density of a reparameterized
  // sample plus the density of a fixed action.
  nn::ParamBlock<double> params("policy", 2, 1);
  params.value << 0.3, -0.4;
  const double noise = rng.normal();
  const double h_max = 0.7;
  const double fixed = 0.25;
  auto loss = [&] {
    const double m = params.value(0), ls = params.value(1);
    return nn::sample_squashed_gaussian(m, ls, noise, h_max).log_density +
           nn::squashed_gaussian_log_density(m, ls, fixed, h_max);
  };
  const double m = params.value(0), ls = params.value(1);
  const auto g = nn::squashed_sample_grad(m, ls, noise, h_max);
  const double z = (std::atanh(fixed / h_max) - m) / std::exp(ls);
  params.grad(0) = g.dlogp_dmean + z / std::exp(ls);
  params.grad(1) = g.dlogp_dlog_std + (z * z - 1.0);
  return verify_detail::grad_result("grad.squashed_log_density", nn::gradient_check(loss, {&params}));
}

inline CheckResult check_critic_loss_gradient(std::uint64_t seed) {
  verify_detail::AgentFixture fx(seed);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  const auto targets = agent.compute_targets(fx.segments);
  std::vector<nn::ParamBlock<double>*> blocks;
  for (auto* p : agent.critic1().params()) blocks.push_back(p);
  for (auto* p : agent.critic2().params()) blocks.push_back(p);
  for (auto* p : blocks) p->zero_grad();
  agent.critic_loss(fx.segments, targets, true);
  auto loss = [&] { return agent.critic_loss(fx.segments, targets, false); };
  return verify_detail::grad_result("grad.critic_loss", nn::gradient_check(loss, blocks));
}

inline CheckResult check_actor_loss_gradient(std::uint64_t seed) {
  verify_detail::AgentFixture fx(seed);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  std::vector<const Observation*> states;
  std::vector<double> noise;
  Rng rng(seed + 2);
  for (const Segment& s : fx.segments) {
    states.push_back(&s.transitions.front().obs);
    noise.push_back(rng.normal());
  }
  agent.actor().zero_grad();
  agent.actor_loss(states, noise, true);
  auto loss = [&] { return agent.actor_loss(states, noise, false); };
  return verify_detail::grad_result("grad.actor_loss", nn::gradient_check(loss, agent.actor().params()));
}

inline CheckResult check_reward_telescoping(std::uint64_t seed) {
  SynthParams p;
  p.half_spread = 0.02;
  p.volatility = 2e-3;
  const Dataset data = synthesize_market(MarketKind::random_walk, 300, p, seed);
  EnvConfig cfg;
  cfg.h_max = 1.0;
  cfg.commission = 1e-3;
  Rng rng(seed);
  double worst = 0.0;
  for (int ep = 0; ep < 100; ++ep) {
    TradingEnv env(data, cfg);
    const std::size_t begin = rng.index(200);
    env.reset({begin, begin + 10 + rng.index(90)});
    double sum = 0.0;
    while (!env.done()) sum += env.step(rng.uniform(-1.0, 1.0)).reward;
    worst = std::max(worst, std::abs(sum - std::log(env.state().wealth / cfg.initial_balance)));
  }
  return {"env.reward_telescoping", worst <= 1e-9, "max deviation " + verify_detail::sci(worst), 0.0};
}

inline CheckResult check_zero_exposure(std::uint64_t seed) {
  SynthParams p;
  p.half_spread = 0.05;
  const Dataset data = synthesize_market(MarketKind::random_walk, 200, p, seed);
  EnvConfig cfg;
  cfg.commission = 1e-3;
  TradingEnv env(data, cfg);
  env.reset({0, 200});
  Rng rng(seed);
  double sum = 0.0;
  while (!env.done()) sum += env.step(rng.uniform(-0.0099, 0.0099)).reward;
  return {"env.zero_exposure", sum == 0.0, "total reward " + format_exact(sum), 0.0};
}

inline CheckResult check_round_trip(std::uint64_t seed) {
  // Constant price, zero spread and no commission: any sequence of trades
  // that ends flat leaves wealth unchanged.
  const Dataset flat = synthesize_market(MarketKind::flat, 200, SynthParams{}, seed);
  EnvConfig cfg;
  cfg.h_max = 1.0;
  Rng rng(seed);
  double worst = 0.0;
  for (int ep = 0; ep < 20; ++ep) {
    TradingEnv env(flat, cfg);
    env.reset({0, 200});
    for (int k = 0; k < 40; ++k) env.step(rng.uniform(-1.0, 1.0));
    while (!env.done() && std::abs(env.state().holdings) > 1e-12) {
      env.step(std::clamp(-env.state().holdings, -1.0, 1.0));
    }
    worst = std::max(worst, std::abs(env.state().wealth - cfg.initial_balance));
  }
  return {"env.round_trip", worst <= 1e-12, "max wealth drift " + verify_detail::sci(worst), 0.0};
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& opts = {}) {
  const std::uint64_t s = opts.seed;
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks = {
      {"tabular.exact_q", [] { return check_exact_q_geometric(); }},
      {"tabular.bellman_residual", [&] { return check_bellman_residual(s); }},
      {"tabular.retrace_convergence", [&] { return check_retrace_convergence(s); }},
      {"traces.single_step_reduction", [&] { return check_single_step_reduction(s); }},
      {"traces.coefficient_table", [&] { return check_coefficient_table(s); }},
      {"grad.dense", [&] { return check_dense_gradient(s); }},
      {"grad.lstm", [&] { return check_lstm_gradient(opts); }},
      {"grad.squashed_log_density", [&] { return check_squashed_density_gradient(s); }},
      {"grad.critic_loss", [&] { return check_critic_loss_gradient(s); }},
      {"grad.actor_loss", [&] { return check_actor_loss_gradient(s); }},
      {"env.reward_telescoping", [&] { return check_reward_telescoping(s); }},
      {"env.zero_exposure", [&] { return check_zero_exposure(s); }},
      {"env.round_trip", [&] { return check_round_trip(s); }},
  };
  std::vector<CheckResult> results;
  for (const auto& [name, check] : checks) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

inline std::string format_check_table(const std::vector<CheckResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::ostringstream out;
  for (const auto& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ') << r.detail
        << "  (" << format_fixed(r.seconds, 2) << " s)\n";
  }
  return out.str();
}

}  // namespace tracesac
