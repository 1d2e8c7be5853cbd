// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0

// Trains one agent on a short synthetic sinusoid market and prints the
// per-episode metrics, then compares a deterministic validation episode
// with a random policy.

#include <iostream>

#include "tracesac/tracesac.hpp"

int main() {
  using namespace tracesac;

  SeparationConfig sep{1, 5, 3, 120};
  SynthParams market;
  market.amplitude = 1.0;
  market.period = 60.0;
  Dataset data = synthesize_market(MarketKind::sinusoid, 600, market, 1);
  const EnvironmentSplit split = separate_environments(data, sep).front();
  data = standardize(data, split.train);

  EnvConfig env;
  env.h_max = 0.1;
  env.initial_balance = 100.0;

  AgentConfig cfg;
  cfg.trace = {TraceKind::retrace, 0.9, 3, 0.99, 0.001};
  cfg.network = {8, 16};
  cfg.batch = 16;
  cfg.grad_steps_per_env_step = 1;
  cfg.episodes = 10;
  cfg.validate_every = 5;
  cfg.lr_actor = cfg.lr_critic = 1e-3;
  cfg.tau = 0.01;
  cfg.replay = {10000, 200};

  auto result = train<float>(data, split, env, cfg);
  write_metrics_csv(std::cout, result.metrics);

  const double learned = run_policy_episode(result.agent, data, split.validation, env, false).return_pct;
  const double random = run_random_episode(data, split.validation, env, 0).return_pct;
  std::cout << "validation return %: agent " << format_fixed(learned, 4) << ", random " << format_fixed(random, 4)
            << '\n';
}
