// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "tracesac/agent.hpp"

namespace tracesac {
namespace {

struct Fixture {
  Dataset data;
  EnvConfig env;
  AgentConfig cfg;
  std::vector<Segment> segments;

  explicit Fixture(std::uint64_t seed, std::size_t n = 3, double alpha = 0.2) {
    SynthParams p;
    p.volatility = 2e-3;
    p.half_spread = 0.01;
    data = standardize(synthesize_market(MarketKind::random_walk, 80, p, seed), {0, 60});
    env.h_max = 1.0;
    env.lookback = 2;
    env.unit = 0.01;
    env.initial_balance = 100.0;
    cfg.trace = {TraceKind::retrace, 0.9, n, 0.9, alpha};
    cfg.network = {3, 4};
    cfg.batch = 8;
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

  std::vector<const Observation*> states() const {
    std::vector<const Observation*> out;
    for (const Segment& s : segments) out.push_back(&s.transitions.front().obs);
    return out;
  }
};

double max_param_gap(EncoderHead<double>& a, EncoderHead<double>& b) {
  double gap = 0.0;
  auto pa = a.params();
  auto pb = b.params();
  for (std::size_t k = 0; k < pa.size(); ++k) gap = std::max(gap, (pa[k]->value - pb[k]->value).cwiseAbs().maxCoeff());
  return gap;
}

TEST(Featurizer, ScalesPricesAndSideInputs) {
  Observation o;
  o.rows = 2;
  o.cols = 3;
  o.balance = 50.0;
  o.holdings = 2.0;
  o.window = {0.5, 99.0, 101.0, -0.25, 199.0, 201.0};
  const ObservationFeaturizer f(100.0, 2, 3);
  const auto b = f.batch<double>({&o});
  ASSERT_EQ(b.steps.size(), 2u);
  EXPECT_EQ(b.steps[0](0, 0), 0.5);
  EXPECT_NEAR(b.steps[0](1, 0), 100.0 * (99.0 / 200.0 - 1.0), 1e-12);
  EXPECT_NEAR(b.steps[1](1, 0), -0.5, 1e-12);
  EXPECT_NEAR(b.steps[1](2, 0), 0.5, 1e-12);
  EXPECT_EQ(b.side(0, 0), 0.5);
  EXPECT_EQ(b.side(1, 0), 4.0);
  const ObservationFeaturizer wrong(100.0, 3, 3);
  EXPECT_THROW(wrong.batch<double>({&o}), InvariantError);
}

TEST(Agent, DeterministicActionIsSquashedMean) {
  Fixture fx(1);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  for (const Observation* s : fx.states()) {
    const double mean = agent.policy_outputs({s})(0, 0);
    const PolicyAction a = agent.act(*s, false);
    EXPECT_NEAR(a.action, fx.env.h_max * std::tanh(mean), 1e-12);
  }
}

TEST(Agent, PropertyStochasticActionsStayInBound) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture fx(seed);
    fx.env.h_max = 0.05 + 0.2 * static_cast<double>(seed);
    TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
    for (const Observation* s : fx.states()) {
      for (int k = 0; k < 20; ++k) {
        const PolicyAction a = agent.act(*s, true);
        ASSERT_LT(std::abs(a.action), fx.env.h_max);
        ASSERT_TRUE(std::isfinite(a.log_density));
      }
    }
  }
}

TEST(Agent, SameSeedSameActions) {
  Fixture fx(2);
  TraceSacAgent<float> a(fx.cfg, fx.env, fx.data.feature_count());
  TraceSacAgent<float> b(fx.cfg, fx.env, fx.data.feature_count());
  for (const Observation* s : fx.states()) EXPECT_EQ(a.act(*s, true).action, b.act(*s, true).action);
}

TEST(Agent, CriticLossIsZeroAtTargets) {
  Fixture fx(3);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  polyak_update(agent.critic2(), agent.critic1(), 1.0);
  std::vector<double> actions;
  for (const Segment& s : fx.segments) actions.push_back(s.transitions.front().action);
  const auto q = agent.q_values(agent.critic1(), fx.states(), actions);
  std::vector<double> targets(q.data(), q.data() + q.size());
  EXPECT_LT(agent.critic_loss(fx.segments, targets, false), 1e-24);
  for (double& t : targets) t += 1.0;
  EXPECT_NEAR(agent.critic_loss(fx.segments, targets, false), 0.5, 1e-12);
}

TEST(Agent, CriticDescentHalvesLossOnFixedTargets) {
  Fixture fx(4);
  fx.cfg.lr_critic = 1e-2;
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  std::vector<double> targets;
  Rng rng(5);
  for (std::size_t i = 0; i < fx.segments.size(); ++i) targets.push_back(rng.uniform(-1, 1));
  const double before = agent.critic_loss(fx.segments, targets, false);
  for (int i = 0; i < 200; ++i) {
    agent.critic1().zero_grad();
    agent.critic2().zero_grad();
    agent.critic_loss(fx.segments, targets, true);
    for (auto* head : {&agent.critic1(), &agent.critic2()}) {
      for (auto* p : head->params()) nn::adam_step(*p, nn::AdamConfig{fx.cfg.lr_critic});
    }
  }
  EXPECT_LT(agent.critic_loss(fx.segments, targets, false), 0.5 * before);
}

TEST(Agent, ActorGradientVanishesWithoutEntropyAndFlatCritics) {
  Fixture fx(6, 3, 0.0);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  for (auto* head : {&agent.critic1(), &agent.critic2()}) head->output.weight.value.setZero();
  const auto states = fx.states();
  std::vector<double> noise(states.size(), 0.3);
  agent.actor().zero_grad();
  agent.actor_loss(states, noise, true);
  for (auto* p : agent.actor().params()) EXPECT_EQ(p->grad.cwiseAbs().maxCoeff(), 0.0) << p->name;
}

TEST(Agent, EntropyBonusRaisesLogStdWithFlatCritics) {
  Fixture fx(7, 3, 1.0);
  fx.cfg.lr_actor = 1e-2;
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  for (auto* head : {&agent.critic1(), &agent.critic2()}) head->output.weight.value.setZero();
  agent.actor().output.bias.value(1) = -3.0;
  const auto states = fx.states();
  auto mean_log_std = [&] { return agent.policy_outputs(states).row(1).mean(); };
  const double before = mean_log_std();
  for (int i = 0; i < 50; ++i) agent.actor_update(fx.segments);
  EXPECT_GT(mean_log_std(), before + 0.1);
}

TEST(Agent, ActorUpdateLeavesCriticsAlone) {
  Fixture fx(8);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  const auto before = agent.critic1();
  agent.actor_update(fx.segments);
  auto copy = before;
  EXPECT_EQ(max_param_gap(copy, agent.critic1()), 0.0);
}

TEST(Polyak, EndpointsAndHalfSteps) {
  Fixture fx(9);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  EXPECT_EQ(max_param_gap(agent.target_critic1(), agent.critic1()), 0.0);
  for (auto* p : agent.target_critic1().params()) p->value.setZero();
  for (auto* p : agent.critic1().params()) p->value.setOnes();
  polyak_update(agent.target_critic1(), agent.critic1(), 0.0);
  for (auto* p : agent.target_critic1().params()) EXPECT_EQ(p->value.cwiseAbs().maxCoeff(), 0.0);
  polyak_update(agent.target_critic1(), agent.critic1(), 0.5);
  polyak_update(agent.target_critic1(), agent.critic1(), 0.5);
  for (auto* p : agent.target_critic1().params()) EXPECT_TRUE((p->value.array() == 0.75).all());
  polyak_update(agent.target_critic1(), agent.critic1(), 1.0);
  EXPECT_EQ(max_param_gap(agent.target_critic1(), agent.critic1()), 0.0);
}

TEST(Polyak, PropertyContractsDistance) {
  Rng rng(10);
  Fixture fx(10);
  TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
  for (int i = 0; i < 20; ++i) {
    for (auto* p : agent.critic1().params()) p->init_uniform(1.0, rng);
    const double tau = rng.uniform();
    const double before = max_param_gap(agent.target_critic1(), agent.critic1());
    polyak_update(agent.target_critic1(), agent.critic1(), tau);
    EXPECT_LE(max_param_gap(agent.target_critic1(), agent.critic1()), (1 - tau) * before + 1e-12);
  }
}

TEST(Targets, IndependentOfOnlineCritics) {
  Fixture fx(11);
  TraceSacAgent<double> a(fx.cfg, fx.env, fx.data.feature_count());
  TraceSacAgent<double> b = a;
  Rng rng(12);
  for (auto* head : {&b.critic1(), &b.critic2()}) {
    for (auto* p : head->params()) p->init_uniform(3.0, rng);
  }
  EXPECT_EQ(a.compute_targets(fx.segments), b.compute_targets(fx.segments));
}

// With lambda = 0 only the first TD error survives. Every kind except
// Peng's Q bootstraps from a fresh policy sample at s_1; Peng's Q uses its
// mixture bootstrap, which is the behavior policy at lambda = 0, at the
// stored a_1 whenever the segment holds it.
TEST(Targets, LambdaZeroIsSingleStepSoftBackup) {
  for (TraceKind kind : kAllTraceKinds) {
    Fixture fx(13);
    fx.cfg.trace.kind = kind;
    fx.cfg.trace.lambda = 0.0;
    TraceSacAgent<double> agent(fx.cfg, fx.env, fx.data.feature_count());
    TraceSacAgent<double> mirror = agent;
    const auto targets = agent.compute_targets(fx.segments);

    std::vector<double> noise;
    for (const Segment& s : fx.segments) {
      for (std::size_t j = 0; j < s.size(); ++j) noise.push_back(mirror.rng().normal());
    }
    const double alpha = fx.cfg.trace.alpha_ent;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < fx.segments.size(); ++k) {
      const auto& tr = fx.segments[k].transitions;
      const Transition& t = tr.front();
      auto q_min = [&](const Observation& o, double a) {
        const std::vector<double> act{a};
        return std::min(mirror.q_values(mirror.target_critic1(), {&o}, act)(0, 0),
                        mirror.q_values(mirror.target_critic2(), {&o}, act)(0, 0));
      };
      double boot = 0.0;
      if (kind == TraceKind::peng_q && tr.size() > 1) {
        boot = q_min(tr[1].obs, tr[1].action) - alpha * tr[1].behavior_log_density;
      } else {
        const auto out = mirror.policy_outputs({&t.next_obs});
        const auto s = nn::sample_squashed_gaussian(out(0, 0), out(1, 0), noise[offset], fx.env.h_max);
        boot = q_min(t.next_obs, s.action) - alpha * s.log_density;
      }
      if (t.done) boot = 0.0;
      EXPECT_NEAR(targets[k], t.reward + fx.cfg.trace.gamma * boot, 1e-9) << to_string(kind);
      offset += tr.size();
    }
  }
}

TEST(Targets, FiniteForEveryTraceKind) {
  for (TraceKind kind : kAllTraceKinds) {
    Fixture fx(14);
    fx.cfg.trace.kind = kind;
    TraceSacAgent<float> agent(fx.cfg, fx.env, fx.data.feature_count());
    for (double t : agent.compute_targets(fx.segments)) EXPECT_TRUE(std::isfinite(t));
    const UpdateStats a = agent.update(fx.segments);
    const UpdateStats b = agent.update(fx.segments);
    EXPECT_FALSE(a.actor_loss.has_value());
    EXPECT_TRUE(b.actor_loss.has_value());
    EXPECT_EQ(agent.update_count(), 2u);
  }
}

TEST(AgentCheckpoint, RoundTripRestoresActions) {
  Fixture fx(15);
  TraceSacAgent<float> a(fx.cfg, fx.env, fx.data.feature_count());
  a.update(fx.segments);
  a.update(fx.segments);
  std::stringstream ss;
  a.save(ss);
  AgentConfig other = fx.cfg;
  other.seed = 99;
  TraceSacAgent<float> b(other, fx.env, fx.data.feature_count());
  b.load(ss);
  for (const Observation* s : fx.states()) EXPECT_EQ(a.act(*s, false).action, b.act(*s, false).action);
}

TEST(AgentConfig, RejectsBadValues) {
  AgentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  for (auto mutate : std::vector<std::function<void(AgentConfig&)>>{
           [](AgentConfig& c) { c.batch = 0; }, [](AgentConfig& c) { c.tau = 1.5; },
           [](AgentConfig& c) { c.lr_actor = -1; }, [](AgentConfig& c) { c.policy_delay = 0; },
           [](AgentConfig& c) { c.validate_every = 0; }, [](AgentConfig& c) { c.trace.gamma = 1.0; }}) {
    AgentConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

struct TinyRun {
  Dataset data;
  std::vector<EnvironmentSplit> splits;
  EnvConfig env;
  AgentConfig cfg;

  TinyRun() {
    SeparationConfig sep{1, 5, 3, 40};
    SynthParams p;
    p.amplitude = 1.0;
    p.period = 30.0;
    data = synthesize_market(MarketKind::sinusoid, 200, p, 3);
    splits = separate_environments(data, sep);
    data = standardize(data, splits[0].train);
    env.h_max = 0.1;
    env.lookback = 2;
    env.initial_balance = 100.0;
    cfg.trace = {TraceKind::retrace, 0.9, 2, 0.99, 0.01};
    cfg.network = {3, 4};
    cfg.batch = 4;
    cfg.grad_steps_per_env_step = 1;
    cfg.episodes = 10;
    cfg.validate_every = 5;
    cfg.replay = {1000, 20};
    cfg.seed = 4;
  }
};

TEST(Training, RecordsEveryEpisodeAndValidatesOnSchedule) {
  TinyRun run;
  const auto result = train<float>(run.data, run.splits[0], run.env, run.cfg);
  ASSERT_EQ(result.metrics.size(), 10u);
  std::size_t validations = 0;
  for (const MetricsRow& row : result.metrics) {
    EXPECT_EQ(row.steps, 119u);
    EXPECT_EQ(row.trace_kind, "retrace");
    EXPECT_EQ(row.seed, 4u);
    validations += row.val_return_pct.has_value();
  }
  EXPECT_EQ(validations, 2u);
  EXPECT_TRUE(result.metrics[4].val_return_pct.has_value());
  EXPECT_TRUE(result.metrics[9].val_return_pct.has_value());
  EXPECT_TRUE(result.metrics[1].critic_loss.has_value());
}

TEST(Training, IsDeterministicAndMetricsRoundTrip) {
  TinyRun run;
  run.cfg.episodes = 3;
  const auto a = train<float>(run.data, run.splits[0], run.env, run.cfg, "label");
  const auto b = train<float>(run.data, run.splits[0], run.env, run.cfg, "label");
  std::ostringstream sa, sb;
  write_metrics_csv(sa, a.metrics);
  write_metrics_csv(sb, b.metrics);
  EXPECT_EQ(sa.str(), sb.str());
  std::istringstream in(sa.str());
  const auto rows = read_metrics_csv(in);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].train_return_pct, a.metrics[2].train_return_pct);
  EXPECT_EQ(rows[0].trace_kind, "label");
  std::istringstream bad("nope\n");
  EXPECT_THROW(read_metrics_csv(bad), ParseError);
}

}  // namespace
}  // namespace tracesac
