// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exact small-MDP machinery: direct policy evaluation and the
// expectation form of the truncated general-retrace operator.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "tracesac/common.hpp"
#include "tracesac/traces.hpp"

namespace tracesac::tabular {

/// Row-major policy table, n_states x n_actions.
using PolicyTable = Eigen::MatrixXd;
/// Q table, n_states x n_actions.
using QTable = Eigen::MatrixXd;

struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  /// Row (s * n_actions + a) holds P(. | s, a).
  Eigen::MatrixXd transitions;
  /// n_states x n_actions expected rewards.
  Eigen::MatrixXd rewards;
  double gamma = 0.9;

  std::size_t pairs() const noexcept { return n_states * n_actions; }

  void validate() const {
    if (n_states == 0 || n_actions == 0) throw InvariantError("tabular: empty MDP");
    if (transitions.rows() != static_cast<Eigen::Index>(pairs()) ||
        transitions.cols() != static_cast<Eigen::Index>(n_states)) {
      throw InvariantError("tabular: transition tensor has the wrong shape");
    }
    if (rewards.rows() != static_cast<Eigen::Index>(n_states) ||
        rewards.cols() != static_cast<Eigen::Index>(n_actions)) {
      throw InvariantError("tabular: reward table has the wrong shape");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvariantError("tabular: gamma must lie in [0, 1)");
    if ((transitions.array() < 0.0).any()) throw InvariantError("tabular: negative transition probability");
    for (Eigen::Index r = 0; r < transitions.rows(); ++r) {
      if (std::abs(transitions.row(r).sum() - 1.0) > 1e-12) throw InvariantError("tabular: transition row does not sum to 1");
    }
  }
};

inline void validate_policy(const TabularMDP& mdp, const PolicyTable& policy) {
  if (policy.rows() != static_cast<Eigen::Index>(mdp.n_states) ||
      policy.cols() != static_cast<Eigen::Index>(mdp.n_actions)) {
    throw InvariantError("tabular: policy table has the wrong shape");
  }
  if ((policy.array() < 0.0).any()) throw InvariantError("tabular: negative policy probability");
  for (Eigen::Index s = 0; s < policy.rows(); ++s) {
    if (std::abs(policy.row(s).sum() - 1.0) > 1e-12) throw InvariantError("tabular: policy row does not sum to 1");
  }
}

inline Eigen::VectorXd flatten(const QTable& q) {
  Eigen::VectorXd v(q.size());
  for (Eigen::Index s = 0; s < q.rows(); ++s) v.segment(s * q.cols(), q.cols()) = q.row(s).transpose();
  return v;
}

inline QTable unflatten(const Eigen::VectorXd& v, std::size_t n_states, std::size_t n_actions) {
  QTable q(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    q.row(static_cast<Eigen::Index>(s)) =
        v.segment(static_cast<Eigen::Index>(s * n_actions), static_cast<Eigen::Index>(n_actions)).transpose();
  }
  return q;
}

/// Pair-to-pair kernel: K[(s,a),(s',a')] = P(s'|s,a) * weights(s', a').
inline Eigen::MatrixXd pair_kernel(const TabularMDP& mdp, const Eigen::MatrixXd& weights) {
  const auto n = static_cast<Eigen::Index>(mdp.pairs());
  const auto actions = static_cast<Eigen::Index>(mdp.n_actions);
  Eigen::MatrixXd spread = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mdp.n_states), n);
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(mdp.n_states); ++s) {
    spread.block(s, s * actions, 1, actions) = weights.row(s);
  }
  return mdp.transitions * spread;
}

/// Q^pi by direct solution of (I - gamma P_pi) q = r.
inline QTable exact_q(const TabularMDP& mdp, const PolicyTable& policy) {
  if (!(mdp.gamma < 1.0)) throw InvariantError("exact_q: gamma must be < 1");
  mdp.validate();
  validate_policy(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.pairs());
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * pair_kernel(mdp, policy);
  const Eigen::VectorXd q = system.fullPivLu().solve(flatten(mdp.rewards));
  return unflatten(q, mdp.n_states, mdp.n_actions);
}

/// r + gamma E_{s', a' ~ policy} Q(s', a').
inline QTable evaluation_backup(const TabularMDP& mdp, const PolicyTable& policy, const QTable& q) {
  const Eigen::VectorXd next = flatten(mdp.rewards) + mdp.gamma * pair_kernel(mdp, policy) * flatten(q);
  return unflatten(next, mdp.n_states, mdp.n_actions);
}

/// Max-norm of Q - (r + gamma P_pi Q).
inline double bellman_residual(const TabularMDP& mdp, const PolicyTable& policy, const QTable& q) {
  return (q - evaluation_backup(mdp, policy, q)).cwiseAbs().maxCoeff();
}

struct RetraceRun {
  std::vector<QTable> iterates;  ///< Q_0, Q_1, ...
  bool diverged = false;
  std::size_t diverged_at = 0;
};

/// Linear part of one retrace step: Q_{k+1} = Q_k + operator * delta_k.
/// operator = sum_{t=0..T} (gamma lambda P_{c mu})^t.
inline Eigen::MatrixXd retrace_trace_operator(const TabularMDP& mdp, const PolicyTable& behavior,
                                              const PolicyTable& target, const TraceSpec& spec,
                                              std::size_t truncation_T) {
  Eigen::MatrixXd weights(behavior.rows(), behavior.cols());
  for (Eigen::Index s = 0; s < behavior.rows(); ++s) {
    for (Eigen::Index a = 0; a < behavior.cols(); ++a) {
      const double mu = behavior(s, a);
      weights(s, a) = mu > 0.0 ? mu * trace_coefficient(spec.kind, target(s, a), mu, spec.lambda) : 0.0;
    }
  }
  const Eigen::MatrixXd step = mdp.gamma * spec.lambda * pair_kernel(mdp, weights);
  const auto n = static_cast<Eigen::Index>(mdp.pairs());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t t = 0; t < truncation_T; ++t) sum = Eigen::MatrixXd::Identity(n, n) + step * sum;
  return sum;
}

/// Policy bootstrapped inside delta. Peng's Q(lambda) bootstraps under the
/// mixture lambda pi + (1 - lambda) mu; every other kind under pi.
inline PolicyTable bootstrap_policy(const PolicyTable& behavior, const PolicyTable& target, const TraceSpec& spec) {
  if (spec.kind == TraceKind::peng_q) return spec.lambda * target + (1.0 - spec.lambda) * behavior;
  return target;
}

/// Iterates the expectation form of the truncated retrace operator,
/// without entropy terms. Stops early and flags divergence once
/// max |Q| exceeds 1e6.
inline RetraceRun tabular_retrace_iterate(const TabularMDP& mdp, const PolicyTable& behavior,
                                          const PolicyTable& target, const TraceSpec& spec,
                                          std::size_t truncation_T, std::size_t iterations,
                                          const QTable& initial = {}) {
  if (truncation_T < 1) throw Error("tabular_retrace_iterate: truncation_T must be at least 1");
  mdp.validate();
  validate_policy(mdp, behavior);
  validate_policy(mdp, target);

  const Eigen::MatrixXd trace_op = retrace_trace_operator(mdp, behavior, target, spec, truncation_T);
  const Eigen::MatrixXd bootstrap = mdp.gamma * pair_kernel(mdp, bootstrap_policy(behavior, target, spec));
  const Eigen::VectorXd r = flatten(mdp.rewards);

  RetraceRun run;
  Eigen::VectorXd q = initial.size() == 0 ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.pairs()))
                                          : flatten(initial);
  run.iterates.reserve(iterations + 1);
  run.iterates.push_back(unflatten(q, mdp.n_states, mdp.n_actions));
  for (std::size_t k = 0; k < iterations; ++k) {
    const Eigen::VectorXd delta = r + bootstrap * q - q;
    q += trace_op * delta;
    run.iterates.push_back(unflatten(q, mdp.n_states, mdp.n_actions));
    if (!q.allFinite() || q.cwiseAbs().maxCoeff() > 1e6) {
      run.diverged = true;
      run.diverged_at = k + 1;
      break;
    }
  }
  return run;
}

/// Random MDP with Dirichlet(1)-like transition rows and rewards in [-1, 1].
inline TabularMDP random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, Rng& rng) {
  TabularMDP mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.transitions.resize(static_cast<Eigen::Index>(n_states * n_actions), static_cast<Eigen::Index>(n_states));
  for (Eigen::Index r = 0; r < mdp.transitions.rows(); ++r) {
    for (Eigen::Index c = 0; c < mdp.transitions.cols(); ++c) mdp.transitions(r, c) = -std::log(1.0 - rng.uniform());
    mdp.transitions.row(r) /= mdp.transitions.row(r).sum();
  }
  mdp.rewards.resize(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions));
  for (Eigen::Index i = 0; i < mdp.rewards.size(); ++i) mdp.rewards(i) = rng.uniform(-1.0, 1.0);
  return mdp;
}

/// Random full-support policy; every probability is at least min_prob.
inline PolicyTable random_policy(std::size_t n_states, std::size_t n_actions, Rng& rng, double min_prob = 0.05) {
  PolicyTable p(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions));
  const double free_mass = 1.0 - min_prob * static_cast<double>(n_actions);
  for (Eigen::Index s = 0; s < p.rows(); ++s) {
    for (Eigen::Index a = 0; a < p.cols(); ++a) p(s, a) = -std::log(1.0 - rng.uniform());
    p.row(s) = (p.row(s) / p.row(s).sum()) * free_mass;
    p.row(s).array() += min_prob;
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

}  // namespace tracesac::tabular
