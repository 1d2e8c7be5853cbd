// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trace coefficients, soft TD errors and the truncated general-retrace
// target used by the critic.
//
// For a segment (s_0, a_0, ..., s_J, a_J) the target is
//
//   Q(s_0, a_0) + sum_{j=0..J} (prod_{u=1..j} c_u) (gamma lambda)^j delta_j
//
// with delta_j = r_j + gamma (Q(s_{j+1}, a') - alpha log pi(a'|s_{j+1})) - Q(s_j, a_j)
// and J = min(n, segment length - 1). Powers are relative to the segment
// start, so lambda = 0 leaves the one-step soft backup Q + delta_0.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tracesac/common.hpp"

namespace tracesac {

enum class TraceKind {
  retrace,              ///< c = min(1, pi/mu)
  importance_sampling,  ///< c = pi/mu
  tree_backup,          ///< c = min(1, pi)
  peng_q,               ///< c = 1, bootstrap under lambda pi + (1 - lambda) mu
  uncorrected,          ///< c = 1
};

inline constexpr TraceKind kAllTraceKinds[] = {TraceKind::retrace, TraceKind::importance_sampling,
                                               TraceKind::tree_backup, TraceKind::peng_q, TraceKind::uncorrected};

inline std::string to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::retrace: return "retrace";
    case TraceKind::importance_sampling: return "is";
    case TraceKind::tree_backup: return "tree_backup";
    case TraceKind::peng_q: return "peng_q";
    case TraceKind::uncorrected: return "uncorrected";
  }
  return "unknown";
}

inline TraceKind trace_kind_from_string(const std::string& name) {
  for (TraceKind k : kAllTraceKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown trace kind '" + name + "' (expected retrace, is, tree_backup, peng_q or uncorrected)");
}

/// Whether the kind is conservative in the sense c in [0, pi/mu] for
/// every probability pair.
constexpr bool conservative_by_construction(TraceKind kind) {
  return kind == TraceKind::retrace || kind == TraceKind::importance_sampling || kind == TraceKind::tree_backup;
}

struct TraceSpec {
  TraceKind kind = TraceKind::retrace;
  double lambda = 0.9;
  std::size_t n = 5;  ///< maximum offset of the last TD term
  double gamma = 0.99;
  double alpha_ent = 0.1;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("trace.lambda must lie in [0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("trace.gamma must lie in [0, 1)");
    if (!(alpha_ent >= 0.0)) throw ConfigError("trace.alpha_ent must be non-negative");
  }
};

inline double trace_coefficient(TraceKind kind, double pi_density, double mu_density, double /*lambda*/ = 0.0) {
  if (!(mu_density > 0.0)) {
    throw InvariantError("trace_coefficient: behavior density must be positive, got " + format_exact(mu_density));
  }
  if (pi_density < 0.0) throw InvariantError("trace_coefficient: target density must be non-negative");
  switch (kind) {
    case TraceKind::retrace: return std::min(1.0, pi_density / mu_density);
    case TraceKind::importance_sampling: return pi_density / mu_density;
    case TraceKind::tree_backup: return std::min(1.0, pi_density);
    case TraceKind::peng_q:
    case TraceKind::uncorrected: return 1.0;
  }
  return 1.0;
}

/// lambda * pi + (1 - lambda) * mu.
inline double mixed_target_density(double lambda, double pi_density, double mu_density) {
  return lambda * pi_density + (1.0 - lambda) * mu_density;
}

/// One-step soft TD error r + gamma (q_next - alpha log pi_next) - q_current.
/// Terminal transitions pass q_next = log_pi_next = 0.
inline double soft_td_error(double reward, double q_next, double log_pi_next, double q_current, double gamma,
                            double alpha_ent) {
  return reward + gamma * (q_next - alpha_ent * log_pi_next) - q_current;
}

/// True iff the coefficient lies in [0, pi/mu].
inline bool is_conservative(TraceKind kind, double pi_density, double mu_density, double lambda = 0.0) {
  const double c = trace_coefficient(kind, pi_density, mu_density, lambda);
  return c >= 0.0 && c <= pi_density / mu_density;
}

/// Per-step quantities of one segment. coeff[0] is never used by the
/// target (the product starts at u = 1) but is filled for inspection.
struct SegmentEval {
  std::vector<double> log_pi;
  std::vector<double> log_mu;
  std::vector<double> delta;
  std::vector<double> coeff;

  std::size_t size() const noexcept { return delta.size(); }
};

/// Fills coeff from log_pi / log_mu for the given kind.
inline void fill_coefficients(SegmentEval& eval, TraceKind kind, double lambda) {
  eval.coeff.resize(eval.log_pi.size());
  for (std::size_t u = 0; u < eval.log_pi.size(); ++u) {
    eval.coeff[u] = trace_coefficient(kind, std::exp(eval.log_pi[u]), std::exp(eval.log_mu[u]), lambda);
  }
}

inline double retrace_target(const SegmentEval& eval, double q_start, const TraceSpec& spec) {
  if (eval.delta.empty()) throw Error("retrace_target: empty segment");
  const std::size_t last = std::min(spec.n, eval.delta.size() - 1);
  if (last > 0 && eval.coeff.size() <= last) throw Error("retrace_target: missing trace coefficients");
  double target = q_start;
  double weight = 1.0;
  for (std::size_t j = 0; j <= last; ++j) {
    if (j > 0) weight *= eval.coeff[j] * spec.gamma * spec.lambda;
    if (weight == 0.0) break;
    target += weight * eval.delta[j];
  }
  return target;
}

}  // namespace tracesac
