// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode building blocks: parameter blocks with Adam state,
// dense layers, an LSTM encoder, the tanh-squashed Gaussian policy head
// and a central-difference gradient checker.
//
// Batches are column-major: every column of an activation matrix is one
// sample.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "tracesac/common.hpp"

namespace tracesac::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

template <typename Scalar>
struct ParamBlock {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;
  Mat<Scalar> adam_m;
  Mat<Scalar> adam_v;
  std::int64_t step_count = 0;

  ParamBlock() = default;
  ParamBlock(std::string block_name, Index rows, Index cols)
      : name(std::move(block_name)),
        value(Mat<Scalar>::Zero(rows, cols)),
        grad(Mat<Scalar>::Zero(rows, cols)),
        adam_m(Mat<Scalar>::Zero(rows, cols)),
        adam_v(Mat<Scalar>::Zero(rows, cols)) {}

  Index size() const noexcept { return value.size(); }
  void zero_grad() { grad.setZero(); }

  void init_uniform(double bound, Rng& rng) {
    for (Index i = 0; i < value.size(); ++i) value(i) = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step; clears the gradient afterwards.
template <typename Scalar>
void adam_step(ParamBlock<Scalar>& block, const AdamConfig& cfg) {
  if (!block.grad.allFinite()) throw InvariantError("adam_step: non-finite gradient in block '" + block.name + "'");
  block.step_count += 1;
  const auto t = static_cast<double>(block.step_count);
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  block.adam_m = b1 * block.adam_m + (Scalar(1) - b1) * block.grad;
  block.adam_v = b2 * block.adam_v + (Scalar(1) - b2) * block.grad.cwiseProduct(block.grad);
  const auto m_corr = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto v_corr = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto lr = static_cast<Scalar>(cfg.lr);
  const auto eps = static_cast<Scalar>(cfg.eps);
  block.value.array() -=
      lr * (block.adam_m.array() / m_corr) / ((block.adam_v.array() / v_corr).sqrt() + eps);
  block.grad.setZero();
}

enum class Activation { identity, tanh, relu, sigmoid };

template <typename Scalar>
Mat<Scalar> apply(Activation act, const Mat<Scalar>& x) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return x.array().tanh().matrix();
    case Activation::relu: return x.cwiseMax(Scalar(0));
    case Activation::sigmoid: return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
  }
  return x;
}

/// Derivative of the activation expressed through its output y.
template <typename Scalar>
Mat<Scalar> derivative_from_output(Activation act, const Mat<Scalar>& y) {
  switch (act) {
    case Activation::identity: return Mat<Scalar>::Ones(y.rows(), y.cols());
    case Activation::tanh: return (Scalar(1) - y.array().square()).matrix();
    case Activation::relu: return (y.array() > Scalar(0)).template cast<Scalar>().matrix();
    case Activation::sigmoid: return (y.array() * (Scalar(1) - y.array())).matrix();
  }
  return Mat<Scalar>::Ones(y.rows(), y.cols());
}

/// y = act(W x + b).
template <typename Scalar>
class Dense {
 public:
  struct Cache {
    Mat<Scalar> input;
    Mat<Scalar> output;
  };

  Dense() = default;
  Dense(const std::string& name, Index in, Index out, Activation act)
      : weight(name + ".weight", out, in), bias(name + ".bias", out, 1), activation_(act) {}

  Index in_features() const noexcept { return weight.value.cols(); }
  Index out_features() const noexcept { return weight.value.rows(); }
  Activation activation() const noexcept { return activation_; }

  /// U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init(Rng& rng, double scale = 1.0) {
    const double bound = scale / std::sqrt(static_cast<double>(in_features()));
    weight.init_uniform(bound, rng);
    bias.init_uniform(bound, rng);
  }

  Mat<Scalar> forward(const Mat<Scalar>& x, Cache* cache = nullptr) const {
    if (x.rows() != in_features()) {
      throw InvariantError(weight.name + ": expected " + std::to_string(in_features()) + " input rows, got " +
                           std::to_string(x.rows()));
    }
    Mat<Scalar> pre = weight.value * x;
    pre.colwise() += bias.value.col(0);
    Mat<Scalar> y = apply(activation_, pre);
    if (cache) {
      cache->input = x;
      cache->output = y;
    }
    return y;
  }

  /// Returns dL/dx; adds dL/dW and dL/db into the grad buffers when
  /// `accumulate` is set.
  Mat<Scalar> backward(const Cache& cache, const Mat<Scalar>& grad_out, bool accumulate = true) {
    if (grad_out.rows() != out_features() || grad_out.cols() != cache.output.cols()) {
      throw InvariantError(weight.name + ": upstream gradient has the wrong shape");
    }
    const Mat<Scalar> grad_pre = grad_out.cwiseProduct(derivative_from_output(activation_, cache.output));
    if (accumulate) {
      weight.grad.noalias() += grad_pre * cache.input.transpose();
      bias.grad.col(0) += grad_pre.rowwise().sum();
    }
    return weight.value.transpose() * grad_pre;
  }

  std::vector<ParamBlock<Scalar>*> params() { return {&weight, &bias}; }
  std::vector<const ParamBlock<Scalar>*> params() const { return {&weight, &bias}; }

  ParamBlock<Scalar> weight;
  ParamBlock<Scalar> bias;

 private:
  Activation activation_ = Activation::identity;
};

/// Standard LSTM; gate rows are stacked [input; forget; cell; output].
///   i = sig(W_x x + W_h h + b)_i   f = sig(...)_f   g = tanh(...)_g   o = sig(...)_o
///   c' = f c + i g                 h' = o tanh(c')
template <typename Scalar>
class Lstm {
 public:
  struct Cache {
    std::vector<Mat<Scalar>> x, i, f, g, o, c, tanh_c, h;
    Mat<Scalar> h0, c0;
  };

  struct Grads {
    std::vector<Mat<Scalar>> dx;
    Mat<Scalar> dh0;
    Mat<Scalar> dc0;
  };

  Lstm() = default;
  Lstm(const std::string& name, Index input_size, Index hidden_size)
      : w_x(name + ".w_x", 4 * hidden_size, input_size),
        w_h(name + ".w_h", 4 * hidden_size, hidden_size),
        bias(name + ".bias", 4 * hidden_size, 1),
        input_size_(input_size),
        hidden_size_(hidden_size) {}

  Index input_size() const noexcept { return input_size_; }
  Index hidden_size() const noexcept { return hidden_size_; }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size_));
    w_x.init_uniform(bound, rng);
    w_h.init_uniform(bound, rng);
    bias.init_uniform(bound, rng);
  }

  /// Hidden states for every step. Empty h0/c0 mean zero initial state.
  std::vector<Mat<Scalar>> forward(const std::vector<Mat<Scalar>>& xs, const Mat<Scalar>& h0 = {},
                                   const Mat<Scalar>& c0 = {}, Cache* cache = nullptr) const {
    if (xs.empty()) throw InvariantError(w_x.name + ": empty input sequence");
    const Index batch = xs.front().cols();
    Mat<Scalar> h = h0.size() ? h0 : Mat<Scalar>::Zero(hidden_size_, batch);
    Mat<Scalar> c = c0.size() ? c0 : Mat<Scalar>::Zero(hidden_size_, batch);
    if (h.rows() != hidden_size_ || h.cols() != batch || c.rows() != hidden_size_ || c.cols() != batch) {
      throw InvariantError(w_x.name + ": initial state has the wrong shape");
    }
    if (cache) {
      *cache = Cache{};
      cache->h0 = h;
      cache->c0 = c;
    }
    const Index H = hidden_size_;
    std::vector<Mat<Scalar>> hs;
    hs.reserve(xs.size());
    for (const Mat<Scalar>& x : xs) {
      if (x.rows() != input_size_ || x.cols() != batch) {
        throw InvariantError(w_x.name + ": expected " + std::to_string(input_size_) + " x " + std::to_string(batch) +
                             " input, got " + std::to_string(x.rows()) + " x " + std::to_string(x.cols()));
      }
      Mat<Scalar> z = w_x.value * x;
      z.noalias() += w_h.value * h;
      z.colwise() += bias.value.col(0);
      Mat<Scalar> i = apply(Activation::sigmoid, Mat<Scalar>(z.topRows(H)));
      Mat<Scalar> f = apply(Activation::sigmoid, Mat<Scalar>(z.middleRows(H, H)));
      Mat<Scalar> g = apply(Activation::tanh, Mat<Scalar>(z.middleRows(2 * H, H)));
      Mat<Scalar> o = apply(Activation::sigmoid, Mat<Scalar>(z.bottomRows(H)));
      c = f.cwiseProduct(c) + i.cwiseProduct(g);
      Mat<Scalar> tc = c.array().tanh().matrix();
      h = o.cwiseProduct(tc);
      hs.push_back(h);
      if (cache) {
        cache->x.push_back(x);
        cache->i.push_back(std::move(i));
        cache->f.push_back(std::move(f));
        cache->g.push_back(std::move(g));
        cache->o.push_back(std::move(o));
        cache->c.push_back(c);
        cache->tanh_c.push_back(std::move(tc));
        cache->h.push_back(h);
      }
    }
    return hs;
  }

  /// Backpropagation through the whole cached sequence. `grad_h[t]` is the
  /// upstream gradient on h_t; an empty matrix means zero.
  Grads backward(const Cache& cache, const std::vector<Mat<Scalar>>& grad_h, bool accumulate = true) {
    const std::size_t steps = cache.x.size();
    if (grad_h.size() != steps) throw InvariantError(w_x.name + ": need one upstream gradient slot per step");
    const Index H = hidden_size_;
    const Index batch = cache.h0.cols();
    Grads out;
    out.dx.resize(steps);
    Mat<Scalar> dh_next = Mat<Scalar>::Zero(H, batch);
    Mat<Scalar> dc_next = Mat<Scalar>::Zero(H, batch);
    Mat<Scalar> dz(4 * H, batch);
    for (std::size_t k = steps; k-- > 0;) {
      Mat<Scalar> dh = dh_next;
      if (grad_h[k].size()) dh += grad_h[k];
      const Mat<Scalar>& c_prev = k > 0 ? cache.c[k - 1] : cache.c0;
      const Mat<Scalar>& h_prev = k > 0 ? cache.h[k - 1] : cache.h0;
      const auto& i = cache.i[k].array();
      const auto& f = cache.f[k].array();
      const auto& g = cache.g[k].array();
      const auto& o = cache.o[k].array();
      const auto& tc = cache.tanh_c[k].array();

      const auto dh_a = dh.array();
      Mat<Scalar> dc = (dc_next.array() + dh_a * o * (Scalar(1) - tc.square())).matrix();
      dz.topRows(H) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
      dz.middleRows(H, H) = (dc.array() * c_prev.array() * f * (Scalar(1) - f)).matrix();
      dz.middleRows(2 * H, H) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
      dz.bottomRows(H) = (dh_a * tc * o * (Scalar(1) - o)).matrix();
      if (corrupt_backward_for_testing) dz.middleRows(H, H).setZero();

      if (accumulate) {
        w_x.grad.noalias() += dz * cache.x[k].transpose();
        w_h.grad.noalias() += dz * h_prev.transpose();
        bias.grad.col(0) += dz.rowwise().sum();
      }
      out.dx[k] = w_x.value.transpose() * dz;
      dh_next = w_h.value.transpose() * dz;
      dc_next = (dc.array() * f).matrix();
    }
    out.dh0 = std::move(dh_next);
    out.dc0 = std::move(dc_next);
    return out;
  }

  std::vector<ParamBlock<Scalar>*> params() { return {&w_x, &w_h, &bias}; }
  std::vector<const ParamBlock<Scalar>*> params() const { return {&w_x, &w_h, &bias}; }

  ParamBlock<Scalar> w_x;
  ParamBlock<Scalar> w_h;
  ParamBlock<Scalar> bias;

  /// Negative-control hook: drops the forget-gate term from backward.
  bool corrupt_backward_for_testing = false;

 private:
  Index input_size_ = 0;
  Index hidden_size_ = 0;
};

// ---------------------------------------------------------------------------
// Tanh-squashed Gaussian policy head.
// ---------------------------------------------------------------------------

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
/// |tanh(u)| is capped here so actions stay strictly inside the bound.
inline constexpr double kSquashLimit = 1.0 - 1e-7;

struct GaussianPolicyOutput {
  double mean = 0.0;
  double log_std = 0.0;  ///< after clamping
  double pre_squash = 0.0;
  double action = 0.0;
  double log_density = 0.0;
};

/// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|.
inline double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - softplus);
}

inline double clamp_log_std(double log_std) { return std::clamp(log_std, kLogStdMin, kLogStdMax); }

/// Density of a = h_max tanh(u), u ~ N(mean, exp(log_std)^2), at pre-image u.
inline double squashed_log_density_at(double mean, double log_std, double u, double h_max) {
  const double ls = clamp_log_std(log_std);
  const double z = (u - mean) / std::exp(ls);
  return -0.5 * z * z - ls - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(h_max) - log_one_minus_tanh_sq(u);
}

inline GaussianPolicyOutput sample_squashed_gaussian(double mean, double log_std, double noise, double h_max) {
  GaussianPolicyOutput out;
  out.mean = mean;
  out.log_std = clamp_log_std(log_std);
  out.pre_squash = mean + std::exp(out.log_std) * noise;
  const double squashed = std::clamp(std::tanh(out.pre_squash), -kSquashLimit, kSquashLimit);
  out.action = h_max * squashed;
  out.log_density = squashed_log_density_at(mean, out.log_std, out.pre_squash, h_max);
  return out;
}

/// log pi(action) for an action already inside (-h_max, h_max).
inline double squashed_gaussian_log_density(double mean, double log_std, double action, double h_max) {
  const double ratio = std::clamp(action / h_max, -kSquashLimit, kSquashLimit);
  return squashed_log_density_at(mean, log_std, std::atanh(ratio), h_max);
}

/// Partial derivatives of a reparameterized sample with the noise held
/// fixed. Derivatives through log_std vanish when the raw value is clamped.
struct SquashedSampleGrad {
  double daction_dmean = 0.0;
  double daction_dlog_std = 0.0;
  double dlogp_dmean = 0.0;
  double dlogp_dlog_std = 0.0;
};

inline SquashedSampleGrad squashed_sample_grad(double mean, double raw_log_std, double noise, double h_max) {
  const bool clamped = raw_log_std < kLogStdMin || raw_log_std > kLogStdMax;
  const double ls = clamp_log_std(raw_log_std);
  const double sigma = std::exp(ls);
  const double u = mean + sigma * noise;
  const double t = std::tanh(u);
  const double da_du = h_max * (1.0 - t * t);
  SquashedSampleGrad g;
  g.daction_dmean = da_du;
  // Through the change-of-variables term: d/du [-log(1 - tanh^2 u)] = 2 tanh u;
  // the Gaussian term is constant in mean for fixed noise.
  g.dlogp_dmean = 2.0 * t;
  if (!clamped) {
    g.daction_dlog_std = da_du * sigma * noise;
    g.dlogp_dlog_std = -1.0 + 2.0 * t * sigma * noise;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.
// ---------------------------------------------------------------------------

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  ///< block[index] with the largest error
  bool passed = true;
};

struct GradientCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Coordinates per block; larger blocks are subsampled. 0 checks all.
  std::size_t max_per_block = 0;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-7;
  std::uint64_t seed = 0;
};

/// Compares the gradients already stored in `blocks` against central
/// differences of `loss`. `loss` must be a deterministic function of the
/// block values that does not touch the grad buffers.
template <typename LossFn>
GradientCheckReport gradient_check(LossFn&& loss, const std::vector<ParamBlock<double>*>& blocks,
                                   const GradientCheckOptions& opts = {}) {
  GradientCheckReport report;
  Rng rng(opts.seed);
  for (ParamBlock<double>* block : blocks) {
    std::vector<Index> coords;
    const Index n = block->size();
    if (opts.max_per_block == 0 || static_cast<std::size_t>(n) <= opts.max_per_block) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < opts.max_per_block; ++k) coords.push_back(static_cast<Index>(rng.index(n)));
    }
    for (Index i : coords) {
      double& v = block->value(i);
      const double saved = v;
      v = saved + opts.step;
      const double up = loss();
      v = saved - opts.step;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = block->grad(i);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst = block->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

/// Text checkpoint, version 1:
///
///   tracesac-checkpoint v1
///   blocks <count>
///   block <name> <rows> <cols> <step_count>
///   value <rows*cols numbers, column-major>
///   adam_m <...>
///   adam_v <...>
///
/// Numbers are printed with round-trip precision.
template <typename Scalar>
void save_checkpoint(std::ostream& out, const std::vector<const ParamBlock<Scalar>*>& blocks) {
  out << "tracesac-checkpoint v1\n";
  out << "blocks " << blocks.size() << '\n';
  auto dump = [&](const char* tag, const Mat<Scalar>& m) {
    out << tag;
    for (Index i = 0; i < m.size(); ++i) out << ' ' << format_exact(static_cast<double>(m(i)));
    out << '\n';
  };
  for (const ParamBlock<Scalar>* b : blocks) {
    out << "block " << b->name << ' ' << b->value.rows() << ' ' << b->value.cols() << ' ' << b->step_count << '\n';
    dump("value", b->value);
    dump("adam_m", b->adam_m);
    dump("adam_v", b->adam_v);
  }
}

/// Loads values and Adam state into blocks with matching names and shapes.
template <typename Scalar>
void load_checkpoint(std::istream& in, const std::vector<ParamBlock<Scalar>*>& blocks) {
  std::string word, version;
  std::size_t line = 1;
  if (!(in >> word >> version) || word != "tracesac-checkpoint" || version != "v1") {
    throw ParseError(line, "not a tracesac-checkpoint v1 file");
  }
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "blocks") throw ParseError(2, "missing block count");
  if (count != blocks.size()) {
    throw ParseError(2, "checkpoint has " + std::to_string(count) + " blocks, model expects " +
                            std::to_string(blocks.size()));
  }
  line = 2;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    Index rows = 0, cols = 0;
    std::int64_t steps = 0;
    ++line;
    if (!(in >> word >> name >> rows >> cols >> steps) || word != "block") throw ParseError(line, "bad block header");
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](auto* b) { return b->name == name; });
    if (it == blocks.end()) throw ParseError(line, "unknown block '" + name + "'");
    ParamBlock<Scalar>& b = **it;
    if (b.value.rows() != rows || b.value.cols() != cols) throw ParseError(line, "shape mismatch for '" + name + "'");
    b.step_count = steps;
    for (const char* tag : {"value", "adam_m", "adam_v"}) {
      ++line;
      if (!(in >> word) || word != tag) throw ParseError(line, std::string("expected '") + tag + "'");
      Mat<Scalar>& m = std::string(tag) == "value" ? b.value : (std::string(tag) == "adam_m" ? b.adam_m : b.adam_v);
      for (Index i = 0; i < m.size(); ++i) {
        double v = 0.0;
        if (!(in >> v)) throw ParseError(line, "truncated values for '" + name + "'");
        m(i) = static_cast<Scalar>(v);
      }
    }
    b.zero_grad();
  }
}

}  // namespace tracesac::nn
