#pragma once

// Randomized check instances shared by the unit tests and the acceptance
// binary. Each returns the worst error it saw.

#include <cmath>
#include <cstdint>
#include <random>

#include "ardsparse/bayes_nn.hpp"
#include "ardsparse/objectives.hpp"
#include "oracles.hpp"

namespace suites {

using namespace ardsparse;

inline GaussianPosterior random_posterior(std::mt19937_64& gen, const Shape& shape, double ls_lo, double ls_hi) {
  return {oracle::random_tensor(gen, shape, -1.0, 1.0), oracle::random_tensor(gen, shape, ls_lo, ls_hi)};
}

// Finite-difference check of one local-reparameterization layer (dense or
// conv, with a Bayesian bias) w.r.t. its input and all four posterior tensors.
inline double layer_gradient_error(bool conv, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Shape x_shape, w_shape;
  ConvGeometry geo;
  if (conv) {
    const ConvGeometry options[] = {{1, 0}, {1, 1}, {2, 1}};
    geo = options[seed % 3];
    x_shape = {2, 2, 5, 5};
    w_shape = {3, 2, 3, 3};
  } else {
    x_shape = {3, 4};
    w_shape = {4, 5};
  }
  const Tensor x = oracle::random_tensor(gen, x_shape);
  const GaussianPosterior w = random_posterior(gen, w_shape, -2.0, 0.0);
  const GaussianPosterior b = random_posterior(gen, {w_shape[0 + (conv ? 0 : 1)]}, -2.0, 0.0);

  // Shapes of the output follow from one deterministic pass.
  Shape out_shape;
  {
    Tape t;
    const PosteriorVars wv{t.constant(w.mu), t.constant(w.log_sigma)};
    ForwardOptions det;
    det.mode = EvalMode::Deterministic;
    const Var y = conv ? conv_forward(t.constant(x), wv, nullptr, geo, det, 0) : dense_forward(t.constant(x), wv, nullptr, det, 0);
    out_shape = t.value(y).shape();
  }
  const Tensor eps = oracle::random_tensor(gen, out_shape, -2.0, 2.0);
  const Tensor upstream = oracle::random_tensor(gen, out_shape, 0.5, 1.5);
  ForwardOptions opts;
  opts.noise = [&](std::size_t, const Shape&) { return eps; };

  auto build = [&](Tape& t, Var xv, const PosteriorVars& wv, const PosteriorVars& bv) {
    const Var y = conv ? conv_forward(xv, wv, &bv, geo, opts, 0) : dense_forward(xv, wv, &bv, opts, 0);
    return ad::sum(ad::mul(y, t.constant(upstream)));
  };
  auto value = [&](const Tensor& xx, const Tensor& wm, const Tensor& wl, const Tensor& bm, const Tensor& bl) {
    Tape t;
    return t.value(build(t, t.constant(xx), {t.constant(wm), t.constant(wl)}, {t.constant(bm), t.constant(bl)})).item();
  };

  Tape tape;
  const Var xv = tape.parameter(x);
  const PosteriorVars wv{tape.parameter(w.mu), tape.parameter(w.log_sigma)};
  const PosteriorVars bv{tape.parameter(b.mu), tape.parameter(b.log_sigma)};
  const Gradients g = tape.backward(build(tape, xv, wv, bv));

  double worst = 0.0;
  auto check = [&](Var v, const Tensor& at, const std::function<double(const Tensor&)>& f) {
    worst = std::max(worst, oracle::max_relative_error(g[v], oracle::numeric_gradient(f, at)));
  };
  check(xv, x, [&](const Tensor& p) { return value(p, w.mu, w.log_sigma, b.mu, b.log_sigma); });
  check(wv.mu, w.mu, [&](const Tensor& p) { return value(x, p, w.log_sigma, b.mu, b.log_sigma); });
  check(wv.log_sigma, w.log_sigma, [&](const Tensor& p) { return value(x, w.mu, p, b.mu, b.log_sigma); });
  check(bv.mu, b.mu, [&](const Tensor& p) { return value(x, w.mu, w.log_sigma, p, b.log_sigma); });
  check(bv.log_sigma, b.log_sigma, [&](const Tensor& p) { return value(x, w.mu, w.log_sigma, b.mu, p); });
  return worst;
}

// Finite-difference check of one objective's tape regularizer on a random
// posterior of 12 weights.
inline double regularizer_gradient_error(ObjectiveKind kind, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> mag(0.01, 2.0), coin(0.0, 1.0), ls(-6.0, 1.0);
  Tensor mu({12}), log_sigma({12});
  for (std::size_t i = 0; i < 12; ++i) {
    mu[i] = (coin(gen) < 0.5 ? -1.0 : 1.0) * mag(gen);
    log_sigma[i] = ls(gen);
  }
  ObjectiveSpec spec;
  spec.kind = kind;
  spec.a = 0.5 + std::uniform_real_distribution<double>(0.005, 2.0)(gen);
  spec.b = std::exp(std::uniform_real_distribution<double>(std::log(1e-8), 0.0)(gen));
  Tape tape;
  const Var m = tape.parameter(mu), s = tape.parameter(log_sigma);
  const Gradients g = tape.backward(regularizer(spec, m, s));
  const Tensor n_mu = oracle::numeric_gradient(
      [&](const Tensor& p) { return regularizer_value(spec, GaussianPosterior(p, log_sigma)); }, mu);
  const Tensor n_ls = oracle::numeric_gradient(
      [&](const Tensor& p) { return regularizer_value(spec, GaussianPosterior(mu, p)); }, log_sigma);
  return std::max(oracle::max_relative_error(g[m], n_mu), oracle::max_relative_error(g[s], n_ls));
}

struct MomentResult {
  double worst_mean_z = 0.0;      // |mean - m| in standard errors
  double worst_variance_z = 0.0;  // |var - v| in standard errors
};

// Empirical output moments over `draws` stochastic passes, compared with
// m = x·μ and v = x²·σ² computed by naive loops. The weight-sampling route
// draws W ~ q(W) and forms x·W directly, which the local reparameterization
// must match in distribution.
inline MomentResult moment_check(bool conv, std::uint64_t seed, std::size_t draws, bool sample_weights) {
  std::mt19937_64 gen(seed);
  const Tensor x = conv ? oracle::random_tensor(gen, {1, 2, 5, 5}) : oracle::random_tensor(gen, {2, 6});
  const GaussianPosterior post = random_posterior(gen, conv ? Shape{2, 2, 3, 3} : Shape{6, 4}, -1.5, -0.5);
  const ConvGeometry geo{1, 0};
  auto linear = [&](const Tensor& in, const Tensor& w) {
    return conv ? oracle::naive_conv2d(in, w, 1, 0) : oracle::naive_matmul(in, w);
  };
  Tensor var_w(post.shape());
  for (std::size_t i = 0; i < var_w.size(); ++i) var_w[i] = std::exp(2 * post.log_sigma[i]);
  Tensor x_sq = x;
  for (double& v : x_sq.data()) v *= v;
  const Tensor m = linear(x, post.mu);
  const Tensor v = linear(x_sq, var_w);

  Rng rng(seed);
  std::vector<double> sum(m.size()), sum_sq(m.size());
  for (std::size_t d = 0; d < draws; ++d) {
    Tensor y;
    if (sample_weights) {
      Tensor w = post.mu;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += std::sqrt(var_w[i]) * rng.normal();
      y = conv ? conv2d(x, w, geo) : matmul(x, w);
    } else {
      y = conv ? conv_forward(x, post, geo, EvalMode::Stochastic, rng) : dense_forward(x, post, EvalMode::Stochastic, rng);
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      sum[i] += y[i];
      sum_sq[i] += y[i] * y[i];
    }
  }
  MomentResult out;
  const double n = static_cast<double>(draws);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double mean = sum[i] / n;
    const double var = (sum_sq[i] - n * mean * mean) / (n - 1);
    out.worst_mean_z = std::max(out.worst_mean_z, std::abs(mean - m[i]) / std::sqrt(v[i] / n));
    out.worst_variance_z = std::max(out.worst_variance_z, std::abs(var - v[i]) / (v[i] * std::sqrt(2.0 / (n - 1))));
  }
  return out;
}

}  // namespace suites
