#include "ardsparse/objectives.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {
namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require_gamma_params(double a, double b, const char* where) {
  if (!(a > 0.5) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    std::ostringstream msg;
    msg << where << ": requires a > 1/2 and b > 0, got a=" << a << " b=" << b;
    throw ContractError(msg.str());
  }
}

void require_positive(const Tensor& t, const char* where) {
  for (double v : t.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError(std::string(where) + ": values must be positive and finite");
  }
}

void require_same_shape(const GaussianPosterior& post, const Tensor& other, const char* where) {
  if (post.shape() != other.shape()) {
    throw DimensionError(std::string(where) + ": shape " + shape_str(other.shape()) + " vs posterior " +
                         shape_str(post.shape()));
  }
}

template <typename F>
double sum_terms(const GaussianPosterior& post, F&& term) {
  double total = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i) total += term(post.mu[i], post.log_sigma[i]).value;
  return total;
}

ElementTerm gamma_term_with_constant(double mu, double log_sigma, double a, double b, double constant) {
  const double var = std::exp(2.0 * log_sigma);
  const double spread = var + mu * mu + 2.0 * b;
  const double shrink = 2.0 * a - 1.0;
  return {log_sigma - 0.5 * shrink * std::log(spread) + constant, -shrink * mu / spread, 1.0 - shrink * var / spread};
}

}  // namespace

void ObjectiveSpec::validate() const {
  if (!(reg_scale > 0.0 && reg_scale <= 1.0)) {
    throw ContractError("objective: reg_scale must lie in (0, 1], got " + std::to_string(reg_scale));
  }
  if (anneal_epochs < 0) throw ContractError("objective: anneal_epochs must be >= 0");
  if (kind == ObjectiveKind::FixedAlphaDropout && !(alpha > 0.0 && std::isfinite(alpha))) {
    throw ContractError("objective: fixed-alpha requires alpha > 0");
  }
  if (kind == ObjectiveKind::GammaMap2) require_gamma_params(a, b, "objective gamma");
}

std::string_view objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Ard: return "ard";
    case ObjectiveKind::FixedAlphaDropout: return "fixed-alpha";
    case ObjectiveKind::ArdDropout: return "ard-dropout";
    case ObjectiveKind::SparseVd: return "svdo";
    case ObjectiveKind::GammaMap2: return "gamma";
  }
  return "?";
}

ObjectiveKind parse_objective(std::string_view name) {
  if (name == "ard") return ObjectiveKind::Ard;
  if (name == "fixed-alpha") return ObjectiveKind::FixedAlphaDropout;
  if (name == "ard-dropout") return ObjectiveKind::ArdDropout;
  if (name == "svdo") return ObjectiveKind::SparseVd;
  if (name == "gamma") return ObjectiveKind::GammaMap2;
  throw ContractError("unknown objective '" + std::string(name) + "' (expected ard, fixed-alpha, ard-dropout, svdo, gamma)");
}

ElementTerm ard_term(double mu, double log_sigma) {
  const double inv_var = std::exp(-2.0 * log_sigma);
  const double ratio = mu * mu * inv_var;  // μ²/σ²
  const double denom = 1.0 + ratio;
  return {-0.5 * std::log1p(ratio), -mu * inv_var / denom, ratio / denom};
}

ElementTerm ard_dropout_term(double mu, double log_sigma) {
  if (std::abs(mu) < kMuFloor) return {0.0, 0.0, 0.0};
  // -½ softplus(-log α) with 1/α = μ²/σ² is the ARD term itself.
  return ard_term(mu, log_sigma);
}

ElementTerm svdo_term(double mu, double log_sigma, const SvdoConstants& k) {
  const double raw = std::abs(mu) < kMuFloor ? kLogAlphaMax : 2.0 * log_sigma - 2.0 * std::log(std::abs(mu));
  const double log_alpha = clamped_log_alpha(mu, log_sigma);
  const double s = stable_sigmoid(k.k2 + k.k3 * log_alpha);
  const double value = k.k1 * s - 0.5 * softplus(-log_alpha) + k.c;
  if (raw <= kLogAlphaMin || raw >= kLogAlphaMax) return {value, 0.0, 0.0};
  const double d_log_alpha = k.k1 * k.k3 * s * (1.0 - s) + 0.5 * stable_sigmoid(-log_alpha);
  return {value, d_log_alpha * (-2.0 / mu), d_log_alpha * 2.0};
}

ElementTerm gamma_map2_term(double mu, double log_sigma, double a, double b) {
  return gamma_term_with_constant(mu, log_sigma, a, b, gamma_map2_constant(a, b));
}

double ard_dropout_term_alpha(double alpha) { return -0.5 * std::log1p(1.0 / alpha); }

double svdo_term_alpha(double alpha, const SvdoConstants& k) {
  double log_alpha = std::log(alpha);
  log_alpha = log_alpha < kLogAlphaMin ? kLogAlphaMin : (log_alpha > kLogAlphaMax ? kLogAlphaMax : log_alpha);
  return k.k1 * stable_sigmoid(k.k2 + k.k3 * log_alpha) - 0.5 * softplus(-log_alpha) + k.c;
}

double ard_reg(const GaussianPosterior& post) { return sum_terms(post, ard_term); }

double ard_dropout_reg(const Tensor& alpha) {
  require_positive(alpha, "ard_dropout_reg");
  double total = 0.0;
  for (double a : alpha.data()) total += ard_dropout_term_alpha(a);
  return total;
}

double svdo_reg(const Tensor& alpha, const SvdoConstants& k) {
  require_positive(alpha, "svdo_reg");
  double total = 0.0;
  for (double a : alpha.data()) total += svdo_term_alpha(a, k);
  return total;
}

double gamma_map2_constant(double a, double b) {
  require_gamma_params(a, b, "gamma_map2_constant");
  return 1.0 - a + a * std::log(b) - std::lgamma(a) + 0.5 * (2.0 * a - 1.0) * std::log(2.0 * a - 1.0);
}

double gamma_map2_reg(const GaussianPosterior& post, double a, double b) {
  const double constant = gamma_map2_constant(a, b);
  return sum_terms(post, [=](double mu, double ls) { return gamma_term_with_constant(mu, ls, a, b, constant); });
}

Tensor optimal_tau(const GaussianPosterior& post) {
  Tensor tau(post.shape());
  for (std::size_t i = 0; i < post.size(); ++i) {
    tau[i] = 1.0 / (post.mu[i] * post.mu[i] + std::exp(2.0 * post.log_sigma[i]));
  }
  ensure_finite(tau, "optimal_tau");
  return tau;
}

Tensor optimal_tau_gamma(const GaussianPosterior& post, double a, double b) {
  if (!(a > 0.5)) throw ContractError("optimal_tau_gamma: requires a > 1/2, got " + std::to_string(a));
  if (b < 0.0) throw ContractError("optimal_tau_gamma: requires b >= 0");
  Tensor tau(post.shape());
  for (std::size_t i = 0; i < post.size(); ++i) {
    tau[i] = (2.0 * a - 1.0) / (std::exp(2.0 * post.log_sigma[i]) + post.mu[i] * post.mu[i] + 2.0 * b);
  }
  ensure_finite(tau, "optimal_tau_gamma");
  return tau;
}

double kl_given_tau(const GaussianPosterior& post, const Tensor& tau) {
  require_same_shape(post, tau, "kl_given_tau");
  require_positive(tau, "kl_given_tau");
  double total = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i) {
    const double var = std::exp(2.0 * post.log_sigma[i]);
    const double second_moment = var + post.mu[i] * post.mu[i];
    total += -0.5 + 0.5 * tau[i] * second_moment - 0.5 * (std::log(tau[i]) + 2.0 * post.log_sigma[i]);
  }
  return total;
}

double log_gamma_prior(const Tensor& tau, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("log_gamma_prior: requires a > 0 and b > 0");
  require_positive(tau, "log_gamma_prior");
  double total = 0.0;
  const double norm = a * std::log(b) - std::lgamma(a);
  for (double t : tau.data()) total += norm + (a - 1.0) * std::log(t) - b * t;
  return total;
}

double student_pdf(double w, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("student_pdf: requires a > 0 and b > 0");
  // ν = 2a, λ = a/b, so λ/ν = 1/(2b).
  const double log_pdf = std::lgamma(a + 0.5) - std::lgamma(a) - 0.5 * std::log(2.0 * std::numbers::pi * b) -
                         (a + 0.5) * std::log1p(w * w / (2.0 * b));
  return std::exp(log_pdf);
}

double marginal_prior_quadrature(double w, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("marginal_prior_quadrature: requires a > 0 and b > 0");
  // With τ = e^t the integrand is exp(g(t)),
  //   g(t) = (a + ½) t - β e^t + a log b - log Γ(a) - ½ log 2π,  β = w²/2 + b,
  // which is unimodal with its peak at t* = log((a + ½)/β).
  const double power = a + 0.5;
  const double beta = 0.5 * w * w + b;
  const double t_peak = std::log(power / beta);
  const double g_peak = power * (t_peak - 1.0) + a * std::log(b) - std::lgamma(a) - 0.5 * std::log(2.0 * std::numbers::pi);
  auto shape = [&](double t) {
    const double d = t - t_peak;
    return std::exp(power * (d - std::expm1(d)));  // exp(g(t) - g(t*))
  };
  // Truncate where the integrand has fallen by e^-60 from its peak.
  constexpr double kDrop = 60.0;
  const double left = kDrop / power;
  double right = 1.0;
  while (power * (std::expm1(right) - right) < kDrop) right += 0.25;

  double error = 0.0;
  const double area = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(shape, t_peak - left, t_peak + right,
                                                                                   20, 1e-13, &error);
  const double value = std::exp(g_peak) * area;
  const double abs_error = std::exp(g_peak) * error;
  if (!std::isfinite(value) || (abs_error > 1e-9 && abs_error > 1e-9 * value)) {
    std::ostringstream msg;
    msg << "marginal_prior_quadrature: no convergence at w=" << w << " a=" << a << " b=" << b
        << " (error estimate " << abs_error << ")";
    throw NumericError(msg.str());
  }
  return value;
}

double elbo_value(double data_term, double reg_term, const ObjectiveSpec& spec, double anneal_factor) {
  if (!(anneal_factor >= 0.0 && anneal_factor <= 1.0)) {
    throw ContractError("elbo_value: anneal_factor must lie in [0, 1]");
  }
  return data_term + spec.reg_scale * anneal_factor * reg_term;
}

Var regularizer(const ObjectiveSpec& spec, Var mu, Var log_sigma) {
  switch (spec.kind) {
    case ObjectiveKind::Ard:
      return ad::pairwise_sum(mu, log_sigma, ard_term);
    case ObjectiveKind::ArdDropout:
      return ad::pairwise_sum(mu, log_sigma, ard_dropout_term);
    case ObjectiveKind::SparseVd:
      return ad::pairwise_sum(mu, log_sigma, [k = spec.svdo](double m, double s) { return svdo_term(m, s, k); });
    case ObjectiveKind::GammaMap2:
      return ad::pairwise_sum(mu, log_sigma, [a = spec.a, b = spec.b, c = gamma_map2_constant(spec.a, spec.b)](
                                                 double m, double s) { return gamma_term_with_constant(m, s, a, b, c); });
    case ObjectiveKind::FixedAlphaDropout:
      break;
  }
  return mu.tape->constant(Tensor::scalar(0.0));
}

double regularizer_value(const ObjectiveSpec& spec, const GaussianPosterior& post) {
  switch (spec.kind) {
    case ObjectiveKind::Ard: return ard_reg(post);
    case ObjectiveKind::ArdDropout: return sum_terms(post, ard_dropout_term);
    case ObjectiveKind::SparseVd:
      return sum_terms(post, [&k = spec.svdo](double m, double s) { return svdo_term(m, s, k); });
    case ObjectiveKind::GammaMap2: return gamma_map2_reg(post, spec.a, spec.b);
    case ObjectiveKind::FixedAlphaDropout: return 0.0;
  }
  return 0.0;
}

}  // namespace ardsparse
