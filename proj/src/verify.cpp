#include "ardsparse/verify.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "ardsparse/rng.hpp"

namespace ardsparse {
namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

GaussianPosterior single(double mu, double sigma) {
  return {Tensor({1}, {mu}), Tensor({1}, {std::log(sigma)})};
}

GaussianPosterior random_posterior(Rng& rng, std::size_t n) {
  Tensor mu({n}), log_sigma({n});
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = uniform(rng, -2.0, 2.0);
    log_sigma[i] = std::log(uniform(rng, 0.1, 2.0));
  }
  return {std::move(mu), std::move(log_sigma)};
}

// Central difference of f at x with step h.
template <typename F>
double central_difference(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

CheckResult make(std::string name, double observed, double tolerance, bool passed, std::string detail = {}) {
  return {std::move(name), passed, observed, tolerance, std::move(detail)};
}

CheckResult tau_stationarity(Rng rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const GaussianPosterior post = single(uniform(rng, -2.0, 2.0), uniform(rng, 0.1, 2.0));
    const double tau_star = optimal_tau(post)[0];
    auto objective = [&](double tau) { return -kl_given_tau(post, Tensor({1}, {tau})); };
    worst = std::max(worst, std::abs(central_difference(objective, tau_star, 1e-5 * tau_star)));
  }
  return make("tau_star_stationarity", worst, 1e-8, worst < 1e-8, "max |d(-KL)/dtau| at tau*, 200 draws");
}

CheckResult gamma_tau_stationarity(Rng rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const GaussianPosterior post = single(uniform(rng, -2.0, 2.0), uniform(rng, 0.1, 2.0));
    const double a = uniform(rng, 0.55, 3.0);
    const double b = uniform(rng, 0.01, 1.0);
    const double tau_star = optimal_tau_gamma(post, a, b)[0];
    auto objective = [&](double tau) {
      const Tensor t({1}, {tau});
      return log_gamma_prior(t, a, b) - kl_given_tau(post, t);
    };
    worst = std::max(worst, std::abs(central_difference(objective, tau_star, 1e-5 * tau_star)));
  }
  return make("gamma_tau_star_stationarity", worst, 1e-8, worst < 1e-8,
              "max |d(log p(tau) - KL)/dtau| at tau*, 200 draws");
}

CheckResult ard_equals_neg_kl(Rng rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const GaussianPosterior post = random_posterior(rng, 100);
    const double via_tau = -kl_given_tau(post, optimal_tau(post));
    worst = std::max(worst, std::abs(ard_reg(post) - via_tau));
  }
  return make("ard_reg_equals_neg_kl_at_tau_star", worst, 1e-10, worst <= 1e-10, "50 posteriors of 100 weights");
}

CheckResult gamma_equals_prior_minus_kl(Rng rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const GaussianPosterior post = random_posterior(rng, 20);
    const double a = uniform(rng, 0.55, 3.0);
    const double b = std::exp(uniform(rng, std::log(1e-6), std::log(2.0)));
    const Tensor tau = optimal_tau_gamma(post, a, b);
    const double via_tau = log_gamma_prior(tau, a, b) - kl_given_tau(post, tau);
    worst = std::max(worst, std::abs(gamma_map2_reg(post, a, b) - via_tau));
  }
  return make("gamma_reg_equals_log_prior_minus_kl", worst, 1e-10, worst <= 1e-10, "50 posteriors of 20 weights");
}

CheckResult gamma_reduces_to_ard(Rng rng) {
  constexpr double a = 1.0, b = 1e-12;
  const double constant = gamma_map2_constant(a, b);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const GaussianPosterior post = random_posterior(rng, 1);
    worst = std::max(worst, std::abs(gamma_map2_reg(post, a, b) - constant - ard_reg(post)));
  }
  return make("gamma_a1_b0_equals_ard", worst, 1e-8, worst <= 1e-8, "a=1, b=1e-12, 1000 weights");
}

std::vector<double> log_grid(double lo, double hi, int points) {
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i) {
    grid[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (points - 1));
  }
  return grid;
}

CheckResult svdo_lower_bound(const SvdoConstants& k) {
  double worst = -std::numeric_limits<double>::infinity();
  for (double alpha : log_grid(kAlphaMin, kAlphaMax, 1000)) {
    worst = std::max(worst, svdo_term_alpha(alpha, k) - ard_dropout_term_alpha(alpha));
  }
  return make("svdo_below_ard_dropout", worst, 0.0, worst <= 0.0, "max(svdo - ard_dropout) over 1000 log-spaced alpha");
}

CheckResult svdo_gap_monotone(const SvdoConstants& k) {
  double prev = std::numeric_limits<double>::infinity();
  double worst_increase = 0.0;
  for (double alpha : log_grid(kAlphaMin, kAlphaMax, 1000)) {
    const double gap = ard_dropout_term_alpha(alpha) - svdo_term_alpha(alpha, k);
    worst_increase = std::max(worst_increase, gap - prev);
    prev = gap;
  }
  return make("svdo_gap_nonincreasing", worst_increase, 0.0, worst_increase <= 0.0,
              "largest step-to-step gap increase along the alpha grid");
}

CheckResult svdo_limit(const SvdoConstants& k) {
  const double gap = std::abs(svdo_term_alpha(1e6, k) - ard_dropout_term_alpha(1e6));
  return make("svdo_limit_gap_at_alpha_1e6", gap, 1e-9, gap < 1e-9, "|svdo - ard_dropout| at alpha=1e6");
}

CheckResult kl_minimized_at_tau_star(Rng rng) {
  double worst = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    const GaussianPosterior post = single(uniform(rng, -2.0, 2.0), uniform(rng, 0.1, 2.0));
    const double at_star = kl_given_tau(post, optimal_tau(post));
    for (int i = 0; i < 1000; ++i) {
      const double tau = std::exp(uniform(rng, std::log(1e-3), std::log(1e3)));
      worst = std::min(worst, kl_given_tau(post, Tensor({1}, {tau})) - at_star);
    }
  }
  return make("kl_minimized_at_tau_star", worst, -1e-12, worst >= -1e-12, "min KL(tau) - KL(tau*) over 20x1000 draws");
}

CheckResult kl_nonnegative(Rng rng) {
  double worst = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 1000; ++trial) {
    const GaussianPosterior post = random_posterior(rng, 1);
    const double tau = std::exp(uniform(rng, std::log(1e-3), std::log(1e3)));
    worst = std::min(worst, kl_given_tau(post, Tensor({1}, {tau})));
  }
  return make("kl_nonnegative", worst, 0.0, worst >= 0.0, "min KL over 1000 draws");
}

CheckResult ard_term_nonpositive(Rng rng) {
  double worst = -std::numeric_limits<double>::infinity();
  bool zero_iff = true;
  for (int trial = 0; trial < 10000; ++trial) {
    const double mu = trial % 100 == 0 ? 0.0 : uniform(rng, -3.0, 3.0);
    const double log_sigma = uniform(rng, -8.0, 2.0);
    const double value = ard_term(mu, log_sigma).value;
    worst = std::max(worst, value);
    zero_iff = zero_iff && ((value == 0.0) == (mu == 0.0));
  }
  return make("ard_term_nonpositive", worst, 0.0, worst <= 0.0 && zero_iff, "max term over 10^4 pairs; zero iff mu=0");
}

CheckResult quadrature_matches_student() {
  double worst = 0.0;
  for (double w : {0.0, 0.5, -0.5, 2.0, -2.0}) {
    for (double a : {0.6, 1.0, 2.0}) {
      for (double b : {0.5, 1.0, 2.0}) {
        worst = std::max(worst, std::abs(marginal_prior_quadrature(w, a, b) - student_pdf(w, a, b)));
      }
    }
  }
  std::ostringstream detail;
  detail << "max abs error over 45 (w, a, b) grid points = " << std::scientific << std::setprecision(3) << worst;
  return make("scale_mixture_equals_student_t", worst, 1e-6, worst < 1e-6, detail.str());
}

CheckResult student_normalized() {
  boost::math::quadrature::exp_sinh<double> integrator;
  double worst = 0.0;
  for (double a : {0.6, 1.0, 2.0}) {
    for (double b : {0.5, 1.0, 2.0}) {
      const double half = integrator.integrate([&](double w) { return student_pdf(w, a, b); }, 0.0,
                                               std::numeric_limits<double>::infinity());
      worst = std::max(worst, std::abs(2.0 * half - 1.0));
    }
  }
  return make("student_t_integrates_to_one", worst, 1e-6, worst < 1e-6, "whole real line, 9 (a, b) pairs");
}

CheckResult log_uniform_limit() {
  constexpr double xi = 1e-4;
  const double ratio = marginal_prior_quadrature(0.1, xi, xi) * 0.1 / (marginal_prior_quadrature(1.0, xi, xi) * 1.0);
  return make("log_uniform_limit_ratio", ratio, 0.01, ratio >= 0.99 && ratio <= 1.01,
              "p(w)|w| at w=0.1 over w=1.0 with a=b=1e-4");
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  const Rng root(opts.seed);
  return {
      tau_stationarity(root.split(0)),
      gamma_tau_stationarity(root.split(1)),
      ard_equals_neg_kl(root.split(2)),
      gamma_equals_prior_minus_kl(root.split(3)),
      gamma_reduces_to_ard(root.split(4)),
      svdo_lower_bound(opts.svdo),
      svdo_gap_monotone(opts.svdo),
      svdo_limit(opts.svdo),
      kl_minimized_at_tau_star(root.split(5)),
      kl_nonnegative(root.split(6)),
      ard_term_nonpositive(root.split(7)),
      quadrature_matches_student(),
      student_normalized(),
      log_uniform_limit(),
  };
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

void print_verification_table(std::ostream& out, const std::vector<CheckResult>& results) {
  out << std::left << std::setw(6) << "status" << "  " << std::setw(38) << "check" << std::setw(14) << "observed"
      << std::setw(12) << "tolerance" << "detail\n";
  for (const CheckResult& r : results) {
    std::ostringstream observed, tolerance;
    observed << std::scientific << std::setprecision(3) << r.observed;
    tolerance << std::scientific << std::setprecision(1) << r.tolerance;
    out << std::left << std::setw(6) << (r.passed ? "PASS" : "FAIL") << "  " << std::setw(38) << r.name << std::setw(14)
        << observed.str() << std::setw(12) << tolerance.str() << r.detail << '\n';
  }
}

}  // namespace ardsparse
