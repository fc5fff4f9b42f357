#pragma once

#include <string>
#include <string_view>

#include "ardsparse/autodiff.hpp"
#include "ardsparse/posterior.hpp"
#include "ardsparse/tensor.hpp"

namespace ardsparse {

// Coefficients of the sigmoid approximation to the Sparse VD KL term.
// `c` is the additive constant; it defaults to -k1 and is stored separately so
// the coefficients can be perturbed independently in sensitivity checks.
struct SvdoConstants {
  double k1 = 0.63576;
  double k2 = 1.87320;
  double k3 = 1.48695;
  double c = -0.63576;
};

enum class ObjectiveKind { Ard, FixedAlphaDropout, ArdDropout, SparseVd, GammaMap2 };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::ArdDropout;
  double alpha = 1.0;   // FixedAlphaDropout only
  double a = 1.0;       // GammaMap2 shape
  double b = 1e-8;      // GammaMap2 rate
  double reg_scale = 1.0;
  int anneal_epochs = 0;
  SvdoConstants svdo{};

  // Throws ContractError unless every field is within its documented domain.
  void validate() const;
};

// CLI spelling: ard, fixed-alpha, ard-dropout, svdo, gamma.
std::string_view objective_name(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view name);

// ---- per-weight terms -----------------------------------------------------
//
// Each returns the value and its partials w.r.t. (μ, log σ).

ElementTerm ard_term(double mu, double log_sigma);
ElementTerm ard_dropout_term(double mu, double log_sigma);
ElementTerm svdo_term(double mu, double log_sigma, const SvdoConstants& k = {});
ElementTerm gamma_map2_term(double mu, double log_sigma, double a, double b);

// Same terms written as functions of α alone.
double ard_dropout_term_alpha(double alpha);
double svdo_term_alpha(double alpha, const SvdoConstants& k = {});

// ---- regularizers (summed over weights) -----------------------------------

// -½ Σ log(1 + μ²/σ²)
double ard_reg(const GaussianPosterior& post);
// -½ Σ log(1 + 1/α); α must be positive.
double ard_dropout_reg(const Tensor& alpha);
// Σ [k1·sigmoid(k2 + k3·log α) - ½ log(1 + 1/α) + c], log α clamped.
double svdo_reg(const Tensor& alpha, const SvdoConstants& k = {});
// Σ [½ log(σ² / (σ² + μ² + 2b)^(2a-1)) + C(a, b)]; requires a > 1/2, b > 0.
double gamma_map2_reg(const GaussianPosterior& post, double a, double b);
// C(a, b) = 1 - a + a log b - log Γ(a) + ½(2a-1) log(2a-1)
double gamma_map2_constant(double a, double b);

// ---- hyperparameters and KL ----------------------------------------------

// τ* = 1 / (μ² + σ²)
Tensor optimal_tau(const GaussianPosterior& post);
// τ* = (2a - 1) / (σ² + μ² + 2b); requires a > 1/2.
Tensor optimal_tau_gamma(const GaussianPosterior& post, double a, double b);
// Σ KL(N(μ_i, σ_i²) || N(0, 1/τ_i)); τ must be positive.
double kl_given_tau(const GaussianPosterior& post, const Tensor& tau);
// Σ log Gamma(τ_i | a, b) with rate parameterization.
double log_gamma_prior(const Tensor& tau, double a, double b);

// ---- marginal prior -------------------------------------------------------

// Density of Student(ν = 2a, location 0, precision λ = a/b).
double student_pdf(double w, double a, double b);
// ∫ N(w | 0, 1/τ) Gamma(τ | a, b) dτ by adaptive Gauss-Kronrod in log τ.
double marginal_prior_quadrature(double w, double a, double b);

// ---- objective assembly ---------------------------------------------------

// data_term + reg_scale · anneal_factor · reg_term
double elbo_value(double data_term, double reg_term, const ObjectiveSpec& spec, double anneal_factor);

// Regularizer of `spec` on one posterior, recorded on the tape.
// FixedAlphaDropout has a constant regularizer and records 0.
Var regularizer(const ObjectiveSpec& spec, Var mu, Var log_sigma);
// Same value evaluated without a tape.
double regularizer_value(const ObjectiveSpec& spec, const GaussianPosterior& post);

}  // namespace ardsparse
