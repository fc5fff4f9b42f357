#pragma once

#include <cmath>
#include <numbers>

#include "ardsparse/tensor.hpp"

namespace ardsparse {

// α is clamped to [kAlphaMin, kAlphaMax]; log α to the matching range.
inline constexpr double kAlphaMin = 1e-8;
inline constexpr double kAlphaMax = 1e8;
inline constexpr double kLogAlphaMax = 8.0 * std::numbers::ln10;
inline constexpr double kLogAlphaMin = -kLogAlphaMax;
// |μ| below this is treated as zero when forming σ²/μ².
inline constexpr double kMuFloor = 1e-12;

// Fully factorized Gaussian q(w) = Π N(w_i | μ_i, σ_i²), stored as
// (μ, ρ = log σ) so that σ > 0 holds by construction.
struct GaussianPosterior {
  Tensor mu;
  Tensor log_sigma;

  GaussianPosterior() = default;
  GaussianPosterior(Tensor mu_, Tensor log_sigma_);

  const Shape& shape() const noexcept { return mu.shape(); }
  std::size_t size() const noexcept { return mu.size(); }
  Tensor sigma() const;

  friend bool operator==(const GaussianPosterior&, const GaussianPosterior&) = default;
};

// Dropout rate σ²/μ², clamped to [kAlphaMin, kAlphaMax]; kAlphaMax where |μ| < kMuFloor.
Tensor alpha_of(const GaussianPosterior& post);

// log(σ²/μ²) for one weight, clamped to [kLogAlphaMin, kLogAlphaMax].
inline double clamped_log_alpha(double mu, double log_sigma) {
  if (std::abs(mu) < kMuFloor) return kLogAlphaMax;
  const double la = 2.0 * log_sigma - 2.0 * std::log(std::abs(mu));
  return la < kLogAlphaMin ? kLogAlphaMin : (la > kLogAlphaMax ? kLogAlphaMax : la);
}

}  // namespace ardsparse
