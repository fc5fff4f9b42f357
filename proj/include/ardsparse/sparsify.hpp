#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ardsparse/bayes_nn.hpp"
#include "ardsparse/tensor.hpp"

namespace ardsparse {

inline constexpr double kDefaultTrimThreshold = 1e-2;

// Deterministic-mode weights: the posterior means.
Tensor deterministic_weights(const GaussianPosterior& post);

struct TrimResult {
  Tensor weights;          // |w| < threshold replaced by exactly 0
  std::vector<bool> mask;  // true for survivors
  std::size_t nonzero = 0;
  bool degenerate() const noexcept { return nonzero == 0; }
};

// Strict inequality: |w| == threshold survives.
TrimResult trim(const Tensor& weights, double threshold);

// total / nonzero. Throws DegenerateNetworkError when nonzero == 0.
double compression(std::size_t total, std::size_t nonzero);

struct SparsifyOptions {
  double threshold = kDefaultTrimThreshold;
  // Count (and trim) biases alongside weights.
  bool include_bias = false;
};

struct LayerSparsity {
  std::size_t layer = 0;  // index into BayesNet::layers()
  std::string kind;
  std::size_t total = 0;
  std::size_t nonzero = 0;
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;
  std::size_t total = 0;
  std::size_t nonzero = 0;
  double threshold = kDefaultTrimThreshold;
  bool include_bias = false;
  // Unset when every weight was trimmed.
  std::optional<double> compression;
  std::optional<double> test_error_percent;
  // ‖Δlogits‖∞ between untrimmed and trimmed deterministic nets on an eval batch.
  std::optional<double> max_logit_perturbation;

  // JSON object; keys are stable.
  std::string to_json() const;
};

SparsityReport sparsity_report(const BayesNet& net, const SparsifyOptions& opts = {});

// Copy of `net` whose trimmed means are set to exactly 0.
BayesNet trim_network(const BayesNet& net, const SparsifyOptions& opts = {});

// max |predict(net)(x) - predict(trim_network(net))(x)|
double max_logit_perturbation(const BayesNet& net, const Tensor& batch, const SparsifyOptions& opts = {});

}  // namespace ardsparse
