#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ardsparse/autodiff.hpp"
#include "ardsparse/posterior.hpp"
#include "ardsparse/rng.hpp"
#include "ardsparse/tensor.hpp"

namespace ardsparse {

enum class EvalMode { Stochastic, Deterministic };

enum class LayerKind : std::uint8_t { Dense = 0, Conv2d = 1, MaxPool = 2 };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  // Dense: in = fan-in, out = units. Conv2d: in = input channels, out = filters.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;  // conv kernel side, or pooling window
  ConvGeometry geometry{};

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in_channels, std::size_t filters, std::size_t kernel, ConvGeometry geo = {});
  static LayerSpec maxpool(std::size_t window);

  bool has_weights() const noexcept { return kind != LayerKind::MaxPool; }
  Shape weight_shape() const;
  std::size_t fan_in() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Layer {
  LayerSpec spec;
  GaussianPosterior weight;  // empty for pooling
  GaussianPosterior bias;    // shape [out]; empty for pooling

  friend bool operator==(const Layer&, const Layer&) = default;
};

// μ ~ N(0, 2/fan_in), log σ ~ N(-5, 0.1²). The bias posterior starts at
// μ = 0 with the same log σ distribution.
GaussianPosterior init_posterior(const LayerSpec& spec, Rng& rng);
GaussianPosterior init_bias_posterior(const LayerSpec& spec, Rng& rng);

inline constexpr double kInitLogSigmaMean = -5.0;
inline constexpr double kInitLogSigmaStd = 0.1;

// Local reparameterization: stochastic mode returns m + √v ⊙ ε with
// m = x·μ, v = (x⊙x)·(σ⊙σ) and ε ~ N(0,1) per output element;
// deterministic mode returns x·μ.
Tensor dense_forward(const Tensor& x, const GaussianPosterior& post, EvalMode mode, Rng& rng);
// Same construction with conv2d in place of matmul.
Tensor conv_forward(const Tensor& x, const GaussianPosterior& post, const ConvGeometry& geo, EvalMode mode, Rng& rng);

// Draws ε for layer `layer_index` with the given output shape.
using NoiseFn = std::function<Tensor(std::size_t layer_index, const Shape& shape)>;
// ε from rng.split(layer_index).
NoiseFn rng_noise(Rng rng);

struct PosteriorVars {
  Var mu;
  Var log_sigma;
};

struct ForwardOptions {
  EvalMode mode = EvalMode::Stochastic;
  NoiseFn noise;  // required in stochastic mode
  // Fixed dropout rate: σ² = α μ² replaces exp(2 log σ).
  std::optional<double> fixed_alpha;
  // When false, biases contribute their mean only.
  bool bayesian_bias = true;
};

// Tape-recorded local-reparameterization layer. `bias` may be null.
Var dense_forward(Var x, const PosteriorVars& w, const PosteriorVars* bias, const ForwardOptions& opts,
                  std::size_t layer_index);
Var conv_forward(Var x, const PosteriorVars& w, const PosteriorVars* bias, const ConvGeometry& geo,
                 const ForwardOptions& opts, std::size_t layer_index);

// Parses an architecture description. Either an MLP shorthand "784-300-100-10"
// (input width followed by layer widths) or a comma-separated list of
// "dense:N", "conv:F:K[:stride[:pad]]" and "pool:W" entries, where the input
// geometry comes from `input_shape` (per-example shape, e.g. {1, 28, 28}).
std::vector<LayerSpec> parse_architecture(std::string_view text, const Shape& input_shape);
std::string format_architecture(const std::vector<LayerSpec>& specs);

// Feed-forward Bayesian network: ReLU after every weighted layer except the
// last, inputs flattened automatically before the first dense layer.
class BayesNet {
 public:
  BayesNet() = default;
  BayesNet(std::vector<LayerSpec> specs, Rng& init_rng);
  explicit BayesNet(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::vector<LayerSpec> specs() const;

  struct Recorded {
    Var logits;
    // Indexed like layers(); pooling layers hold default Vars.
    std::vector<PosteriorVars> weights;
    std::vector<PosteriorVars> biases;
  };

  // Records the forward pass with every μ and log σ registered as a parameter.
  Recorded forward(Tape& tape, const Tensor& x, const ForwardOptions& opts) const;
  // Deterministic-mode logits (weights set to posterior means).
  Tensor predict(const Tensor& x) const;

  std::size_t weight_count() const;

  friend bool operator==(const BayesNet&, const BayesNet&) = default;

 private:
  std::vector<Layer> layers_;
};

// Binary checkpoint: 16-byte magic "ARDSPARSIFY\0\0\0\0\0", version byte,
// u32 layer count, then per layer (little-endian):
//   u8 kind, u8 has_bias, u32 stride, u32 padding, u32 rank, u64 dims[rank],
//   f64 mu[n], f64 log_sigma[n], and if has_bias f64 bias_mu[out], f64 bias_log_sigma[out].
// For pooling layers rank = 1, dims = {window} and no buffers follow.
inline constexpr std::uint8_t kCheckpointVersion = 1;
void write_checkpoint(std::ostream& out, const BayesNet& net);
BayesNet read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const BayesNet& net);
BayesNet load_checkpoint(const std::filesystem::path& path);

}  // namespace ardsparse
