#include "ardsparse/bayes_nn.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

GaussianPosterior::GaussianPosterior(Tensor mu_, Tensor log_sigma_) : mu(std::move(mu_)), log_sigma(std::move(log_sigma_)) {
  if (mu.shape() != log_sigma.shape()) {
    throw DimensionError("GaussianPosterior: mu " + shape_str(mu.shape()) + " vs log_sigma " +
                         shape_str(log_sigma.shape()));
  }
}

Tensor GaussianPosterior::sigma() const { return exp(log_sigma); }

Tensor alpha_of(const GaussianPosterior& post) {
  Tensor alpha(post.shape());
  for (std::size_t i = 0; i < post.size(); ++i) {
    const double mu = post.mu[i];
    if (std::abs(mu) < kMuFloor) {
      alpha[i] = kAlphaMax;
      continue;
    }
    // Evaluated in log space: σ²/μ² can overflow for tiny μ.
    const double log_alpha = 2.0 * post.log_sigma[i] - 2.0 * std::log(std::abs(mu));
    alpha[i] = log_alpha >= kLogAlphaMax ? kAlphaMax : (log_alpha <= kLogAlphaMin ? kAlphaMin : std::exp(log_alpha));
  }
  return alpha;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw ContractError("dense layer needs positive sizes");
  return LayerSpec{LayerKind::Dense, in, out, 0, {}};
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t filters, std::size_t kernel, ConvGeometry geo) {
  if (in_channels == 0 || filters == 0 || kernel == 0 || geo.stride == 0) {
    throw ContractError("conv layer needs positive channels, filters, kernel and stride");
  }
  return LayerSpec{LayerKind::Conv2d, in_channels, filters, kernel, geo};
}

LayerSpec LayerSpec::maxpool(std::size_t window) {
  if (window == 0) throw ContractError("pool window must be positive");
  return LayerSpec{LayerKind::MaxPool, 0, 0, window, {}};
}

Shape LayerSpec::weight_shape() const {
  switch (kind) {
    case LayerKind::Dense: return {in, out};
    case LayerKind::Conv2d: return {out, in, kernel, kernel};
    case LayerKind::MaxPool: return {};
  }
  return {};
}

std::size_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::Dense: return in;
    case LayerKind::Conv2d: return in * kernel * kernel;
    case LayerKind::MaxPool: return 0;
  }
  return 0;
}

GaussianPosterior init_posterior(const LayerSpec& spec, Rng& rng) {
  if (!spec.has_weights()) throw ContractError("init_posterior: layer has no weights");
  const Shape shape = spec.weight_shape();
  const double mu_std = std::sqrt(2.0 / static_cast<double>(spec.fan_in()));
  Tensor mu(shape), log_sigma(shape);
  for (double& v : mu.data()) v = mu_std * rng.normal();
  for (double& v : log_sigma.data()) v = kInitLogSigmaMean + kInitLogSigmaStd * rng.normal();
  return {std::move(mu), std::move(log_sigma)};
}

GaussianPosterior init_bias_posterior(const LayerSpec& spec, Rng& rng) {
  if (!spec.has_weights()) throw ContractError("init_bias_posterior: layer has no weights");
  Tensor log_sigma({spec.out});
  for (double& v : log_sigma.data()) v = kInitLogSigmaMean + kInitLogSigmaStd * rng.normal();
  return {Tensor({spec.out}), std::move(log_sigma)};
}

namespace {

Tensor reparameterize(const Tensor& mean, const Tensor& variance, Rng& rng) {
  const Tensor eps = sample_standard_normal(rng, mean.shape());
  Tensor out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + std::sqrt(variance[i]) * eps[i];
  ensure_finite(out, "local reparameterization");
  return out;
}

Tensor variance_of(const GaussianPosterior& post) { return exp(scale(post.log_sigma, 2.0)); }

Var variance_var(const PosteriorVars& p, const ForwardOptions& opts) {
  if (opts.fixed_alpha) return ad::scale(ad::square(p.mu), *opts.fixed_alpha);
  return ad::exp(ad::scale(p.log_sigma, 2.0));
}

template <typename Linear>
Var reparameterized_layer(Var x, const PosteriorVars& w, const PosteriorVars* bias, const ForwardOptions& opts,
                          std::size_t layer_index, Linear&& linear) {
  Var mean = linear(x, w.mu);
  if (bias) mean = ad::add_channel_bias(mean, bias->mu);
  if (opts.mode == EvalMode::Deterministic) return mean;
  if (!opts.noise) throw ContractError("stochastic forward requires a noise source");
  Var var = linear(ad::square(x), variance_var(w, opts));
  if (bias && opts.bayesian_bias) var = ad::add_channel_bias(var, variance_var(*bias, opts));
  Tape& tape = *x.tape;
  const Shape out_shape = tape.value(mean).shape();
  Tensor eps = opts.noise(layer_index, out_shape);
  if (eps.shape() != out_shape) throw DimensionError("noise source returned shape " + shape_str(eps.shape()));
  return ad::add(mean, ad::mul(ad::sqrt(var), tape.constant(std::move(eps))));
}

}  // namespace

Tensor dense_forward(const Tensor& x, const GaussianPosterior& post, EvalMode mode, Rng& rng) {
  Tensor mean = matmul(x, post.mu);
  if (mode == EvalMode::Deterministic) return mean;
  return reparameterize(mean, matmul(square(x), variance_of(post)), rng);
}

Tensor conv_forward(const Tensor& x, const GaussianPosterior& post, const ConvGeometry& geo, EvalMode mode, Rng& rng) {
  Tensor mean = conv2d(x, post.mu, geo);
  if (mode == EvalMode::Deterministic) return mean;
  return reparameterize(mean, conv2d(square(x), variance_of(post), geo), rng);
}

NoiseFn rng_noise(Rng rng) {
  return [rng](std::size_t layer_index, const Shape& shape) {
    Rng stream = rng.split(layer_index);
    return sample_standard_normal(stream, shape);
  };
}

Var dense_forward(Var x, const PosteriorVars& w, const PosteriorVars* bias, const ForwardOptions& opts,
                  std::size_t layer_index) {
  return reparameterized_layer(x, w, bias, opts, layer_index, [](Var in, Var k) { return ad::matmul(in, k); });
}

Var conv_forward(Var x, const PosteriorVars& w, const PosteriorVars* bias, const ConvGeometry& geo,
                 const ForwardOptions& opts, std::size_t layer_index) {
  return reparameterized_layer(x, w, bias, opts, layer_index,
                               [geo](Var in, Var k) { return ad::conv2d(in, k, geo); });
}

// ---- architecture ----------------------------------------------------------

namespace {

std::size_t parse_size(std::string_view text, std::string_view context) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw ContractError("architecture: bad number '" + std::string(text) + "' in '" + std::string(context) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

std::vector<LayerSpec> parse_architecture(std::string_view text, const Shape& input_shape) {
  std::vector<LayerSpec> specs;
  if (text.find(':') == std::string_view::npos) {
    const auto widths = split(text, '-');
    if (widths.size() < 2) throw ContractError("architecture: MLP form needs at least two widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      specs.push_back(LayerSpec::dense(parse_size(widths[i], text), parse_size(widths[i + 1], text)));
    }
    if (!input_shape.empty() && shape_size(input_shape) != specs.front().in) {
      throw ContractError("architecture: input width " + std::to_string(specs.front().in) +
                          " does not match data shape " + shape_str(input_shape));
    }
    return specs;
  }

  // Track the per-example activation shape to infer fan-in.
  Shape current = input_shape;
  for (std::string_view entry : split(text, ',')) {
    const auto fields = split(entry, ':');
    const std::string_view kind = fields.front();
    if (kind == "dense" && fields.size() == 2) {
      const std::size_t in = shape_size(current);
      specs.push_back(LayerSpec::dense(in, parse_size(fields[1], entry)));
      current = {specs.back().out};
    } else if (kind == "conv" && fields.size() >= 3 && fields.size() <= 5) {
      if (current.size() != 3) throw ContractError("architecture: conv needs a C×H×W input, have " + shape_str(current));
      ConvGeometry geo;
      if (fields.size() >= 4) geo.stride = parse_size(fields[3], entry);
      if (fields.size() == 5) {
        geo.padding = fields[4] == "0" ? 0 : parse_size(fields[4], entry);
      }
      const LayerSpec spec = LayerSpec::conv(current[0], parse_size(fields[1], entry), parse_size(fields[2], entry), geo);
      current = {spec.out, conv_output_size(current[1], spec.kernel, geo), conv_output_size(current[2], spec.kernel, geo)};
      specs.push_back(spec);
    } else if (kind == "pool" && fields.size() == 2) {
      if (current.size() != 3) throw ContractError("architecture: pool needs a C×H×W input");
      const std::size_t window = parse_size(fields[1], entry);
      if (current[1] % window != 0 || current[2] % window != 0) {
        throw ContractError("architecture: pool window does not tile " + shape_str(current));
      }
      specs.push_back(LayerSpec::maxpool(window));
      current = {current[0], current[1] / window, current[2] / window};
    } else {
      throw ContractError("architecture: cannot parse entry '" + std::string(entry) + "'");
    }
  }
  if (specs.empty() || !specs.back().has_weights()) throw ContractError("architecture: must end with a weighted layer");
  return specs;
}

std::string format_architecture(const std::vector<LayerSpec>& specs) {
  const bool mlp = std::all_of(specs.begin(), specs.end(), [](const LayerSpec& s) { return s.kind == LayerKind::Dense; });
  std::ostringstream out;
  if (mlp && !specs.empty()) {
    out << specs.front().in;
    for (const auto& s : specs) out << '-' << s.out;
    return out.str();
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    if (i) out << ',';
    switch (s.kind) {
      case LayerKind::Dense: out << "dense:" << s.out; break;
      case LayerKind::Conv2d:
        out << "conv:" << s.out << ':' << s.kernel << ':' << s.geometry.stride << ':' << s.geometry.padding;
        break;
      case LayerKind::MaxPool: out << "pool:" << s.kernel; break;
    }
  }
  return out.str();
}

// ---- network ----------------------------------------------------------------

BayesNet::BayesNet(std::vector<LayerSpec> specs, Rng& init_rng) {
  layers_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer{specs[i], {}, {}};
    if (layer.spec.has_weights()) {
      Rng stream = init_rng.split(i);
      layer.weight = init_posterior(layer.spec, stream);
      layer.bias = init_bias_posterior(layer.spec, stream);
    }
    layers_.push_back(std::move(layer));
  }
}

BayesNet::BayesNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (const Layer& layer : layers_) {
    if (!layer.spec.has_weights()) continue;
    if (layer.weight.shape() != layer.spec.weight_shape() || layer.bias.shape() != Shape{layer.spec.out}) {
      throw DimensionError("BayesNet: posterior shapes do not match layer geometry");
    }
  }
}

std::vector<LayerSpec> BayesNet::specs() const {
  std::vector<LayerSpec> out;
  for (const Layer& layer : layers_) out.push_back(layer.spec);
  return out;
}

std::size_t BayesNet::weight_count() const {
  std::size_t total = 0;
  for (const Layer& layer : layers_) total += layer.weight.size();
  return total;
}

namespace {

std::size_t last_weighted(const std::vector<Layer>& layers) {
  std::size_t last = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].spec.has_weights()) last = i;
  }
  return last;
}

}  // namespace

BayesNet::Recorded BayesNet::forward(Tape& tape, const Tensor& x, const ForwardOptions& opts) const {
  Recorded rec;
  rec.weights.resize(layers_.size());
  rec.biases.resize(layers_.size());
  const std::size_t last = last_weighted(layers_);
  Var h = tape.constant(x);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (layer.spec.kind == LayerKind::MaxPool) {
      h = ad::maxpool2d(h, layer.spec.kernel);
      continue;
    }
    PosteriorVars w{tape.parameter(layer.weight.mu), tape.parameter(layer.weight.log_sigma)};
    PosteriorVars b{tape.parameter(layer.bias.mu), tape.parameter(layer.bias.log_sigma)};
    rec.weights[i] = w;
    rec.biases[i] = b;
    if (layer.spec.kind == LayerKind::Dense) {
      const Shape& shape = tape.value(h).shape();
      if (shape.size() != 2) h = ad::reshape(h, {shape[0], shape_size(shape) / shape[0]});
      h = dense_forward(h, w, &b, opts, i);
    } else {
      h = conv_forward(h, w, &b, layer.spec.geometry, opts, i);
    }
    if (i != last) h = ad::relu(h);
  }
  rec.logits = h;
  return rec;
}

Tensor BayesNet::predict(const Tensor& x) const {
  const std::size_t last = last_weighted(layers_);
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    switch (layer.spec.kind) {
      case LayerKind::MaxPool: h = maxpool2d(h, layer.spec.kernel); continue;
      case LayerKind::Dense:
        if (h.rank() != 2) h = h.reshaped({h.dim(0), h.size() / h.dim(0)});
        h = add_channel_bias(matmul(h, layer.weight.mu), layer.bias.mu);
        break;
      case LayerKind::Conv2d:
        h = add_channel_bias(conv2d(h, layer.weight.mu, layer.spec.geometry), layer.bias.mu);
        break;
    }
    if (i != last) h = relu(h);
  }
  return h;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[16] = {'A', 'R', 'D', 'S', 'P', 'A', 'R', 'S', 'I', 'F', 'Y', 0, 0, 0, 0, 0};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_values(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    T value{};
    read(reinterpret_cast<char*>(&value), sizeof(T), what);
    return value;
  }

  Tensor tensor(const Shape& shape, const char* what) {
    Tensor t(shape);
    read(reinterpret_cast<char*>(t.data().data()), t.size() * sizeof(double), what);
    return t;
  }

  void read(char* dst, std::size_t bytes, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes) {
      throw FormatError("checkpoint: truncated while reading " + std::string(what) + " at offset " +
                        std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())));
    }
    offset_ += bytes;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const BayesNet& net) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint8_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const Layer& layer : net.layers()) {
    const LayerSpec& s = layer.spec;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.kind));
    put<std::uint8_t>(out, s.has_weights() ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.geometry.stride));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.geometry.padding));
    const Shape shape = s.has_weights() ? s.weight_shape() : Shape{s.kernel};
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(out, d);
    if (!s.has_weights()) continue;
    put_values(out, layer.weight.mu);
    put_values(out, layer.weight.log_sigma);
    put_values(out, layer.bias.mu);
    put_values(out, layer.bias.log_sigma);
  }
  if (!out) throw Error("checkpoint: write failed");
}

BayesNet read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[16];
  r.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("checkpoint: bad magic at offset 0");
  const auto version = r.get<std::uint8_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 16");
  }
  const auto count = r.get<std::uint32_t>("layer count");
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    const auto kind = r.get<std::uint8_t>("layer kind");
    const auto has_bias = r.get<std::uint8_t>("bias flag");
    ConvGeometry geo{r.get<std::uint32_t>("stride"), r.get<std::uint32_t>("padding")};
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 4) throw FormatError("checkpoint: rank " + std::to_string(rank) + " at offset " + std::to_string(record_offset));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("dims");
    // Guard against absurd sizes before allocating.
    for (std::size_t d : shape) {
      if (d == 0 || d > (std::size_t{1} << 32)) {
        throw FormatError("checkpoint: bad dimension in layer record at offset " + std::to_string(record_offset));
      }
    }
    LayerSpec spec;
    try {
      if (kind == static_cast<std::uint8_t>(LayerKind::Dense) && rank == 2 && has_bias == 1) {
        spec = LayerSpec::dense(shape[0], shape[1]);
      } else if (kind == static_cast<std::uint8_t>(LayerKind::Conv2d) && rank == 4 && has_bias == 1 && shape[2] == shape[3]) {
        spec = LayerSpec::conv(shape[1], shape[0], shape[2], geo);
      } else if (kind == static_cast<std::uint8_t>(LayerKind::MaxPool) && rank == 1 && has_bias == 0) {
        spec = LayerSpec::maxpool(shape[0]);
      } else {
        throw FormatError("");
      }
    } catch (const Error&) {
      throw FormatError("checkpoint: invalid layer record at offset " + std::to_string(record_offset));
    }
    Layer layer{spec, {}, {}};
    if (spec.has_weights()) {
      Tensor mu = r.tensor(shape, "mu");
      Tensor log_sigma = r.tensor(shape, "log_sigma");
      Tensor bias_mu = r.tensor({spec.out}, "bias mu");
      Tensor bias_log_sigma = r.tensor({spec.out}, "bias log_sigma");
      layer.weight = {std::move(mu), std::move(log_sigma)};
      layer.bias = {std::move(bias_mu), std::move(bias_log_sigma)};
      for (const Tensor* t : {&layer.weight.mu, &layer.weight.log_sigma, &layer.bias.mu, &layer.bias.log_sigma}) {
        for (double v : t->data()) {
          if (!std::isfinite(v)) {
            throw FormatError("checkpoint: non-finite parameter in layer record at offset " + std::to_string(record_offset));
          }
        }
      }
    }
    layers.push_back(std::move(layer));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  }
  return BayesNet(std::move(layers));
}

void save_checkpoint(const std::filesystem::path& path, const BayesNet& net) {
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open " + tmp.string());
    write_checkpoint(out, net);
  }
  std::filesystem::rename(tmp, path);
}

BayesNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace ardsparse
