#include "ardsparse/sparsify.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "ardsparse/errors.hpp"

namespace ardsparse {

Tensor deterministic_weights(const GaussianPosterior& post) { return post.mu; }

TrimResult trim(const Tensor& weights, double threshold) {
  if (!(threshold >= 0.0)) throw ContractError("trim: threshold must be >= 0");
  TrimResult result{weights, std::vector<bool>(weights.size()), 0};
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const bool keep = !(std::abs(weights[i]) < threshold);
    result.mask[i] = keep;
    if (keep) {
      result.nonzero += weights[i] != 0.0 ? 1 : 0;
    } else {
      result.weights[i] = 0.0;
    }
  }
  return result;
}

double compression(std::size_t total, std::size_t nonzero) {
  if (nonzero == 0) throw DegenerateNetworkError("compression: every weight was trimmed");
  if (nonzero > total) throw ContractError("compression: nonzero exceeds total");
  return static_cast<double>(total) / static_cast<double>(nonzero);
}

namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool: return "maxpool";
  }
  return "?";
}

}  // namespace

SparsityReport sparsity_report(const BayesNet& net, const SparsifyOptions& opts) {
  SparsityReport report;
  report.threshold = opts.threshold;
  report.include_bias = opts.include_bias;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].spec.has_weights()) continue;
    LayerSparsity entry{i, kind_name(layers[i].spec.kind), 0, 0};
    const TrimResult w = trim(deterministic_weights(layers[i].weight), opts.threshold);
    entry.total = w.weights.size();
    entry.nonzero = w.nonzero;
    if (opts.include_bias) {
      const TrimResult b = trim(deterministic_weights(layers[i].bias), opts.threshold);
      entry.total += b.weights.size();
      entry.nonzero += b.nonzero;
    }
    report.total += entry.total;
    report.nonzero += entry.nonzero;
    report.layers.push_back(entry);
  }
  if (report.nonzero > 0) report.compression = compression(report.total, report.nonzero);
  return report;
}

BayesNet trim_network(const BayesNet& net, const SparsifyOptions& opts) {
  BayesNet out = net;
  for (Layer& layer : out.layers()) {
    if (!layer.spec.has_weights()) continue;
    layer.weight.mu = trim(layer.weight.mu, opts.threshold).weights;
    if (opts.include_bias) layer.bias.mu = trim(layer.bias.mu, opts.threshold).weights;
  }
  return out;
}

double max_logit_perturbation(const BayesNet& net, const Tensor& batch, const SparsifyOptions& opts) {
  const Tensor before = net.predict(batch);
  const Tensor after = trim_network(net, opts).predict(batch);
  double worst = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) worst = std::max(worst, std::abs(before[i] - after[i]));
  return worst;
}

std::string SparsityReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["threshold"] = threshold;
  doc["include_bias"] = include_bias;
  doc["total"] = total;
  doc["nonzero"] = nonzero;
  doc["compression"] = compression ? nlohmann::ordered_json(*compression) : nlohmann::ordered_json(nullptr);
  doc["degenerate"] = nonzero == 0;
  doc["test_error_percent"] =
      test_error_percent ? nlohmann::ordered_json(*test_error_percent) : nlohmann::ordered_json(nullptr);
  doc["max_logit_perturbation"] =
      max_logit_perturbation ? nlohmann::ordered_json(*max_logit_perturbation) : nlohmann::ordered_json(nullptr);
  auto& arr = doc["layers"] = nlohmann::ordered_json::array();
  for (const LayerSparsity& l : layers) {
    arr.push_back({{"layer", l.layer}, {"kind", l.kind}, {"total", l.total}, {"nonzero", l.nonzero}});
  }
  return doc.dump(2);
}

}  // namespace ardsparse
