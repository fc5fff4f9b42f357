#include "ardsparse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {
namespace {

// Sub-stream ids of the root generator.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

struct ParamRef {
  Tensor* value;
  Var var;
  std::string name;
};

std::vector<ParamRef> collect_params(BayesNet& net, const BayesNet::Recorded& rec) {
  std::vector<ParamRef> params;
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].spec.has_weights()) continue;
    const std::string prefix = "layer " + std::to_string(i);
    params.push_back({&layers[i].weight.mu, rec.weights[i].mu, prefix + " weight mu"});
    params.push_back({&layers[i].weight.log_sigma, rec.weights[i].log_sigma, prefix + " weight log_sigma"});
    params.push_back({&layers[i].bias.mu, rec.biases[i].mu, prefix + " bias mu"});
    params.push_back({&layers[i].bias.log_sigma, rec.biases[i].log_sigma, prefix + " bias log_sigma"});
  }
  return params;
}

void clip_in_place(Tensor& log_sigma, double cap) {
  for (double& v : log_sigma.data()) v = std::min(v, cap);
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ContractError("train: lr0 must be > 0");
  if (lr_decay_start_epoch < 0 || lr_decay_start_epoch > epochs) {
    throw ContractError("train: lr_decay_start_epoch must lie in [0, epochs]");
  }
  if (eval_every < 1) throw ContractError("train: eval_every must be >= 1");
  objective.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < cfg.lr_decay_start_epoch) return cfg.lr0;
  if (cfg.epochs == cfg.lr_decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs - cfg.lr_decay_start_epoch);
}

double anneal_at(int epoch, const TrainConfig& cfg) {
  const int span = cfg.objective.anneal_epochs;
  if (span <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(span));
}

void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, double lr,
               const std::string& context) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k]->shape() || params[k]->shape() != state.first_moment[k].shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
    for (double g : grads[k]->data()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(k) +
                           (context.empty() ? "" : " (" + context + ")"));
      }
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k]->data();
    auto m = state.first_moment[k].data();
    auto v = state.second_moment[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + state.eps);
    }
  }
}

GaussianPosterior clip_log_sigma(const GaussianPosterior& post, double cap) {
  GaussianPosterior out = post;
  clip_in_place(out.log_sigma, cap);
  return out;
}

double error_percent(const BayesNet& net, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw ContractError("error_percent: empty dataset");
  std::size_t wrong = 0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t stop = std::min(ds.size(), start + batch_size);
    indices.resize(stop - start);
    std::iota(indices.begin(), indices.end(), start);
    const Batch batch = gather(ds, indices);
    const auto predicted = argmax_rows(net.predict(batch.inputs));
    for (std::size_t k = 0; k < predicted.size(); ++k) wrong += predicted[k] != batch.labels[k] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.size());
}

double total_regularizer(const BayesNet& net, const ObjectiveSpec& spec, bool bayesian_bias) {
  double total = 0.0;
  for (const Layer& layer : net.layers()) {
    if (!layer.spec.has_weights()) continue;
    total += regularizer_value(spec, layer.weight);
    if (bayesian_bias) total += regularizer_value(spec, layer.bias);
  }
  return total;
}

MinibatchObjective minibatch_objective(Tape& tape, const BayesNet& net, const Batch& batch, std::size_t dataset_size,
                                       const TrainConfig& cfg, double anneal, const NoiseFn& noise) {
  ForwardOptions opts;
  opts.mode = EvalMode::Stochastic;
  opts.noise = noise;
  opts.bayesian_bias = cfg.bayesian_bias;
  if (cfg.objective.kind == ObjectiveKind::FixedAlphaDropout) opts.fixed_alpha = cfg.objective.alpha;

  MinibatchObjective out{Var{}, net.forward(tape, batch.inputs, opts), {}};
  const double n = static_cast<double>(dataset_size);
  Var nll = ad::scale(ad::softmax_cross_entropy(out.recorded.logits, batch.labels), n);

  Var reg = tape.constant(Tensor::scalar(0.0));
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].spec.has_weights()) continue;
    reg = ad::add(reg, regularizer(cfg.objective, out.recorded.weights[i].mu, out.recorded.weights[i].log_sigma));
    if (cfg.bayesian_bias) {
      reg = ad::add(reg, regularizer(cfg.objective, out.recorded.biases[i].mu, out.recorded.biases[i].log_sigma));
    }
  }
  const double weight = cfg.objective.reg_scale * anneal;
  out.loss = ad::sub(nll, ad::scale(reg, weight));
  out.values.data_term = -tape.value(nll).item();
  out.values.reg_term = tape.value(reg).item();
  out.values.loss = -elbo_value(out.values.data_term, out.values.reg_term, cfg.objective, anneal);
  return out;
}

BayesNet init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  Rng init = Rng(seed).split(kInitStream);
  return BayesNet(specs, init);
}

TrainResult train(BayesNet net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw ContractError("train: empty dataset");
  train_set.validate();

  const Rng root(cfg.seed);
  Rng shuffle = root.split(kShuffleStream);
  const Rng noise_root = root.split(kNoiseStream);

  TrainResult result;
  AdamState adam;
  std::uint64_t step = 0;
  BayesNet last_good = net;

  const auto checkpoint = [&](const BayesNet& snapshot) {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, snapshot);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr_at(epoch, cfg);
    metrics.anneal_factor = anneal_at(epoch, cfg);
    last_good = net;

    const auto batches = minibatches(train_set.size(), cfg.batch_size, shuffle);
    try {
      for (const auto& indices : batches) {
        const Batch batch = gather(train_set, indices);
        Tape tape;
        const NoiseFn noise = rng_noise(noise_root.split(step));
        MinibatchObjective obj =
            minibatch_objective(tape, net, batch, train_set.size(), cfg, metrics.anneal_factor, noise);
        const Gradients grads = tape.backward(obj.loss);

        std::vector<ParamRef> params = collect_params(net, obj.recorded);
        std::vector<Tensor*> values;
        std::vector<const Tensor*> grad_ptrs;
        for (const ParamRef& p : params) {
          values.push_back(p.value);
          grad_ptrs.push_back(&grads[p.var]);
        }
        std::ostringstream context;
        context << "epoch " << epoch << ", step " << step;
        for (std::size_t k = 0; k < params.size(); ++k) {
          for (double g : grad_ptrs[k]->data()) {
            if (!std::isfinite(g)) {
              throw NumericError("non-finite gradient in " + params[k].name + " at " + context.str());
            }
          }
        }
        adam_step(values, grad_ptrs, adam, metrics.lr, context.str());
        if (cfg.log_sigma_clip) {
          for (Layer& layer : net.layers()) {
            if (!layer.spec.has_weights()) continue;
            clip_in_place(layer.weight.log_sigma, *cfg.log_sigma_clip);
            clip_in_place(layer.bias.log_sigma, *cfg.log_sigma_clip);
          }
        }
        metrics.train_loss += obj.values.loss;
        metrics.data_term += obj.values.data_term;
        metrics.reg_term += obj.values.reg_term;
        ++step;
      }
    } catch (const NumericError&) {
      checkpoint(last_good);
      throw;
    }
    const double count = static_cast<double>(batches.size());
    metrics.train_loss /= count;
    metrics.data_term /= count;
    metrics.reg_term /= count;

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.eval_every == 0 || last_epoch) {
      if (test_set) metrics.test_error = error_percent(net, *test_set);
      const SparsityReport report = sparsity_report(net, cfg.sparsify);
      metrics.compression = report.compression;
      checkpoint(net);
    }
    if (cfg.on_epoch) cfg.on_epoch(metrics);
    result.history.push_back(metrics);
  }
  result.net = std::move(net);
  return result;
}

SparsityReport final_report(const BayesNet& net, const Dataset* test_set, const SparsifyOptions& opts,
                            std::size_t probe_size) {
  SparsityReport report = sparsity_report(net, opts);
  if (test_set && test_set->size() > 0) {
    report.test_error_percent = error_percent(trim_network(net, opts), *test_set);
    report.max_logit_perturbation = max_logit_perturbation(net, take(*test_set, probe_size).images, opts);
  }
  return report;
}

void write_metrics_header(std::ostream& out) {
  out << "epoch,train_loss,data_term,reg_term,lr,anneal_factor,test_error,compression\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& row) {
  out << row.epoch << ',' << fmt(row.train_loss) << ',' << fmt(row.data_term) << ',' << fmt(row.reg_term) << ','
      << fmt(row.lr) << ',' << fmt(row.anneal_factor) << ',' << (row.test_error ? fmt(*row.test_error) : "") << ','
      << (row.compression ? fmt(*row.compression) : "") << '\n';
}

void write_metrics_summary(std::ostream& out, const SparsityReport& report) {
  out << "final,,,,,," << (report.test_error_percent ? fmt(*report.test_error_percent) : "") << ','
      << (report.compression ? fmt(*report.compression) : "") << '\n';
}

}  // namespace ardsparse
