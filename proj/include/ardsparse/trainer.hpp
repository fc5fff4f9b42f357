#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ardsparse/bayes_nn.hpp"
#include "ardsparse/data_io.hpp"
#include "ardsparse/objectives.hpp"
#include "ardsparse/sparsify.hpp"

namespace ardsparse {

// Default log σ cap for the Gamma hyperprior objective.
inline constexpr double kGammaLogSigmaClip = -4.0;

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double data_term = 0.0;
  double reg_term = 0.0;
  double lr = 0.0;
  double anneal_factor = 0.0;
  std::optional<double> test_error;
  std::optional<double> compression;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 100;
  double lr0 = 1e-3;
  int lr_decay_start_epoch = 15;
  std::optional<double> log_sigma_clip;
  std::uint64_t seed = 1;
  ObjectiveSpec objective{};
  int eval_every = 1;
  bool bayesian_bias = true;
  SparsifyOptions sparsify{};
  // Checkpoint target; empty disables checkpointing.
  std::filesystem::path checkpoint_path;
  // Called after every epoch with that epoch's metrics.
  std::function<void(const EpochMetrics&)> on_epoch;

  void validate() const;
};

// lr0 before the decay start, then linear decay reaching 0 at `epochs`.
double lr_at(int epoch, const TrainConfig& cfg);
// min(1, epoch / anneal_epochs); 1 when anneal_epochs == 0.
double anneal_at(int epoch, const TrainConfig& cfg);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam descent step over every parameter tensor.
// Throws NumericError naming `context` and the parameter index on NaN/Inf grads.
void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, double lr,
               const std::string& context = {});

// Elementwise min(log σ, cap).
GaussianPosterior clip_log_sigma(const GaussianPosterior& post, double cap);

// Error rate in percent of the deterministic-mode network.
double error_percent(const BayesNet& net, const Dataset& ds, std::size_t batch_size = 1000);

// Sum of `spec`'s regularizer over every posterior the objective covers.
double total_regularizer(const BayesNet& net, const ObjectiveSpec& spec, bool bayesian_bias);

struct StepValues {
  double loss = 0.0;        // negative scaled/annealed ELBO estimate
  double data_term = 0.0;   // -N · mean cross-entropy
  double reg_term = 0.0;    // unscaled regularizer
};

// Records one minibatch objective on `tape`, returning the loss var (to be
// minimized) and the parameter handles. `dataset_size` scales the data term.
struct MinibatchObjective {
  Var loss;
  BayesNet::Recorded recorded;
  StepValues values;
};
MinibatchObjective minibatch_objective(Tape& tape, const BayesNet& net, const Batch& batch, std::size_t dataset_size,
                                       const TrainConfig& cfg, double anneal, const NoiseFn& noise);


struct TrainResult {
  BayesNet net;
  std::vector<EpochMetrics> history;
};

// Network with the initialization stream of `seed`; identical across objectives.
BayesNet init_network(const std::vector<LayerSpec>& specs, std::uint64_t seed);

// Noise and shuffling come from independent sub-streams of cfg.seed.
TrainResult train(BayesNet net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg);

// Sparsity report of the trimmed network with its test error and the logit
// perturbation trimming causes on the first `probe_size` test examples.
SparsityReport final_report(const BayesNet& net, const Dataset* test_set, const SparsifyOptions& opts,
                            std::size_t probe_size = 1000);

// "epoch,train_loss,data_term,reg_term,lr,anneal_factor,test_error,compression"
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& row);
// Final row tagged "final" carrying the report's error and compression.
void write_metrics_summary(std::ostream& out, const SparsityReport& report);

}  // namespace ardsparse
