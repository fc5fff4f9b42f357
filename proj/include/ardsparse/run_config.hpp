#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ardsparse/trainer.hpp"

namespace ardsparse {

enum class Command { Train, Eval, Prune, Verify, Sweep };

std::string_view command_name(Command cmd);
Command parse_command(std::string_view name);

// log σ cap as written in a config: "auto" (Gamma objective gets -4, others
// none), "none", or a number.
struct ClipSetting {
  enum class Mode { Auto, None, Value } mode = Mode::Auto;
  double value = 0.0;

  std::optional<double> resolve(ObjectiveKind kind) const;
  friend bool operator==(const ClipSetting&, const ClipSetting&) = default;
};

struct RunConfig {
  Command command = Command::Train;
  std::string architecture = "784-300-100-10";

  // Objective
  ObjectiveKind objective = ObjectiveKind::ArdDropout;
  double alpha = 1.0;
  double a = 1.0;
  double b = 1e-8;
  double reg_scale = 1.0;
  int anneal_epochs = 0;

  // Optimization
  int epochs = 30;
  std::size_t batch_size = 100;
  double lr0 = 1e-3;
  int lr_decay_start_epoch = 15;
  ClipSetting log_sigma_clip{};
  std::uint64_t seed = 1;
  int eval_every = 1;
  bool bayesian_bias = true;

  // Sparsification
  double trim_threshold = kDefaultTrimThreshold;
  bool include_bias = false;

  // Data: directory with the four standard MNIST IDX files. Limits of 0 use
  // every example.
  std::filesystem::path data_dir;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;

  // Outputs (empty disables)
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::filesystem::path report;

  std::vector<double> sweep_a;

  TrainConfig train_config() const;
  ObjectiveSpec objective_spec() const;
  SparsifyOptions sparsify_options() const;
  // Throws ContractError on any out-of-domain field.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Every key the text format accepts, in canonical order.
const std::vector<std::string>& config_keys();

// Applies one `key = value` assignment. Throws ContractError on unknown keys
// or unparsable values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

// "key = value" lines; blank lines and text after '#' are ignored.
RunConfig parse_config_text(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// One "key = value" line per key in config_keys() order; doubles use 17
// significant digits so parsing the text reproduces the config exactly.
std::string canonical_text(const RunConfig& cfg);

}  // namespace ardsparse
