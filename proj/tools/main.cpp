#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "ardsparse/errors.hpp"
#include "ardsparse/run_config.hpp"
#include "ardsparse/trainer.hpp"
#include "ardsparse/verify.hpp"

namespace ardsparse {
namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kVerifyFailed = 4 };

// Options shared by every subcommand: a config file, generic overrides and one
// flag per config key.
struct Overrides {
  std::string config_path;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> flag_options;
};

std::string flag_name(const std::string& key) {
  std::string name = key;
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

void add_config_options(CLI::App& sub, Overrides& ov) {
  sub.add_option("-c,--config", ov.config_path, "key = value configuration file");
  sub.add_option("--set", ov.assignments, "override a config key (key=value); repeatable");
  for (const std::string& key : config_keys()) {
    if (key == "command") continue;
    ov.flag_options[key] = sub.add_option(flag_name(key), ov.flags[key], "config key '" + key + "'")
                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

RunConfig resolve_config(Command command, const Overrides& ov) {
  RunConfig cfg;
  if (!ov.config_path.empty()) cfg = load_config(ov.config_path, cfg);
  for (const std::string& assignment : ov.assignments) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + assignment + "'");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  for (const auto& [key, option] : ov.flag_options) {
    if (option->count() > 0) set_config_value(cfg, key, ov.flags.at(key));
  }
  cfg.command = command;
  return cfg;
}

void require_data_dir(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ContractError("data_dir is required (set --data-dir)");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void log_epoch(const EpochMetrics& m) {
  std::cerr << "epoch " << m.epoch << "  loss " << std::setprecision(6) << m.train_loss << "  lr " << m.lr
            << "  anneal " << m.anneal_factor;
  if (m.test_error) std::cerr << "  test_error " << *m.test_error << '%';
  if (m.compression) std::cerr << "  compression " << *m.compression;
  std::cerr << '\n';
}

struct Trained {
  TrainResult result;
  SparsityReport report;
};

Trained train_and_report(const RunConfig& cfg, const Dataset& train_set, const Dataset& test_set) {
  const std::vector<LayerSpec> specs = parse_architecture(cfg.architecture, train_set.example_shape());
  TrainConfig tc = cfg.train_config();
  tc.on_epoch = log_epoch;
  Trained out{train(init_network(specs, cfg.seed), train_set, &test_set, tc), {}};
  out.report = final_report(out.result.net, &test_set, cfg.sparsify_options());
  return out;
}

int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  require_data_dir(cfg);
  const Dataset train_set = load_mnist(cfg.data_dir, true, cfg.train_limit);
  const Dataset test_set = load_mnist(cfg.data_dir, false, cfg.test_limit);
  const Trained trained = train_and_report(cfg, train_set, test_set);

  if (!cfg.metrics.empty()) {
    std::ostringstream csv;
    write_metrics_header(csv);
    for (const EpochMetrics& row : trained.result.history) write_metrics_row(csv, row);
    write_metrics_summary(csv, trained.report);
    write_text(cfg.metrics, csv.str());
  }
  const std::string json = trained.report.to_json();
  if (!cfg.report.empty()) write_text(cfg.report, json + '\n');
  std::cout << json << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ContractError("eval needs --checkpoint");
  require_data_dir(cfg);
  const BayesNet net = load_checkpoint(cfg.checkpoint);
  const Dataset test_set = load_mnist(cfg.data_dir, false, cfg.test_limit);
  std::cout << "test_error_percent " << std::setprecision(6) << error_percent(net, test_set) << '\n';
  return kOk;
}

int cmd_prune(const RunConfig& cfg, const std::string& pruned_out) {
  if (cfg.checkpoint.empty()) throw ContractError("prune needs --checkpoint");
  const BayesNet net = load_checkpoint(cfg.checkpoint);
  std::optional<Dataset> test_set;
  if (!cfg.data_dir.empty()) test_set = load_mnist(cfg.data_dir, false, cfg.test_limit);
  const SparsityReport report = final_report(net, test_set ? &*test_set : nullptr, cfg.sparsify_options());
  if (!pruned_out.empty()) save_checkpoint(pruned_out, trim_network(net, cfg.sparsify_options()));
  const std::string json = report.to_json();
  if (!cfg.report.empty()) write_text(cfg.report, json + '\n');
  std::cout << json << '\n';
  return kOk;
}

int cmd_verify(double k1_perturbation) {
  VerifyOptions opts;
  opts.svdo.k1 += k1_perturbation;
  const std::vector<CheckResult> results = run_verification(opts);
  print_verification_table(std::cout, results);
  if (all_passed(results)) return kOk;
  for (const CheckResult& r : results) {
    if (!r.passed) std::cerr << "failed: " << r.name << " (observed " << r.observed << ")\n";
  }
  return kVerifyFailed;
}

int cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  require_data_dir(cfg);
  const Dataset train_set = load_mnist(cfg.data_dir, true, cfg.train_limit);
  const Dataset test_set = load_mnist(cfg.data_dir, false, cfg.test_limit);
  std::ostringstream table;
  table << "a,error_percent,compression\n";
  for (double a : cfg.sweep_a) {
    RunConfig run = cfg;
    run.a = a;
    run.checkpoint.clear();
    std::cerr << "sweep: a = " << a << '\n';
    const Trained trained = train_and_report(run, train_set, test_set);
    table << std::setprecision(17) << a << ',' << trained.report.test_error_percent.value_or(0.0) << ',';
    if (trained.report.compression) table << *trained.report.compression;
    table << '\n';
  }
  if (!cfg.metrics.empty()) write_text(cfg.metrics, table.str());
  std::cout << table.str();
  return kOk;
}

}  // namespace
}  // namespace ardsparse

int main(int argc, char** argv) {
  using namespace ardsparse;
  CLI::App app{"Variational sparsification of Bayesian neural networks"};
  app.require_subcommand(1);

  Overrides train_ov, eval_ov, prune_ov, sweep_ov;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network and write checkpoint, metrics and report");
  add_config_options(*train_cmd, train_ov);
  CLI::App* eval_cmd = app.add_subcommand("eval", "deterministic-mode test error of a checkpoint");
  add_config_options(*eval_cmd, eval_ov);
  CLI::App* prune_cmd = app.add_subcommand("prune", "trim a checkpoint and print its sparsity report");
  add_config_options(*prune_cmd, prune_ov);
  std::string pruned_out;
  prune_cmd->add_option("--pruned-out", pruned_out, "write the trimmed network here");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train once per value of the Gamma shape a");
  add_config_options(*sweep_cmd, sweep_ov);
  CLI::App* verify_cmd = app.add_subcommand("verify", "check every analytic identity of the objectives");
  double k1_perturbation = 0.0;
  verify_cmd->add_option("--perturb-k1", k1_perturbation, "sensitivity hook: shift the first SVDO constant")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(resolve_config(Command::Train, train_ov));
    if (*eval_cmd) return cmd_eval(resolve_config(Command::Eval, eval_ov));
    if (*prune_cmd) return cmd_prune(resolve_config(Command::Prune, prune_ov), pruned_out);
    if (*sweep_cmd) return cmd_sweep(resolve_config(Command::Sweep, sweep_ov));
    if (*verify_cmd) return cmd_verify(k1_perturbation);
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
