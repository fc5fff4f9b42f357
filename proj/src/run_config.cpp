#include "ardsparse/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {
namespace {

std::string trim_ws(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ContractError("config: key '" + std::string(key) + "' expects " + std::string(expected) + ", got '" +
                      std::string(value) + "'");
}

double to_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

template <typename Int>
Int to_int(std::string_view key, std::string_view value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::vector<double> to_list(std::string_view key, std::string_view value) {
  std::vector<double> out;
  if (value.empty()) return out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto stop = comma == std::string_view::npos ? value.size() : comma;
    out.push_back(to_double(key, trim_ws(value.substr(start, stop - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"command", {[](RunConfig& c, auto, auto v) { c.command = parse_command(v); },
                   [](const RunConfig& c) { return std::string(command_name(c.command)); }}},
      {"architecture", {[](RunConfig& c, auto, auto v) { c.architecture = std::string(v); },
                        [](const RunConfig& c) { return c.architecture; }}},
      {"objective", {[](RunConfig& c, auto, auto v) { c.objective = parse_objective(v); },
                     [](const RunConfig& c) { return std::string(objective_name(c.objective)); }}},
      {"alpha", {[](RunConfig& c, auto k, auto v) { c.alpha = to_double(k, v); },
                 [](const RunConfig& c) { return fmt(c.alpha); }}},
      {"a", {[](RunConfig& c, auto k, auto v) { c.a = to_double(k, v); }, [](const RunConfig& c) { return fmt(c.a); }}},
      {"b", {[](RunConfig& c, auto k, auto v) { c.b = to_double(k, v); }, [](const RunConfig& c) { return fmt(c.b); }}},
      {"reg_scale", {[](RunConfig& c, auto k, auto v) { c.reg_scale = to_double(k, v); },
                     [](const RunConfig& c) { return fmt(c.reg_scale); }}},
      {"anneal_epochs", {[](RunConfig& c, auto k, auto v) { c.anneal_epochs = to_int<int>(k, v); },
                         [](const RunConfig& c) { return std::to_string(c.anneal_epochs); }}},
      {"epochs", {[](RunConfig& c, auto k, auto v) { c.epochs = to_int<int>(k, v); },
                  [](const RunConfig& c) { return std::to_string(c.epochs); }}},
      {"batch_size", {[](RunConfig& c, auto k, auto v) { c.batch_size = to_int<std::size_t>(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.batch_size); }}},
      {"lr0", {[](RunConfig& c, auto k, auto v) { c.lr0 = to_double(k, v); },
               [](const RunConfig& c) { return fmt(c.lr0); }}},
      {"lr_decay_start_epoch", {[](RunConfig& c, auto k, auto v) { c.lr_decay_start_epoch = to_int<int>(k, v); },
                                [](const RunConfig& c) { return std::to_string(c.lr_decay_start_epoch); }}},
      {"log_sigma_clip",
       {[](RunConfig& c, auto k, auto v) {
          if (v == "auto") {
            c.log_sigma_clip = {ClipSetting::Mode::Auto, 0.0};
          } else if (v == "none") {
            c.log_sigma_clip = {ClipSetting::Mode::None, 0.0};
          } else {
            c.log_sigma_clip = {ClipSetting::Mode::Value, to_double(k, v)};
          }
        },
        [](const RunConfig& c) -> std::string {
          switch (c.log_sigma_clip.mode) {
            case ClipSetting::Mode::Auto: return "auto";
            case ClipSetting::Mode::None: return "none";
            case ClipSetting::Mode::Value: return fmt(c.log_sigma_clip.value);
          }
          return "auto";
        }}},
      {"seed", {[](RunConfig& c, auto k, auto v) { c.seed = to_int<std::uint64_t>(k, v); },
                [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"eval_every", {[](RunConfig& c, auto k, auto v) { c.eval_every = to_int<int>(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.eval_every); }}},
      {"bayesian_bias", {[](RunConfig& c, auto k, auto v) { c.bayesian_bias = to_bool(k, v); },
                         [](const RunConfig& c) { return std::string(c.bayesian_bias ? "true" : "false"); }}},
      {"trim_threshold", {[](RunConfig& c, auto k, auto v) { c.trim_threshold = to_double(k, v); },
                          [](const RunConfig& c) { return fmt(c.trim_threshold); }}},
      {"include_bias", {[](RunConfig& c, auto k, auto v) { c.include_bias = to_bool(k, v); },
                        [](const RunConfig& c) { return std::string(c.include_bias ? "true" : "false"); }}},
      {"data_dir", {[](RunConfig& c, auto, auto v) { c.data_dir = std::string(v); },
                    [](const RunConfig& c) { return c.data_dir.string(); }}},
      {"train_limit", {[](RunConfig& c, auto k, auto v) { c.train_limit = to_int<std::size_t>(k, v); },
                       [](const RunConfig& c) { return std::to_string(c.train_limit); }}},
      {"test_limit", {[](RunConfig& c, auto k, auto v) { c.test_limit = to_int<std::size_t>(k, v); },
                      [](const RunConfig& c) { return std::to_string(c.test_limit); }}},
      {"checkpoint", {[](RunConfig& c, auto, auto v) { c.checkpoint = std::string(v); },
                      [](const RunConfig& c) { return c.checkpoint.string(); }}},
      {"metrics", {[](RunConfig& c, auto, auto v) { c.metrics = std::string(v); },
                   [](const RunConfig& c) { return c.metrics.string(); }}},
      {"report", {[](RunConfig& c, auto, auto v) { c.report = std::string(v); },
                  [](const RunConfig& c) { return c.report.string(); }}},
      {"sweep_a", {[](RunConfig& c, auto k, auto v) { c.sweep_a = to_list(k, v); },
                   [](const RunConfig& c) {
                     std::string out;
                     for (std::size_t i = 0; i < c.sweep_a.size(); ++i) {
                       if (i) out += ',';
                       out += fmt(c.sweep_a[i]);
                     }
                     return out;
                   }}},
  };
  return table;
}

}  // namespace

std::string_view command_name(Command cmd) {
  switch (cmd) {
    case Command::Train: return "train";
    case Command::Eval: return "eval";
    case Command::Prune: return "prune";
    case Command::Verify: return "verify";
    case Command::Sweep: return "sweep";
  }
  return "train";
}

Command parse_command(std::string_view name) {
  for (Command c : {Command::Train, Command::Eval, Command::Prune, Command::Verify, Command::Sweep}) {
    if (command_name(c) == name) return c;
  }
  throw ContractError("config: unknown command '" + std::string(name) + "'");
}

std::optional<double> ClipSetting::resolve(ObjectiveKind kind) const {
  switch (mode) {
    case Mode::Auto:
      if (kind == ObjectiveKind::GammaMap2) return kGammaLogSigmaClip;
      return std::nullopt;
    case Mode::None: return std::nullopt;
    case Mode::Value: return value;
  }
  return std::nullopt;
}

ObjectiveSpec RunConfig::objective_spec() const {
  ObjectiveSpec spec;
  spec.kind = objective;
  spec.alpha = alpha;
  spec.a = a;
  spec.b = b;
  spec.reg_scale = reg_scale;
  spec.anneal_epochs = anneal_epochs;
  return spec;
}

SparsifyOptions RunConfig::sparsify_options() const { return {trim_threshold, include_bias}; }

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr0 = lr0;
  cfg.lr_decay_start_epoch = lr_decay_start_epoch;
  cfg.log_sigma_clip = log_sigma_clip.resolve(objective);
  cfg.seed = seed;
  cfg.objective = objective_spec();
  cfg.eval_every = eval_every;
  cfg.bayesian_bias = bayesian_bias;
  cfg.sparsify = sparsify_options();
  cfg.checkpoint_path = checkpoint;
  return cfg;
}

void RunConfig::validate() const {
  train_config().validate();
  if (!(trim_threshold >= 0.0)) throw ContractError("config: trim_threshold must be >= 0");
  if (command == Command::Sweep) {
    if (objective != ObjectiveKind::GammaMap2) throw ContractError("config: sweep requires objective = gamma");
    if (sweep_a.empty()) throw ContractError("config: sweep requires at least one value in sweep_a");
    for (double value : sweep_a) {
      ObjectiveSpec spec = objective_spec();
      spec.a = value;
      spec.validate();
    }
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, field] : fields()) out.push_back(key);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, key, trim_ws(value));
      return;
    }
  }
  throw ContractError("config: unknown key '" + std::string(key) + "'");
}

RunConfig parse_config_text(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    std::string_view line = text.substr(start, stop - start);
    start = stop + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim_ws(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim_ws(std::string_view(content).substr(0, eq));
    const std::string value = trim_ws(std::string_view(content).substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const Error& e) {
      throw ContractError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ContractError("config: cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), std::move(base));
}

std::string canonical_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + '\n';
  return out;
}

}  // namespace ardsparse
