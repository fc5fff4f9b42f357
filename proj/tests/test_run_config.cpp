#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "ardsparse/errors.hpp"
#include "ardsparse/run_config.hpp"

using namespace ardsparse;

TEST_CASE("canonical text round-trips every key") {
  RunConfig cfg;
  cfg.objective = ObjectiveKind::GammaMap2;
  cfg.a = 0.505;
  cfg.b = 1e-8;
  cfg.lr0 = 0.1 + 0.2;
  cfg.log_sigma_clip = {ClipSetting::Mode::Value, -3.5};
  cfg.sweep_a = {0.505, 0.51};
  cfg.data_dir = "/tmp/mnist";
  cfg.bayesian_bias = false;
  const std::string text = canonical_text(cfg);
  CHECK(parse_config_text(text) == cfg);
  CHECK(canonical_text(parse_config_text(text)) == text);
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n' ? 1 : 0;
  CHECK(lines == config_keys().size());
}

TEST_CASE("comments, blank lines and later assignments") {
  const RunConfig cfg = parse_config_text("# header\n\nepochs = 5  # short run\nobjective = svdo\nepochs=7\n");
  CHECK(cfg.epochs == 7);
  CHECK(cfg.objective == ObjectiveKind::SparseVd);
  CHECK(cfg.batch_size == 100);
}

TEST_CASE("bad keys and values are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(set_config_value(cfg, "learning_rate", "1"), ContractError);
  CHECK_THROWS_AS(set_config_value(cfg, "epochs", "ten"), ContractError);
  CHECK_THROWS_AS(set_config_value(cfg, "epochs", "3.5"), ContractError);
  CHECK_THROWS_AS(set_config_value(cfg, "objective", "lasso"), ContractError);
  CHECK_THROWS_AS(parse_config_text("epochs 5\n"), ContractError);
}

TEST_CASE("the clip setting resolves per objective") {
  RunConfig cfg;
  CHECK(!cfg.train_config().log_sigma_clip);
  cfg.objective = ObjectiveKind::GammaMap2;
  cfg.a = 0.51;
  CHECK(cfg.train_config().log_sigma_clip == -4.0);
  set_config_value(cfg, "log_sigma_clip", "none");
  CHECK(!cfg.train_config().log_sigma_clip);
  set_config_value(cfg, "log_sigma_clip", "-2");
  CHECK(cfg.train_config().log_sigma_clip == -2.0);
}

TEST_CASE("validation") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.objective = ObjectiveKind::GammaMap2;
  cfg.a = 0.4;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.a = 0.51;
  cfg.command = Command::Sweep;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.sweep_a = {0.505, 0.51};
  CHECK_NOTHROW(cfg.validate());
  cfg.objective = ObjectiveKind::SparseVd;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("config files load from disk") {
  const auto path = std::filesystem::temp_directory_path() / "ardsparse_cfg.txt";
  std::ofstream(path) << "epochs = 2\nsweep_a = 0.505, 0.51\n";
  const RunConfig cfg = load_config(path);
  CHECK(cfg.epochs == 2);
  CHECK(cfg.sweep_a == std::vector<double>{0.505, 0.51});
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), Error);
}
