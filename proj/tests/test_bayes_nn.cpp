#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ardsparse/bayes_nn.hpp"
#include "ardsparse/errors.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace ardsparse;

namespace {

std::vector<LayerSpec> lenet() {
  return parse_architecture("conv:6:5:1:2,pool:2,conv:16:5,pool:2,dense:120,dense:84,dense:10", {1, 28, 28});
}

std::string serialize(const BayesNet& net) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, net);
  return out.str();
}

BayesNet deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint(in);
}

}  // namespace

TEST_CASE("initialization follows the documented distributions") {
  Rng rng(1);
  const LayerSpec spec = LayerSpec::dense(400, 250);
  const GaussianPosterior post = init_posterior(spec, rng);
  const GaussianPosterior bias = init_bias_posterior(spec, rng);
  CHECK(post.shape() == Shape{400, 250});
  CHECK(bias.shape() == Shape{250});
  const double n = static_cast<double>(post.size());
  double mean = 0, sq = 0, ls_mean = 0, ls_sq = 0;
  for (std::size_t i = 0; i < post.size(); ++i) {
    mean += post.mu[i];
    sq += post.mu[i] * post.mu[i];
    ls_mean += post.log_sigma[i];
    ls_sq += post.log_sigma[i] * post.log_sigma[i];
  }
  mean /= n;
  ls_mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double ls_sd = std::sqrt(ls_sq / n - ls_mean * ls_mean);
  const double target = std::sqrt(2.0 / 400.0);
  CHECK(std::abs(mean) < 5 * target / std::sqrt(n));
  CHECK(sd == doctest::Approx(target).epsilon(5 * std::sqrt(0.5 / n)));
  CHECK(ls_mean == doctest::Approx(kInitLogSigmaMean).epsilon(5 * kInitLogSigmaStd / std::sqrt(n) / 5.0));
  CHECK(ls_sd == doctest::Approx(kInitLogSigmaStd).epsilon(5 * std::sqrt(0.5 / n)));
  for (double v : bias.mu.data()) CHECK(v == 0.0);
  CHECK(LayerSpec::conv(3, 8, 5).fan_in() == 75);
}

TEST_CASE("deterministic mode returns the mean pre-activation") {
  std::mt19937_64 gen(2);
  const Tensor x = oracle::random_tensor(gen, {3, 4});
  const GaussianPosterior post = suites::random_posterior(gen, {4, 2}, -3, -1);
  Rng rng(0);
  CHECK(dense_forward(x, post, EvalMode::Deterministic, rng) == matmul(x, post.mu));
  const Tensor xc = oracle::random_tensor(gen, {1, 2, 6, 6});
  const GaussianPosterior kc = suites::random_posterior(gen, {3, 2, 3, 3}, -3, -1);
  CHECK(oracle::max_abs_diff(conv_forward(xc, kc, {1, 1}, EvalMode::Deterministic, rng), oracle::naive_conv2d(xc, kc.mu, 1, 1)) < 1e-12);
}

TEST_CASE("layer gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(suites::layer_gradient_error(false, seed) < 1e-6);
    CHECK(suites::layer_gradient_error(true, seed) < 1e-6);
  }
}

TEST_CASE("stochastic layer moments match the local reparameterization (quick run)") {
  for (bool conv : {false, true}) {
    for (bool sample_weights : {false, true}) {
      const auto r = suites::moment_check(conv, 3, 20000, sample_weights);
      CHECK(r.worst_mean_z < 5.0);
      CHECK(r.worst_variance_z < 5.0);
    }
  }
}

TEST_CASE("fixed dropout rate sets the variance to alpha times mu squared") {
  Tape tape;
  const Tensor x({1, 2}, {1.0, 2.0});
  const PosteriorVars w{tape.parameter(Tensor({2, 1}, {0.5, -1.0})), tape.parameter(Tensor({2, 1}, {-3.0, -3.0}))};
  ForwardOptions opts;
  opts.fixed_alpha = 0.25;
  opts.noise = [](std::size_t, const Shape& shape) { return Tensor(shape, 1.0); };
  const Var y = dense_forward(tape.constant(x), w, nullptr, opts, 0);
  // m = 0.5 - 2 = -1.5; v = 0.25·(1·0.25 + 4·1) = 1.0625
  CHECK(tape.value(y)[0] == doctest::Approx(-1.5 + std::sqrt(1.0625)));
}

TEST_CASE("stochastic forward needs a noise source") {
  Tape tape;
  const PosteriorVars w{tape.parameter(Tensor({2, 1})), tape.parameter(Tensor({2, 1}))};
  CHECK_THROWS_AS(dense_forward(tape.constant(Tensor({1, 2})), w, nullptr, ForwardOptions{}, 0), ContractError);
}

TEST_CASE("network forward in deterministic mode agrees with predict") {
  Rng init(4);
  const BayesNet net(lenet(), init);
  std::mt19937_64 gen(4);
  const Tensor x = oracle::random_tensor(gen, {2, 1, 28, 28});
  Tape tape;
  ForwardOptions opts;
  opts.mode = EvalMode::Deterministic;
  const auto rec = net.forward(tape, x, opts);
  CHECK(tape.value(rec.logits).shape() == Shape{2, 10});
  CHECK(oracle::max_abs_diff(tape.value(rec.logits), net.predict(x)) < 1e-12);
  CHECK(net.weight_count() == 6 * 25 + 16 * 6 * 25 + 400 * 120 + 120 * 84 + 84 * 10);
}

TEST_CASE("architecture strings") {
  const auto mlp = parse_architecture("784-300-100-10", {1, 28, 28});
  REQUIRE(mlp.size() == 3);
  CHECK(mlp[0] == LayerSpec::dense(784, 300));
  CHECK(mlp[2] == LayerSpec::dense(100, 10));
  CHECK(format_architecture(mlp) == "784-300-100-10");

  const auto net = lenet();
  REQUIRE(net.size() == 7);
  CHECK(net[0] == LayerSpec::conv(1, 6, 5, {1, 2}));
  CHECK(net[2] == LayerSpec::conv(6, 16, 5));
  CHECK(net[4] == LayerSpec::dense(400, 120));
  CHECK(parse_architecture(format_architecture(net), {1, 28, 28}) == net);

  CHECK_THROWS_AS(parse_architecture("784-300-10", {1, 20, 20}), ContractError);
  CHECK_THROWS_AS(parse_architecture("784", {}), ContractError);
  CHECK_THROWS_AS(parse_architecture("conv:6:50", {1, 28, 28}), Error);
  CHECK_THROWS_AS(parse_architecture("dense:0", {4}), ContractError);
  CHECK_THROWS_AS(parse_architecture("bogus:3", {4}), ContractError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng init(5);
  const BayesNet net(lenet(), init);
  const std::string bytes = serialize(net);
  const BayesNet back = deserialize(bytes);
  CHECK(back == net);
  CHECK(serialize(back) == bytes);
  CHECK(bytes.substr(0, 11) == "ARDSPARSIFY");

  const auto path = std::filesystem::temp_directory_path() / "ardsparse_test_ckpt.bin";
  save_checkpoint(path, net);
  CHECK(load_checkpoint(path) == net);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  Rng init(6);
  const BayesNet net(parse_architecture("6-4-3", {}), init);
  const std::string bytes = serialize(net);
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    INFO("truncated to " << len);
    CHECK_THROWS_AS(deserialize(bytes.substr(0, len)), FormatError);
  }
  CHECK_THROWS_AS(deserialize(bytes + '\0'), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[16] = 9;
  CHECK_THROWS_AS(deserialize(bad_version), FormatError);
  std::string bad_kind = bytes;
  bad_kind[21] = 7;
  CHECK_THROWS_AS(deserialize(bad_kind), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), FormatError);
}

TEST_CASE("same seed gives the same initialization") {
  Rng a(9), b(9), c(10);
  CHECK(BayesNet(lenet(), a) == BayesNet(lenet(), b));
  CHECK(!(BayesNet(lenet(), c) == BayesNet(lenet(), a)));
}
