#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "ardsparse/data_io.hpp"
#include "ardsparse/errors.hpp"

using namespace ardsparse;

namespace {

IdxImages sample_images(std::size_t count, std::size_t rows, std::size_t cols) {
  IdxImages images{count, rows, cols, std::vector<std::uint8_t>(count * rows * cols)};
  for (std::size_t i = 0; i < images.pixels.size(); ++i) images.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  return images;
}

std::vector<std::uint8_t> sample_labels(std::size_t count) {
  std::vector<std::uint8_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<std::uint8_t>(i % 10);
  return labels;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("IDX headers are big-endian with the standard magic numbers") {
  const auto bytes = encode_idx_images(sample_images(2, 3, 4));
  REQUIRE(bytes.size() == 16 + 24);
  CHECK(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 16) ==
        std::vector<std::uint8_t>{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4});
  const auto labels = encode_idx_labels(sample_labels(3));
  CHECK(std::vector<std::uint8_t>(labels.begin(), labels.begin() + 8) ==
        std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 3});
}

TEST_CASE("IDX encode and parse round-trip") {
  const IdxImages images = sample_images(5, 7, 6);
  const IdxImages back = parse_idx_images(encode_idx_images(images));
  CHECK(back.count == 5);
  CHECK(back.rows == 7);
  CHECK(back.cols == 6);
  CHECK(back.pixels == images.pixels);
  const auto labels = sample_labels(12);
  CHECK(parse_idx_labels(encode_idx_labels(labels)) == labels);
}

TEST_CASE("fuzz: every header bit flip is detected") {
  const auto images = encode_idx_images(sample_images(3, 4, 5));
  for (std::size_t bit = 0; bit < 16 * 8; ++bit) {
    auto bytes = images;
    bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    INFO("image header bit " << bit);
    CHECK_THROWS_AS(parse_idx_images(bytes), FormatError);
  }
  const auto labels = encode_idx_labels(sample_labels(6));
  for (std::size_t bit = 0; bit < 8 * 8; ++bit) {
    auto bytes = labels;
    bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    INFO("label header bit " << bit);
    CHECK_THROWS_AS(parse_idx_labels(bytes), FormatError);
  }
}

TEST_CASE("fuzz: every truncation and any trailing byte is detected") {
  const auto images = encode_idx_images(sample_images(2, 3, 3));
  for (std::size_t len = 0; len < images.size(); ++len) {
    CHECK_THROWS_AS(parse_idx_images(std::span(images.data(), len)), FormatError);
  }
  auto longer = images;
  longer.push_back(0);
  CHECK_THROWS_AS(parse_idx_images(longer), FormatError);
  const auto labels = encode_idx_labels(sample_labels(4));
  for (std::size_t len = 0; len < labels.size(); ++len) {
    CHECK_THROWS_AS(parse_idx_labels(std::span(labels.data(), len)), FormatError);
  }
}

TEST_CASE("fuzz: high-bit flips in label bytes are detected when loading") {
  const auto dir = std::filesystem::temp_directory_path() / "ardsparse_label_fuzz";
  std::filesystem::create_directories(dir);
  write_bytes(dir / "images", encode_idx_images(sample_images(10, 2, 2)));
  const auto labels = encode_idx_labels(sample_labels(10));
  for (std::size_t i = 8; i < labels.size(); ++i) {
    for (int bit = 4; bit < 8; ++bit) {
      auto bytes = labels;
      bytes[i] ^= static_cast<std::uint8_t>(1u << bit);
      REQUIRE(bytes[i] >= 10);
      write_bytes(dir / "labels", bytes);
      INFO("label byte " << i << " bit " << bit);
      CHECK_THROWS_AS(load_idx(dir / "images", dir / "labels"), FormatError);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("oversized headers do not overflow the size computation") {
  std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
  CHECK_THROWS_AS(parse_idx_images(bytes), FormatError);
}

TEST_CASE("standardization uses the fixed constants and inverts") {
  CHECK(normalize_pixel(0) == doctest::Approx(-kMnistMean / kMnistStd));
  CHECK(normalize_pixel(255) == doctest::Approx((1.0 - kMnistMean) / kMnistStd));
  for (int p : {0, 1, 128, 254, 255}) CHECK(denormalize_pixel(normalize_pixel(static_cast<std::uint8_t>(p))) == doctest::Approx(p));
}

TEST_CASE("load_idx produces a standardized N x 1 x H x W dataset") {
  const auto dir = std::filesystem::temp_directory_path() / "ardsparse_idx_test";
  std::filesystem::create_directories(dir);
  const IdxImages images = sample_images(4, 3, 2);
  write_bytes(dir / "train-images-idx3-ubyte", encode_idx_images(images));
  write_bytes(dir / "train-labels-idx1-ubyte", encode_idx_labels(sample_labels(4)));
  write_bytes(dir / "t10k-images-idx3-ubyte", encode_idx_images(images));
  write_bytes(dir / "t10k-labels-idx1-ubyte", encode_idx_labels(sample_labels(3)));

  const Dataset ds = load_mnist(dir, true);
  CHECK(ds.images.shape() == Shape{4, 1, 3, 2});
  CHECK(ds.example_shape() == Shape{1, 3, 2});
  CHECK(ds.classes == 10);
  CHECK(ds.labels == std::vector<std::int32_t>{0, 1, 2, 3});
  CHECK(ds.images[5] == doctest::Approx(normalize_pixel(images.pixels[5])));
  CHECK(load_mnist(dir, true, 2).size() == 2);
  CHECK_THROWS_AS(load_mnist(dir, false), FormatError);
  CHECK_THROWS_AS(load_mnist(dir / "missing", true), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic relevance data: labels depend on the signal block only") {
  const Dataset a = synthetic_relevance(500, 10, 10, 3);
  const Dataset b = synthetic_relevance(500, 10, 10, 3);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.images.shape() == Shape{500, 20});
  CHECK(a.classes == 2);
  const auto ones = std::count(a.labels.begin(), a.labels.end(), 1);
  CHECK(ones > 150);
  CHECK(ones < 350);
  // Noise columns are uncorrelated with the label; signal columns are not all.
  auto label_corr = [&](std::size_t col) {
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = a.images.at(i, col), y = a.labels[i];
      sx += x, sy += y, sxy += x * y, sxx += x * x, syy += y * y;
    }
    const double n = static_cast<double>(a.size());
    return (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  };
  double max_noise = 0, max_signal = 0;
  for (std::size_t c = 0; c < 10; ++c) max_signal = std::max(max_signal, std::abs(label_corr(c)));
  for (std::size_t c = 10; c < 20; ++c) max_noise = std::max(max_noise, std::abs(label_corr(c)));
  CHECK(max_signal > 0.2);
  CHECK(max_noise < 0.2);
  CHECK(!(synthetic_relevance(500, 10, 10, 4).images == a.images));
}

TEST_CASE("synthetic relevance data without noise is linearly separable") {
  const Dataset ds = synthetic_relevance(500, 10, 0, 8);
  // Perceptron oracle.
  std::vector<double> w(10, 0.0);
  double bias = 0.0;
  for (int epoch = 0; epoch < 2000; ++epoch) {
    int mistakes = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double y = ds.labels[i] == 1 ? 1.0 : -1.0;
      double score = bias;
      for (std::size_t j = 0; j < 10; ++j) score += w[j] * ds.images.at(i, j);
      if (y * score <= 0) {
        for (std::size_t j = 0; j < 10; ++j) w[j] += y * ds.images.at(i, j);
        bias += y;
        ++mistakes;
      }
    }
    if (mistakes == 0) break;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double score = bias;
    for (std::size_t j = 0; j < 10; ++j) score += w[j] * ds.images.at(i, j);
    correct += (score > 0) == (ds.labels[i] == 1) ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / ds.size() >= 0.99);
}

TEST_CASE("minibatches partition the indices and depend only on the generator state") {
  Rng rng(1), same(1);
  const auto batches = minibatches(103, 10, rng);
  CHECK(batches == minibatches(103, 10, same));
  REQUIRE(batches.size() == 11);
  CHECK(batches.back().size() == 3);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(103);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);
  CHECK(minibatches(103, 10, rng) != batches);
  CHECK_THROWS_AS(minibatches(10, 0, rng), ContractError);
}

TEST_CASE("gather copies the selected examples") {
  Dataset ds{Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), {0, 1, 0}, 2};
  const std::vector<std::size_t> idx{2, 0};
  const Batch b = gather(ds, idx);
  CHECK(b.inputs == Tensor({2, 2}, {5, 6, 1, 2}));
  CHECK(b.labels == std::vector<std::int32_t>{0, 0});
  CHECK(take(ds, 2).labels == std::vector<std::int32_t>{0, 1});
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(gather(ds, bad), ContractError);
}
