#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ardsparse/rng.hpp"
#include "ardsparse/tensor.hpp"

namespace ardsparse {

struct Dataset {
  Tensor images;                     // [N×C×H×W] or [N×D]
  std::vector<std::int32_t> labels;  // length N, values in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  // Per-example shape (images shape without the leading N).
  Shape example_shape() const;
  // Throws ContractError if labels or sizes are inconsistent.
  void validate() const;
};

// Fixed MNIST standardization constants.
inline constexpr double kMnistMean = 0.1307;
inline constexpr double kMnistStd = 0.3081;

double normalize_pixel(std::uint8_t raw);
double denormalize_pixel(double value);  // inverse of normalize_pixel, in [0, 255] units

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

// Big-endian IDX parsing. Throws FormatError naming the byte offset on a bad
// magic number, truncation, or trailing data.
IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

// Loads an image/label file pair into an [N×1×H×W] standardized dataset with
// 10 classes.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// First `count` examples (all of them when count is 0 or exceeds the size).
Dataset take(const Dataset& ds, std::size_t count);

// The standard MNIST file names inside `dir` (train-* or t10k-*), truncated to
// `limit` examples when nonzero.
Dataset load_mnist(const std::filesystem::path& dir, bool train_split, std::size_t limit = 0);

// Two-class data whose label is sign(v · x_signal) for a fixed random v; the
// trailing d_noise columns are independent N(0,1) noise.
Dataset synthetic_relevance(std::size_t n, std::size_t d_signal, std::size_t d_noise, std::uint64_t seed);

// A fresh random permutation of [0, n) cut into consecutive batches; the last
// batch may be short.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng);

struct Batch {
  Tensor inputs;
  std::vector<std::int32_t> labels;
};
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace ardsparse
