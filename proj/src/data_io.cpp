#include "ardsparse/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4) {
    throw FormatError(std::string("IDX: truncated ") + what + " at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void check_payload(std::span<const std::uint8_t> bytes, std::size_t header, std::size_t payload) {
  const std::size_t expected = header + payload;
  if (bytes.size() < expected) {
    throw FormatError("IDX: truncated payload, file ends at offset " + std::to_string(bytes.size()) + " but header implies " +
                      std::to_string(expected));
  }
  if (bytes.size() > expected) throw FormatError("IDX: trailing data at offset " + std::to_string(expected));
}

}  // namespace

Shape Dataset::example_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

void Dataset::validate() const {
  if (images.rank() < 2 || images.dim(0) != labels.size()) {
    throw ContractError("dataset: " + std::to_string(labels.size()) + " labels for images " + shape_str(images.shape()));
  }
  for (auto label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("dataset: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

double normalize_pixel(std::uint8_t raw) { return (static_cast<double>(raw) / 255.0 - kMnistMean) / kMnistStd; }

double denormalize_pixel(double value) { return (value * kMnistStd + kMnistMean) * 255.0; }

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != kImagesMagic) {
    std::ostringstream msg;
    msg << "IDX: bad image magic 0x" << std::hex << magic << " at offset 0 (expected 0x803)";
    throw FormatError(msg.str());
  }
  IdxImages out;
  out.count = read_be32(bytes, 4, "image count");
  out.rows = read_be32(bytes, 8, "row count");
  out.cols = read_be32(bytes, 12, "column count");
  if (out.rows == 0 || out.cols == 0) throw FormatError("IDX: zero image dimension at offset 8");
  std::size_t payload = 0;
  if (__builtin_mul_overflow(out.count, out.rows, &payload) || __builtin_mul_overflow(payload, out.cols, &payload)) {
    throw FormatError("IDX: image dimensions overflow at offset 4");
  }
  check_payload(bytes, 16, payload);
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0, "magic");
  if (magic != kLabelsMagic) {
    std::ostringstream msg;
    msg << "IDX: bad label magic 0x" << std::hex << magic << " at offset 0 (expected 0x801)";
    throw FormatError(msg.str());
  }
  const std::size_t count = read_be32(bytes, 4, "label count");
  check_payload(bytes, 8, count);
  return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes(std::filesystem::file_size(path));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError("short read from " + path.string());
  return bytes;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const IdxImages images = parse_idx_images(read_file(images_path));
  const std::vector<std::uint8_t> labels = parse_idx_labels(read_file(labels_path));
  if (images.count != labels.size()) {
    throw FormatError("IDX: " + std::to_string(images.count) + " images but " + std::to_string(labels.size()) +
                      " labels (label count at offset 4)");
  }
  Dataset ds;
  ds.classes = 10;
  ds.images = Tensor({images.count, 1, images.rows, images.cols});
  auto dst = ds.images.data();
  for (std::size_t i = 0; i < images.pixels.size(); ++i) dst[i] = normalize_pixel(images.pixels[i]);
  ds.labels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= ds.classes) {
      throw FormatError("IDX: label " + std::to_string(labels[i]) + " out of range at offset " + std::to_string(8 + i));
    }
    ds.labels[i] = labels[i];
  }
  return ds;
}

Dataset synthetic_relevance(std::size_t n, std::size_t d_signal, std::size_t d_noise, std::uint64_t seed) {
  if (n == 0 || d_signal == 0) throw ContractError("synthetic_relevance: n and d_signal must be >= 1");
  Rng root(seed);
  Rng direction_rng = root.split(0);
  Rng signal_rng = root.split(1);
  Rng noise_rng = root.split(2);

  // Every signal coordinate carries weight of magnitude in [0.5, 1.5].
  std::vector<double> direction(d_signal);
  for (double& v : direction) v = (direction_rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + direction_rng.uniform());

  const std::size_t d = d_signal + d_noise;
  Dataset ds;
  ds.classes = 2;
  ds.images = Tensor({n, d});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double score = 0.0;
    for (std::size_t j = 0; j < d_signal; ++j) {
      const double x = signal_rng.normal();
      ds.images.at(i, j) = x;
      score += direction[j] * x;
    }
    for (std::size_t j = d_signal; j < d; ++j) ds.images.at(i, j) = noise_rng.normal();
    ds.labels[i] = score > 0.0 ? 1 : 0;
  }
  return ds;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("minibatches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  const Shape example = ds.example_shape();
  const std::size_t stride = shape_size(example);
  Shape shape{indices.size()};
  shape.insert(shape.end(), example.begin(), example.end());
  Batch batch{Tensor(shape), std::vector<std::int32_t>(indices.size())};
  auto src = ds.images.data();
  auto dst = batch.inputs.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= ds.size()) throw ContractError("gather: index " + std::to_string(i) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, dst.begin() + static_cast<std::ptrdiff_t>(k * stride));
    batch.labels[k] = ds.labels[i];
  }
  return batch;
}

}  // namespace ardsparse

namespace ardsparse {

Dataset take(const Dataset& ds, std::size_t count) {
  if (count == 0 || count >= ds.size()) return ds;
  std::vector<std::size_t> indices(count);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Batch batch = gather(ds, indices);
  return {std::move(batch.inputs), std::move(batch.labels), ds.classes};
}

Dataset load_mnist(const std::filesystem::path& dir, bool train_split, std::size_t limit) {
  const std::string prefix = train_split ? "train" : "t10k";
  return take(load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte")), limit);
}

}  // namespace ardsparse
