#include "ardsparse/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "ardsparse/errors.hpp"

namespace ardsparse {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                  static_cast<Eigen::Index>(t.dim(1)));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.dim(1)));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": expected rank " << rank << ", got shape " << shape_str(t.shape());
    throw DimensionError(msg.str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, const char* op, F&& f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  ensure_finite(out, op);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F&& f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  ensure_finite(out, op);
  return out;
}

struct ConvDims {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
};

ConvDims conv_dims(const Shape& input, const Shape& kernel, const ConvGeometry& geo) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("conv2d: expected 4-D input and kernel, got " + shape_str(input) + " and " +
                         shape_str(kernel));
  }
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d: channel mismatch " + shape_str(input) + " vs " + shape_str(kernel));
  }
  ConvDims d{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], 0, 0};
  d.out_h = conv_output_size(d.height, d.kh, geo);
  d.out_w = conv_output_size(d.width, d.kw, geo);
  return d;
}

// Column matrix for one image: rows index (c, ky, kx), columns index (oy, ox).
void im2col(const double* image, const ConvDims& d, const ConvGeometry& geo, RowMatrix& cols) {
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  const auto stride = static_cast<std::ptrdiff_t>(geo.stride);
  cols.resize(static_cast<Eigen::Index>(d.channels * d.kh * d.kw),
              static_cast<Eigen::Index>(d.out_h * d.out_w));
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double* plane = image + c * d.height * d.width;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        double* dst = cols.row(row).data();
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(d.height) &&
                                ix < static_cast<std::ptrdiff_t>(d.width);
            dst[oy * d.out_w + ox] = inside ? plane[iy * static_cast<std::ptrdiff_t>(d.width) + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const RowMatrix& cols, const ConvDims& d, const ConvGeometry& geo, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  const auto stride = static_cast<std::ptrdiff_t>(geo.stride);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < d.channels; ++c) {
    double* plane = image + c * d.height * d.width;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = cols.row(row).data();
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
            plane[iy * static_cast<std::ptrdiff_t>(d.width) + ix] += src[oy * d.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> data) : Tensor(std::move(shape), std::vector<double>(data)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("Tensor::dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const { return data_[row * shape_.at(1) + col]; }
double& Tensor::at(std::size_t row, std::size_t col) { return data_[row * shape_.at(1) + col]; }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("Tensor::item: tensor has shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void ensure_finite(const Tensor& t, const char* where) {
  auto values = t.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << where << ": non-finite value " << values[i] << " at flat index " << i << " of "
          << shape_str(t.shape());
      throw NumericError(msg.str());
    }
  }
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvGeometry& geo) {
  if (geo.stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  const std::size_t padded = in + 2 * geo.padding;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError("conv2d: kernel " + std::to_string(kernel) + " does not fit padded extent " +
                         std::to_string(padded));
  }
  if ((padded - kernel) % geo.stride != 0) {
    throw DimensionError("conv2d: non-integral output size for extent " + std::to_string(padded) + ", kernel " +
                         std::to_string(kernel) + ", stride " + std::to_string(geo.stride));
  }
  return (padded - kernel) / geo.stride + 1;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  ensure_finite(out, "matmul");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: leading dimensions differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out({a.dim(1), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  ensure_finite(out, "matmul_tn");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: trailing dimensions differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(0)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  ensure_finite(out, "matmul_nt");
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geo) {
  const ConvDims d = conv_dims(input.shape(), kernel.shape(), geo);
  Tensor out({d.batch, d.filters, d.out_h, d.out_w});
  const ConstMap k(kernel.data().data(), static_cast<Eigen::Index>(d.filters),
                   static_cast<Eigen::Index>(d.channels * d.kh * d.kw));
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.out_h * d.out_w;
  RowMatrix cols;
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(input.data().data() + b * in_stride, d, geo, cols);
    MutMap dst(out.data().data() + b * out_stride, static_cast<Eigen::Index>(d.filters),
               static_cast<Eigen::Index>(d.out_h * d.out_w));
    dst.noalias() = k * cols;
  }
  ensure_finite(out, "conv2d");
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         const ConvGeometry& geo) {
  const ConvDims d = conv_dims(input_shape, kernel.shape(), geo);
  if (grad_out.shape() != Shape{d.batch, d.filters, d.out_h, d.out_w}) {
    throw DimensionError("conv2d_grad_input: gradient shape " + shape_str(grad_out.shape()) + " does not match");
  }
  Tensor grad_in(input_shape);
  const ConstMap k(kernel.data().data(), static_cast<Eigen::Index>(d.filters),
                   static_cast<Eigen::Index>(d.channels * d.kh * d.kw));
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.out_h * d.out_w;
  RowMatrix cols;
  for (std::size_t b = 0; b < d.batch; ++b) {
    const ConstMap g(grad_out.data().data() + b * out_stride, static_cast<Eigen::Index>(d.filters),
                     static_cast<Eigen::Index>(d.out_h * d.out_w));
    cols.noalias() = k.transpose() * g;
    col2im(cols, d, geo, grad_in.data().data() + b * in_stride);
  }
  ensure_finite(grad_in, "conv2d_grad_input");
  return grad_in;
}

Tensor conv2d_grad_kernel(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          const ConvGeometry& geo) {
  const ConvDims d = conv_dims(input.shape(), kernel_shape, geo);
  if (grad_out.shape() != Shape{d.batch, d.filters, d.out_h, d.out_w}) {
    throw DimensionError("conv2d_grad_kernel: gradient shape " + shape_str(grad_out.shape()) + " does not match");
  }
  Tensor grad_k(kernel_shape);
  MutMap gk(grad_k.data().data(), static_cast<Eigen::Index>(d.filters),
            static_cast<Eigen::Index>(d.channels * d.kh * d.kw));
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.out_h * d.out_w;
  RowMatrix cols;
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(input.data().data() + b * in_stride, d, geo, cols);
    const ConstMap g(grad_out.data().data() + b * out_stride, static_cast<Eigen::Index>(d.filters),
                     static_cast<Eigen::Index>(d.out_h * d.out_w));
    gk.noalias() += g * cols.transpose();
  }
  ensure_finite(grad_k, "conv2d_grad_kernel");
  return grad_k;
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::vector<std::size_t>* argmax) {
  require_rank(input, 4, "maxpool2d");
  if (window == 0 || input.dim(2) % window != 0 || input.dim(3) % window != 0) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " does not tile " +
                         shape_str(input.shape()));
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  Tensor out({input.dim(0), input.dim(1), oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + oy * window * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = p * h * w + (oy * window + dy) * w + ox * window + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = p * oh * ow + oy * ow + ox;
        dst[o] = src[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double factor) {
  return map(a, "scale", [factor](double x) { return x * factor; });
}
Tensor square(const Tensor& a) {
  return map(a, "square", [](double x) { return x * x; });
}
Tensor sqrt(const Tensor& a) {
  return map(a, "sqrt", [](double x) { return std::sqrt(x); });
}
Tensor exp(const Tensor& a) {
  return map(a, "exp", [](double x) { return std::exp(x); });
}
Tensor log(const Tensor& a) {
  return map(a, "log", [](double x) { return std::log(x); });
}
Tensor sigmoid(const Tensor& a) {
  return map(a, "sigmoid", [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}
Tensor relu(const Tensor& a) {
  return map(a, "relu", [](double x) { return x > 0 ? x : 0.0; });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match axis 1 of " +
                         shape_str(x.shape()));
  }
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.size() / (x.dim(0) * channels);
  Tensor out = x;
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += bias[(i / inner) % channels];
  ensure_finite(out, "add_channel_bias");
  return out;
}

Tensor sum_to_channels(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("sum_to_channels: rank < 2");
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.size() / (x.dim(0) * channels);
  Tensor out({channels});
  auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) out[(i / inner) % channels] += src[i];
  return out;
}

double sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return total;
}

double mean(const Tensor& a) {
  if (a.empty()) throw DimensionError("mean: empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

double softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) throw DimensionError("softmax_cross_entropy: label count mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * classes;
    const auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
    }
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - peak);
    total += peak + std::log(z) - row[label];
  }
  const double loss = total / static_cast<double>(rows);
  if (!std::isfinite(loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return loss;
}

Tensor softmax_cross_entropy_grad(const Tensor& logits, std::span<const std::int32_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy_grad");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) throw DimensionError("softmax_cross_entropy_grad: label count mismatch");
  Tensor grad(logits.shape());
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * classes;
    double* g = grad.data().data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(row[c] - peak);
      z += g[c];
    }
    for (std::size_t c = 0; c < classes; ++c) g[c] = g[c] / z * inv_rows;
    g[labels[r]] -= inv_rows;
  }
  return grad;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * classes;
    out[r] = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace ardsparse
