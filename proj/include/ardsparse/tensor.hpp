#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ardsparse {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, std::initializer_list<double> data);

  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Row-major 2-D access.
  double at(std::size_t row, std::size_t col) const;
  double& at(std::size_t row, std::size_t col);

  // Value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NumericError naming `where` if any element is NaN or infinite.
void ensure_finite(const Tensor& t, const char* where);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

// Output spatial size of a convolution; throws DimensionError when the
// kernel does not fit or the stride does not divide evenly.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvGeometry& geo);

// ---- linear algebra -------------------------------------------------------

// a[M×K] · b[K×N]
Tensor matmul(const Tensor& a, const Tensor& b);
// aᵀ · b for a[K×M], b[K×N]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a · bᵀ for a[M×K], b[N×K]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Cross-correlation with zero padding. input[B×C×H×W], kernel[F×C×kH×kW].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geo);
// Gradient of conv2d w.r.t. its input, given the output gradient.
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         const ConvGeometry& geo);
// Gradient of conv2d w.r.t. its kernel, given the output gradient.
Tensor conv2d_grad_kernel(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          const ConvGeometry& geo);

// Non-overlapping max pooling with a square window. `argmax` receives, per
// output element, the flat input index that produced it.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::vector<std::size_t>* argmax = nullptr);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Adds bias[n] along axis 1 of x (x is [B×n] or [B×n×H×W]).
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// Reduction that is the adjoint of add_channel_bias.
Tensor sum_to_channels(const Tensor& x);

// ---- reductions -----------------------------------------------------------

double sum(const Tensor& a);
double mean(const Tensor& a);

// Mean over rows of -log softmax(logits)[label]. logits[B×C].
double softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);
// d(mean CE)/d(logits).
Tensor softmax_cross_entropy_grad(const Tensor& logits, std::span<const std::int32_t> labels);

// Row-wise argmax of a [B×C] tensor.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

}  // namespace ardsparse
