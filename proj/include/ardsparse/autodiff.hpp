#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ardsparse/tensor.hpp"

namespace ardsparse {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

// Maps each trainable node to d(loss)/d(node).
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  bool contains(Var v) const { return grads_.contains(v.id); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::unordered_map<std::size_t, Tensor> grads_;
};

// Append-only record of a forward computation. Inputs always precede the
// node that consumes them, so reverse index order is a valid topological
// order for backward().
class Tape {
 public:
  // Which inputs need a gradient, in input order.
  using Needs = std::vector<bool>;
  // Receives d(loss)/d(output) and returns one gradient per input, in input
  // order. An empty Tensor means "no contribution"; inputs with needs[k] ==
  // false may be left empty.
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const Needs& needs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool owns(Var v) const noexcept { return v.tape == this && v.id < nodes_.size(); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse-mode sweep from a one-element loss node.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool trainable = false;
    bool requires_grad = false;
  };

  void check(Var v, const char* where) const;

  std::vector<Node> nodes_;
};

// Value and partial derivatives of a per-element term f(x, y).
struct ElementTerm {
  double value = 0.0;
  double d_first = 0.0;
  double d_second = 0.0;
};
using PairwiseFn = std::function<ElementTerm(double, double)>;

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
// Subgradient 0 where the input is 0.
Var sqrt(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
// Subgradient 0 at 0.
Var relu(Var a);
Var matmul(Var a, Var b);
Var conv2d(Var input, Var kernel, ConvGeometry geo);
Var maxpool2d(Var input, std::size_t window);
Var add_channel_bias(Var x, Var bias);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
// Mean softmax cross-entropy over rows; labels are copied.
Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> labels);
// Σ_i f(a_i, b_i) with analytic partials supplied by f.
Var pairwise_sum(Var a, Var b, const PairwiseFn& f);
// Σ_i f(a_i) for a unary term; d_second is ignored.
Var elementwise_sum(Var a, const std::function<ElementTerm(double)>& f);

}  // namespace ad
}  // namespace ardsparse
