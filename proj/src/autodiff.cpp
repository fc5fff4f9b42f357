#include "ardsparse/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "ardsparse/errors.hpp"

namespace ardsparse {

const Tensor& Gradients::operator[](Var v) const {
  if (v.tape != tape_) throw ContractError("Gradients: variable belongs to a different tape");
  auto it = grads_.find(v.id);
  if (it == grads_.end()) throw ContractError("Gradients: node " + std::to_string(v.id) + " is not a parameter");
  return it->second;
}

void Tape::check(Var v, const char* where) const {
  if (!owns(v)) throw ContractError(std::string(where) + ": node is not part of this tape");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node{std::move(value), {}, std::move(backward), false, false};
  node.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check(in, "Tape::record");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (!node.requires_grad) node.backward = nullptr;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  check(v, "Tape::value");
  return nodes_[v.id].value;
}

Gradients Tape::backward(Var loss) const {
  check(loss, "Tape::backward");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("Tape::backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id].value.shape()));
  }
  std::vector<Tensor> adjoint(loss.id + 1);
  adjoint[loss.id] = Tensor(nodes_[loss.id].value.shape(), 1.0);

  Gradients result;
  result.tape_ = this;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (adjoint[i].empty()) continue;
    if (node.trainable) result.grads_.emplace(i, adjoint[i]);
    if (!node.backward) continue;
    Needs needs(node.inputs.size());
    for (std::size_t k = 0; k < needs.size(); ++k) needs[k] = nodes_[node.inputs[k]].requires_grad;
    std::vector<Tensor> grads = node.backward(adjoint[i], needs);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (k >= grads.size() || grads[k].empty() || !needs[k]) continue;
      Tensor& slot = adjoint[node.inputs[k]];
      if (slot.empty()) {
        slot = std::move(grads[k]);
      } else {
        auto dst = slot.data();
        auto src = grads[k].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    // Intermediate adjoints are not needed once propagated.
    if (!node.trainable) adjoint[i] = Tensor();
  }
  // Parameters that the loss does not depend on get zero gradients.
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].trainable && !result.grads_.contains(i)) result.grads_.emplace(i, Tensor(nodes_[i].value.shape()));
  }
  return result;
}

namespace ad {
namespace {

Tape& tape_of(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError(std::string(op) + ": operands live on different tapes");
  return *a.tape;
}

Tape& tape_of(Var a, const char* op) {
  if (a.tape == nullptr) throw ContractError(std::string(op) + ": null variable");
  return *a.tape;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b, "ad::add");
  return t.record(ardsparse::add(t.value(a), t.value(b)), {a, b},
                  [](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{g, g}; });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b, "ad::sub");
  return t.record(ardsparse::sub(t.value(a), t.value(b)), {a, b},
                  [](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{g, ardsparse::scale(g, -1.0)}; });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b, "ad::mul");
  return t.record(ardsparse::mul(t.value(a), t.value(b)), {a, b}, [&t, a, b](const Tensor& g, const Tape::Needs& needs) {
    return std::vector<Tensor>{needs[0] ? ardsparse::mul(g, t.value(b)) : Tensor(),
                               needs[1] ? ardsparse::mul(g, t.value(a)) : Tensor()};
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a, "ad::scale");
  return t.record(ardsparse::scale(t.value(a), factor), {a},
                  [factor](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{ardsparse::scale(g, factor)}; });
}

Var square(Var a) {
  Tape& t = tape_of(a, "ad::square");
  return t.record(ardsparse::square(t.value(a)), {a}, [&t, a](const Tensor& g, const Tape::Needs&) {
    Tensor out = ardsparse::mul(g, t.value(a));
    return std::vector<Tensor>{ardsparse::scale(out, 2.0)};
  });
}

Var sqrt(Var a) {
  Tape& t = tape_of(a, "ad::sqrt");
  Tensor value = ardsparse::sqrt(t.value(a));
  auto saved = std::make_shared<Tensor>(value);
  return t.record(std::move(value), {a}, [saved](const Tensor& g, const Tape::Needs&) {
    const Tensor& root = *saved;
    Tensor grad(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] = root[i] > 0.0 ? g[i] / (2.0 * root[i]) : 0.0;
    return std::vector<Tensor>{std::move(grad)};
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a, "ad::exp");
  Tensor value = ardsparse::exp(t.value(a));
  auto saved = std::make_shared<Tensor>(value);
  return t.record(std::move(value), {a},
                  [saved](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{ardsparse::mul(g, *saved)}; });
}

Var log(Var a) {
  Tape& t = tape_of(a, "ad::log");
  return t.record(ardsparse::log(t.value(a)), {a}, [&t, a](const Tensor& g, const Tape::Needs&) {
    const Tensor& x = t.value(a);
    Tensor grad(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] = g[i] / x[i];
    ensure_finite(grad, "ad::log backward");
    return std::vector<Tensor>{std::move(grad)};
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a, "ad::sigmoid");
  Tensor value = ardsparse::sigmoid(t.value(a));
  auto saved = std::make_shared<Tensor>(value);
  return t.record(std::move(value), {a}, [saved](const Tensor& g, const Tape::Needs&) {
    Tensor grad(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] = g[i] * (*saved)[i] * (1.0 - (*saved)[i]);
    return std::vector<Tensor>{std::move(grad)};
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a, "ad::relu");
  return t.record(ardsparse::relu(t.value(a)), {a}, [&t, a](const Tensor& g, const Tape::Needs&) {
    const Tensor& x = t.value(a);
    Tensor grad(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] = x[i] > 0.0 ? g[i] : 0.0;
    return std::vector<Tensor>{std::move(grad)};
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b, "ad::matmul");
  return t.record(ardsparse::matmul(t.value(a), t.value(b)), {a, b}, [&t, a, b](const Tensor& g, const Tape::Needs& needs) {
    return std::vector<Tensor>{needs[0] ? matmul_nt(g, t.value(b)) : Tensor(),
                               needs[1] ? matmul_tn(t.value(a), g) : Tensor()};
  });
}

Var conv2d(Var input, Var kernel, ConvGeometry geo) {
  Tape& t = tape_of(input, kernel, "ad::conv2d");
  return t.record(ardsparse::conv2d(t.value(input), t.value(kernel), geo), {input, kernel},
                  [&t, input, kernel, geo](const Tensor& g, const Tape::Needs& needs) {
                    const Tensor& x = t.value(input);
                    const Tensor& k = t.value(kernel);
                    return std::vector<Tensor>{needs[0] ? conv2d_grad_input(g, k, x.shape(), geo) : Tensor(),
                                               needs[1] ? conv2d_grad_kernel(x, g, k.shape(), geo) : Tensor()};
                  });
}

Var maxpool2d(Var input, std::size_t window) {
  Tape& t = tape_of(input, "ad::maxpool2d");
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor value = ardsparse::maxpool2d(t.value(input), window, argmax.get());
  const Shape in_shape = t.value(input).shape();
  return t.record(std::move(value), {input}, [argmax, in_shape](const Tensor& g, const Tape::Needs&) {
    Tensor grad(in_shape);
    for (std::size_t i = 0; i < g.size(); ++i) grad[(*argmax)[i]] += g[i];
    return std::vector<Tensor>{std::move(grad)};
  });
}

Var add_channel_bias(Var x, Var bias) {
  Tape& t = tape_of(x, bias, "ad::add_channel_bias");
  return t.record(ardsparse::add_channel_bias(t.value(x), t.value(bias)), {x, bias},
                  [](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{g, sum_to_channels(g)}; });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a, "ad::reshape");
  const Shape original = t.value(a).shape();
  return t.record(t.value(a).reshaped(std::move(shape)), {a},
                  [original](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{g.reshaped(original)}; });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "ad::sum");
  const Shape shape = t.value(a).shape();
  return t.record(Tensor::scalar(ardsparse::sum(t.value(a))), {a},
                  [shape](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{Tensor(shape, g.item())}; });
}

Var mean(Var a) {
  Tape& t = tape_of(a, "ad::mean");
  const Shape shape = t.value(a).shape();
  const double n = static_cast<double>(t.value(a).size());
  return t.record(Tensor::scalar(ardsparse::mean(t.value(a))), {a},
                  [shape, n](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{Tensor(shape, g.item() / n)}; });
}

Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> labels) {
  Tape& t = tape_of(logits, "ad::softmax_cross_entropy");
  auto owned = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  const double loss = ardsparse::softmax_cross_entropy(t.value(logits), *owned);
  return t.record(Tensor::scalar(loss), {logits}, [&t, logits, owned](const Tensor& g, const Tape::Needs&) {
    return std::vector<Tensor>{ardsparse::scale(softmax_cross_entropy_grad(t.value(logits), *owned), g.item())};
  });
}

Var pairwise_sum(Var a, Var b, const PairwiseFn& f) {
  Tape& t = tape_of(a, b, "ad::pairwise_sum");
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  if (x.shape() != y.shape()) {
    throw DimensionError("ad::pairwise_sum: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  auto dx = std::make_shared<Tensor>(x.shape());
  auto dy = std::make_shared<Tensor>(y.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const ElementTerm term = f(x[i], y[i]);
    total += term.value;
    (*dx)[i] = term.d_first;
    (*dy)[i] = term.d_second;
  }
  if (!std::isfinite(total)) throw NumericError("ad::pairwise_sum: non-finite value");
  ensure_finite(*dx, "ad::pairwise_sum partials");
  ensure_finite(*dy, "ad::pairwise_sum partials");
  return t.record(Tensor::scalar(total), {a, b}, [dx, dy](const Tensor& g, const Tape::Needs&) {
    return std::vector<Tensor>{ardsparse::scale(*dx, g.item()), ardsparse::scale(*dy, g.item())};
  });
}

Var elementwise_sum(Var a, const std::function<ElementTerm(double)>& f) {
  Tape& t = tape_of(a, "ad::elementwise_sum");
  const Tensor& x = t.value(a);
  auto dx = std::make_shared<Tensor>(x.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const ElementTerm term = f(x[i]);
    total += term.value;
    (*dx)[i] = term.d_first;
  }
  if (!std::isfinite(total)) throw NumericError("ad::elementwise_sum: non-finite value");
  ensure_finite(*dx, "ad::elementwise_sum partials");
  return t.record(Tensor::scalar(total), {a},
                  [dx](const Tensor& g, const Tape::Needs&) { return std::vector<Tensor>{ardsparse::scale(*dx, g.item())}; });
}

}  // namespace ad
}  // namespace ardsparse
