#pragma once

#include "rcnn/ops.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace rcnn {

/// Handle to a value recorded on a GradientTape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Records executed operators in order; backward() replays them in reverse.
/// A value consumed by several operators (a weight shared across time steps)
/// receives the sum of their gradient contributions.
template <typename Scalar>
class GradientTape {
 public:
  using TensorT = Tensor4<Scalar>;
  // Called with the tape, the node's own handle and the gradient of its output.
  using BackwardFn = std::function<void(GradientTape&, Var, const TensorT&)>;

  /// Leaf that receives a gradient.
  Var parameter(TensorT value) { return push(std::move(value), true, {}); }

  /// Leaf that does not.
  Var constant(TensorT value) { return push(std::move(value), false, {}); }

  /// Records an operator output. `backward` is kept only when at least one
  /// of `inputs` needs a gradient.
  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const TensorT& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to v. Zero when v
  /// did not influence it.
  const TensorT& grad(Var v) {
    Node& n = node(v);
    if (n.grad.shape() != n.value.shape()) n.grad = TensorT::Zero(n.value.shape());
    return n.grad;
  }

  /// Accumulation target for operator backward functions. Returns null for
  /// values that do not need a gradient.
  TensorT* grad_target(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.grad.shape() != n.value.shape()) n.grad = TensorT::Zero(n.value.shape());
    return &n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 for a single-element loss and propagates.
  void backward(Var loss) {
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size()) {
      throw std::logic_error("backward called before a forward pass was recorded");
    }
    if (node(loss).value.size() != 1) {
      throw ShapeError("backward target must hold one value, got " +
                       node(loss).value.shape().str());
    }
    for (Node& n : nodes_) n.grad = TensorT{};
    node(loss).grad = TensorT::Constant(node(loss).value.shape(), Scalar(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, Var{i}, n.grad);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(TensorT value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), TensorT{}, requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("unknown tape value");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("unknown tape value");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Recorded operators. Each evaluates the forward kernel from ops.hpp and
// registers the matching backward kernel.

template <typename Scalar>
Var conv2d_same(GradientTape<Scalar>& tape, Var input, Var kernel, Var bias) {
  auto out = conv2d_same(tape.value(input), tape.value(kernel), tape.value(bias));
  return tape.record(std::move(out), {input, kernel, bias},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       conv2d_same_backward(t.value(input), t.value(kernel), g,
                                            t.grad_target(input), t.grad_target(kernel),
                                            t.grad_target(bias));
                     });
}

template <typename Scalar>
Var transposed_conv2d_x2(GradientTape<Scalar>& tape, Var input, Var kernel, Var bias) {
  auto out = transposed_conv2d_x2(tape.value(input), tape.value(kernel), tape.value(bias));
  return tape.record(std::move(out), {input, kernel, bias},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       transposed_conv2d_x2_backward(t.value(input), t.value(kernel), g,
                                                     t.grad_target(input),
                                                     t.grad_target(kernel),
                                                     t.grad_target(bias));
                     });
}

template <typename Scalar>
Var maxpool_2x2(GradientTape<Scalar>& tape, Var input) {
  auto pooled = maxpool_2x2(tape.value(input));
  auto argmax = std::make_shared<std::vector<Index>>(std::move(pooled.argmax));
  return tape.record(std::move(pooled.output), {input},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) pool_backward(*argmax, g, *gi);
                     });
}

template <typename Scalar>
Var global_maxpool(GradientTape<Scalar>& tape, Var input) {
  auto pooled = global_maxpool(tape.value(input));
  auto argmax = std::make_shared<std::vector<Index>>(std::move(pooled.argmax));
  return tape.record(std::move(pooled.output), {input},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) pool_backward(*argmax, g, *gi);
                     });
}

template <typename Scalar>
Var dense(GradientTape<Scalar>& tape, Var input, Var weights, Var bias) {
  auto out = dense(tape.value(input), tape.value(weights), tape.value(bias));
  return tape.record(std::move(out), {input, weights, bias},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       dense_backward(t.value(input), t.value(weights), g, t.grad_target(input),
                                      t.grad_target(weights), t.grad_target(bias));
                     });
}

template <typename Scalar>
Var add(GradientTape<Scalar>& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor4<Scalar> out(tape.value(a).shape(), tape.value(a).data() + tape.value(b).data());
  return tape.record(std::move(out), {a, b},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       if (auto* ga = t.grad_target(a)) ga->data() += g.data();
                       if (auto* gb = t.grad_target(b)) gb->data() += g.data();
                     });
}

template <typename Scalar>
Var sum(GradientTape<Scalar>& tape, Var input) {
  Tensor4<Scalar> out({1, 1, 1, 1});
  out[0] = tape.value(input).data().sum();
  return tape.record(std::move(out), {input},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) gi->data().array() += g[0];
                     });
}

template <typename Scalar>
Var batchnorm(GradientTape<Scalar>& tape, Var input, Var gamma, Var beta, Mode mode,
              RunningStats<Scalar>& running, const BatchNormOptions& options = {}) {
  auto cache = std::make_shared<BatchNormCache<Scalar>>();
  auto out = batchnorm(tape.value(input), tape.value(gamma), tape.value(beta), mode, running,
                       cache.get(), options);
  return tape.record(std::move(out), {input, gamma, beta},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       batchnorm_backward(*cache, t.value(gamma), g, t.grad_target(input),
                                          t.grad_target(gamma), t.grad_target(beta));
                     });
}

template <typename Scalar>
Var relu(GradientTape<Scalar>& tape, Var input) {
  return tape.record(relu(tape.value(input)), {input},
                     [=](GradientTape<Scalar>& t, Var self, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) relu_backward(t.value(self), g, *gi);
                     });
}

template <typename Scalar>
Var lrn(GradientTape<Scalar>& tape, Var input, const LrnParams& params = {}) {
  auto denom = std::make_shared<Tensor4<Scalar>>();
  auto out = lrn(tape.value(input), params, denom.get());
  return tape.record(std::move(out), {input},
                     [=](GradientTape<Scalar>& t, Var self, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) {
                         lrn_backward(t.value(input), t.value(self), *denom, g, *gi, params);
                       }
                     });
}

template <typename Scalar>
Var softmax(GradientTape<Scalar>& tape, Var input) {
  return tape.record(softmax(tape.value(input)), {input},
                     [=](GradientTape<Scalar>& t, Var self, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(input)) softmax_backward(t.value(self), g, *gi);
                     });
}

/// One time step's term of the time-summed loss; labels are one-hot rows.
template <typename Scalar>
Var cross_entropy(GradientTape<Scalar>& tape, Var probabilities, Var labels) {
  Tensor4<Scalar> out({1, 1, 1, 1});
  out[0] = cross_entropy(tape.value(probabilities), tape.value(labels));
  return tape.record(std::move(out), {probabilities},
                     [=](GradientTape<Scalar>& t, Var, const Tensor4<Scalar>& g) {
                       if (auto* gi = t.grad_target(probabilities)) {
                         cross_entropy_backward(t.value(probabilities), t.value(labels), g[0],
                                                *gi);
                       }
                     });
}

}  // namespace rcnn
