#pragma once

// The six two-layer recurrent convolutional models (B, B-F, B-K, BT, BL, BLT)
// unrolled over a fixed number of time steps.
//
// Per time step t and hidden layer l:
//   z = bottom-up conv of the layer input
//     + lateral conv of h(t-1, l)                  (BL, BLT)
//     + transposed conv of h(t-1, 2), l = 1 only   (BT, BLT)
//   h = lrn(relu(batchnorm(z)))
// The layer-1 input is the image, the layer-2 input is maxpool_2x2(h(t, 1)).
// Recurrent terms are absent at t = 0. Readout per step is
// softmax(dense(global_maxpool(h(t, 2)))).

#include "rcnn/random.hpp"
#include "rcnn/tape.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rcnn {

struct ArchitectureSpec {
  std::string name = "B";
  bool lateral = false;
  bool topdown = false;
  int kernel = 3;
  int features = 32;
  int time_steps = 4;
  int in_channels = 1;
  int classes = 10;

  /// Canonical configuration of a named model.
  static ArchitectureSpec named(std::string_view name, int in_channels = 1, int classes = 10);

  /// Name/flag consistency and positive sizes. Throws std::invalid_argument.
  void validate() const;

  /// validate() plus the canonical kernel/feature sizes for the name.
  void validate_canonical() const;

  bool recurrent() const { return lateral || topdown; }

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

inline constexpr std::array<std::string_view, 6> kArchitectureNames = {"B",  "B-F", "B-K",
                                                                       "BT", "BL",  "BLT"};

/// Learnable parameters as tabulated for the models: convolution and
/// transposed-convolution kernels and biases plus the readout weights and
/// bias. Batch-norm scale/shift are not included.
std::int64_t count_learnable(const ArchitectureSpec& spec);

template <typename Scalar>
struct HiddenLayer {
  ConvWeights<Scalar> bottom_up;
  std::optional<ConvWeights<Scalar>> lateral;
  // Layer-2 features -> layer-1 features, transposed-convolution layout.
  std::optional<ConvWeights<Scalar>> topdown;
  Tensor4<Scalar> gamma;
  Tensor4<Scalar> beta;
  std::vector<RunningStats<Scalar>> running;  // one per time step
};

template <typename Scalar>
struct ModelParams {
  ArchitectureSpec spec;
  std::array<HiddenLayer<Scalar>, 2> layers;
  Tensor4<Scalar> readout_weights;  // (1, 1, features, classes)
  Tensor4<Scalar> readout_bias;     // (1, classes, 1, 1)
};

enum class ParamRole { BottomUp, Lateral, TopDown, Bias, Norm, Readout };

/// Visits every trainable tensor in the fixed checkpoint order:
/// per layer bottom-up, lateral, top-down (kernel then bias), gamma, beta;
/// then readout weights and bias.
template <typename Params, typename Fn>
void for_each_trainable(Params& params, Fn&& fn) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    fn(prefix + "bottom_up.kernel", layer.bottom_up.kernel, ParamRole::BottomUp);
    fn(prefix + "bottom_up.bias", layer.bottom_up.bias, ParamRole::Bias);
    if (layer.lateral) {
      fn(prefix + "lateral.kernel", layer.lateral->kernel, ParamRole::Lateral);
      fn(prefix + "lateral.bias", layer.lateral->bias, ParamRole::Bias);
    }
    if (layer.topdown) {
      fn(prefix + "topdown.kernel", layer.topdown->kernel, ParamRole::TopDown);
      fn(prefix + "topdown.bias", layer.topdown->bias, ParamRole::Bias);
    }
    fn(prefix + "gamma", layer.gamma, ParamRole::Norm);
    fn(prefix + "beta", layer.beta, ParamRole::Norm);
  }
  fn(std::string("readout.weights"), params.readout_weights, ParamRole::Readout);
  fn(std::string("readout.bias"), params.readout_bias, ParamRole::Bias);
}

template <typename Scalar>
std::vector<Tensor4<Scalar>*> trainable(ModelParams<Scalar>& params) {
  std::vector<Tensor4<Scalar>*> out;
  for_each_trainable(params, [&](const std::string&, Tensor4<Scalar>& t, ParamRole) {
    out.push_back(&t);
  });
  return out;
}

template <typename Scalar>
std::vector<std::string> trainable_names(const ModelParams<Scalar>& params) {
  std::vector<std::string> out;
  for_each_trainable(params, [&](const std::string& name, const Tensor4<Scalar>&, ParamRole) {
    out.push_back(name);
  });
  return out;
}

/// Counts the learnable entries actually allocated (excluding gamma/beta).
template <typename Scalar>
std::int64_t count_learnable(const ModelParams<Scalar>& params) {
  std::int64_t total = 0;
  for_each_trainable(params, [&](const std::string&, const Tensor4<Scalar>& t, ParamRole role) {
    if (role != ParamRole::Norm) total += t.size();
  });
  return total;
}

/// Initialization scales. Bottom-up kernels use sigma = bottom_up_scale / k,
/// every other weight sigma = other_sigma; both truncated at +-truncation
/// sigma. Biases start at 0, gamma at 1, beta at 0.
struct InitOptions {
  double bottom_up_scale = 2.0;
  double other_sigma = 0.1;
  double truncation = 2.0;
};

template <typename Scalar>
ModelParams<Scalar> build(const ArchitectureSpec& spec, std::uint64_t seed,
                          const InitOptions& init = {}) {
  spec.validate();
  const Index f = spec.features;
  const Index k = spec.kernel;
  ModelParams<Scalar> p;
  p.spec = spec;
  const Index inputs[2] = {spec.in_channels, f};
  for (int l = 0; l < 2; ++l) {
    auto& layer = p.layers[static_cast<std::size_t>(l)];
    layer.bottom_up = ConvWeights<Scalar>::zeros(f, inputs[l], k, f);
    if (spec.lateral) layer.lateral = ConvWeights<Scalar>::zeros(f, f, k, f);
    if (spec.topdown && l == 0) layer.topdown = ConvWeights<Scalar>::zeros(f, f, k, f);
    layer.gamma = Tensor4<Scalar>::Constant({1, f, 1, 1}, Scalar(1));
    layer.beta = Tensor4<Scalar>({1, f, 1, 1});
    layer.running.assign(static_cast<std::size_t>(spec.time_steps), RunningStats<Scalar>{});
  }
  p.readout_weights = Tensor4<Scalar>({1, 1, f, spec.classes});
  p.readout_bias = Tensor4<Scalar>({1, spec.classes, 1, 1});

  Rng rng(seed);
  const double bottom_up_sigma = init.bottom_up_scale / static_cast<double>(spec.kernel);
  for_each_trainable(p, [&](const std::string&, Tensor4<Scalar>& t, ParamRole role) {
    double sigma = 0;
    switch (role) {
      case ParamRole::BottomUp: sigma = bottom_up_sigma; break;
      case ParamRole::Lateral:
      case ParamRole::TopDown:
      case ParamRole::Readout: sigma = init.other_sigma; break;
      case ParamRole::Bias:
      case ParamRole::Norm: return;
    }
    for (Index i = 0; i < t.size(); ++i) {
      t[i] = static_cast<Scalar>(rng.truncated_normal(sigma, init.truncation));
    }
  });
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& src) {
  ModelParams<To> dst;
  dst.spec = src.spec;
  auto cast_conv = [](const ConvWeights<From>& w) {
    return ConvWeights<To>{w.kernel.template cast<To>(), w.bias.template cast<To>()};
  };
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& s = src.layers[l];
    auto& d = dst.layers[l];
    d.bottom_up = cast_conv(s.bottom_up);
    if (s.lateral) d.lateral = cast_conv(*s.lateral);
    if (s.topdown) d.topdown = cast_conv(*s.topdown);
    d.gamma = s.gamma.template cast<To>();
    d.beta = s.beta.template cast<To>();
    for (const auto& r : s.running) {
      d.running.push_back({r.mean.template cast<To>(), r.var.template cast<To>(), r.initialized});
    }
  }
  dst.readout_weights = src.readout_weights.template cast<To>();
  dst.readout_bias = src.readout_bias.template cast<To>();
  return dst;
}

/// Handles produced by one recorded forward pass.
struct ForwardPass {
  std::vector<Var> parameters;  // aligned with trainable()
  std::vector<Var> hidden1;
  std::vector<Var> hidden2;
  std::vector<Var> logits;
  std::vector<Var> probabilities;
};

struct ForwardOptions {
  BatchNormOptions batchnorm{};
  LrnParams lrn{};
};

/// Records the unrolled model on `tape`. Train mode normalizes with batch
/// statistics and updates the per-step running statistics in `params`.
template <typename Scalar>
ForwardPass forward(GradientTape<Scalar>& tape, ModelParams<Scalar>& params,
                    const Tensor4<Scalar>& batch, Mode mode, const ForwardOptions& options = {}) {
  const ArchitectureSpec& spec = params.spec;
  const Shape& in = batch.shape();
  if (in.c != spec.in_channels || in.h % 2 != 0 || in.w % 2 != 0 || in.h < 2 || in.w < 2) {
    throw ShapeError("forward: batch " + in.str() + " does not fit model " + spec.name + " with " +
                     std::to_string(spec.in_channels) + " input channels");
  }

  ForwardPass pass;
  for (Tensor4<Scalar>* t : trainable(params)) pass.parameters.push_back(tape.parameter(*t));
  std::size_t next = 0;
  auto take = [&] { return pass.parameters[next++]; };
  struct ConvVars {
    Var kernel, bias;
  };
  struct LayerVars {
    ConvVars bottom_up;
    std::optional<ConvVars> lateral, topdown;
    Var gamma, beta;
  };
  std::array<LayerVars, 2> lv;
  for (std::size_t l = 0; l < 2; ++l) {
    lv[l].bottom_up = {take(), take()};
    if (params.layers[l].lateral) lv[l].lateral = ConvVars{take(), take()};
    if (params.layers[l].topdown) lv[l].topdown = ConvVars{take(), take()};
    lv[l].gamma = take();
    lv[l].beta = take();
  }
  const Var readout_w = take();
  const Var readout_b = take();

  auto hidden_output = [&](Var z, std::size_t l, int t) {
    auto& stats = params.layers[l].running[static_cast<std::size_t>(t)];
    Var a = batchnorm(tape, z, lv[l].gamma, lv[l].beta, mode, stats, options.batchnorm);
    return lrn(tape, relu(tape, a), options.lrn);
  };

  const Var image = tape.constant(batch);
  Var h1_prev, h2_prev;
  for (int t = 0; t < spec.time_steps; ++t) {
    Var z1 = conv2d_same(tape, image, lv[0].bottom_up.kernel, lv[0].bottom_up.bias);
    if (t > 0 && lv[0].lateral) {
      z1 = add(tape, z1, conv2d_same(tape, h1_prev, lv[0].lateral->kernel, lv[0].lateral->bias));
    }
    if (t > 0 && lv[0].topdown) {
      z1 = add(tape, z1,
               transposed_conv2d_x2(tape, h2_prev, lv[0].topdown->kernel, lv[0].topdown->bias));
    }
    const Var h1 = hidden_output(z1, 0, t);

    Var z2 = conv2d_same(tape, maxpool_2x2(tape, h1), lv[1].bottom_up.kernel, lv[1].bottom_up.bias);
    if (t > 0 && lv[1].lateral) {
      z2 = add(tape, z2, conv2d_same(tape, h2_prev, lv[1].lateral->kernel, lv[1].lateral->bias));
    }
    const Var h2 = hidden_output(z2, 1, t);

    const Var logits = dense(tape, global_maxpool(tape, h2), readout_w, readout_b);
    pass.hidden1.push_back(h1);
    pass.hidden2.push_back(h2);
    pass.logits.push_back(logits);
    pass.probabilities.push_back(softmax(tape, logits));
    h1_prev = h1;
    h2_prev = h2;
  }
  return pass;
}

/// Sum over time steps of the per-step cross-entropy, averaged over the batch.
template <typename Scalar>
Var time_summed_loss(GradientTape<Scalar>& tape, const ForwardPass& pass,
                     const Tensor4<Scalar>& one_hot) {
  const Var labels = tape.constant(one_hot);
  Var total;
  for (Var p : pass.probabilities) {
    const Var step = cross_entropy(tape, p, labels);
    total = total.valid() ? add(tape, total, step) : step;
  }
  return total;
}

template <typename Scalar>
struct UnrolledTrace {
  std::vector<Tensor4<Scalar>> hidden1;
  std::vector<Tensor4<Scalar>> hidden2;
  std::vector<Tensor4<Scalar>> logits;
  std::vector<Tensor4<Scalar>> probabilities;

  std::size_t steps() const { return probabilities.size(); }
};

template <typename Scalar>
UnrolledTrace<Scalar> collect_trace(const GradientTape<Scalar>& tape, const ForwardPass& pass,
                                    bool with_hidden = true) {
  UnrolledTrace<Scalar> trace;
  for (std::size_t t = 0; t < pass.probabilities.size(); ++t) {
    if (with_hidden) {
      trace.hidden1.push_back(tape.value(pass.hidden1[t]));
      trace.hidden2.push_back(tape.value(pass.hidden2[t]));
    }
    trace.logits.push_back(tape.value(pass.logits[t]));
    trace.probabilities.push_back(tape.value(pass.probabilities[t]));
  }
  return trace;
}

/// Convenience wrapper: records a pass on a scratch tape and returns values.
template <typename Scalar>
UnrolledTrace<Scalar> run(ModelParams<Scalar>& params, const Tensor4<Scalar>& batch, Mode mode,
                          bool with_hidden = true, const ForwardOptions& options = {}) {
  GradientTape<Scalar> tape;
  const ForwardPass pass = forward(tape, params, batch, mode, options);
  return collect_trace(tape, pass, with_hidden);
}

/// Index of the largest entry of each row; ties go to the lowest index.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor4<Scalar>& scores) {
  auto m = scores.rows();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index n = 0; n < m.rows(); ++n) {
    Index best = 0;
    for (Index i = 1; i < m.cols(); ++i) {
      if (m(n, i) > m(n, best)) best = i;
    }
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

/// Prediction from the final unrolled step.
template <typename Scalar>
std::vector<int> readout(const UnrolledTrace<Scalar>& trace) {
  if (trace.probabilities.empty()) throw std::invalid_argument("readout: empty trace");
  return argmax_rows(trace.probabilities.back());
}

/// Sum of all lateral and top-down kernel entries (biases excluded).
template <typename Scalar>
double recurrent_weight_sum(const ModelParams<Scalar>& params) {
  if (!params.spec.recurrent()) {
    throw std::invalid_argument("recurrent_weight_sum: model " + params.spec.name +
                                " has no recurrent weights");
  }
  double total = 0;
  for (const auto& layer : params.layers) {
    if (layer.lateral) total += layer.lateral->kernel.data().template cast<double>().sum();
    if (layer.topdown) total += layer.topdown->kernel.data().template cast<double>().sum();
  }
  return total;
}

}  // namespace rcnn
