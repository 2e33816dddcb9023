#pragma once

// Test-only helpers: random tensors, scalar-loop oracles and a central
// finite-difference gradient checker that never touches backward kernels.

#include "rcnn/tape.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace rcnn::testing {

template <typename Scalar = double>
Tensor4<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor4<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

// Direct nested-loop convolution with zero padding, any stride; output is
// ceil(H / stride) x ceil(W / stride). Kernel (K, C, k, k).
inline Tensor4<double> direct_conv(const Tensor4<double>& x, const Tensor4<double>& kernel,
                                   const std::vector<double>& bias, Index stride = 1) {
  const Shape& s = x.shape();
  const Index K = kernel.shape().n;
  const Index k = kernel.shape().h;
  const Index pad = (k - 1) / 2;
  const Index oh = (s.h + stride - 1) / stride;
  const Index ow = (s.w + stride - 1) / stride;
  Tensor4<double> out({s.n, K, oh, ow});
  for (Index n = 0; n < s.n; ++n)
    for (Index o = 0; o < K; ++o)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
          for (Index c = 0; c < s.c; ++c)
            for (Index dy = 0; dy < k; ++dy)
              for (Index dx = 0; dx < k; ++dx) {
                const Index iy = y * stride + dy - pad;
                const Index ix = xx * stride + dx - pad;
                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                acc += kernel(o, c, dy, dx) * x(n, c, iy, ix);
              }
          out(n, o, y, xx) = acc;
        }
  return out;
}

inline double inner(const Tensor4<double>& a, const Tensor4<double>& b) {
  return a.data().dot(b.data());
}

// Relative error with a denominator floor, so that two gradients that are
// both numerically zero compare equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

using GraphBuilder = std::function<Var(GradientTape<double>&, const std::vector<Var>&)>;

struct GradientCheck {
  double max_relative_error = 0;
  std::size_t checked = 0;
};

// Compares tape gradients of a scalar graph against central differences for
// every entry of every input.
inline GradientCheck check_gradients(std::vector<Tensor4<double>> inputs,
                                     const GraphBuilder& build, double h = 1e-3,
                                     double tol = 1e-3) {
  auto evaluate = [&](const std::vector<Tensor4<double>>& xs) {
    GradientTape<double> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.parameter(x));
    return tape.value(build(tape, vars))[0];
  };

  GradientTape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  tape.backward(build(tape, vars));

  GradientCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor4<double> analytic = tape.grad(vars[i]);
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = evaluate(inputs);
      inputs[i][j] = saved - h;
      const double down = evaluate(inputs);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[j], numeric);
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.checked;
      EXPECT_LT(err, tol) << "input " << i << " entry " << j << ": analytic " << analytic[j]
                          << " numeric " << numeric;
    }
  }
  return result;
}

// Scalar probe sum(weights * y) that makes every output entry matter.
inline Var probe(GradientTape<double>& tape, Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Var w = tape.constant(random_tensor(tape.value(y).shape(), rng));
  Tensor4<double> prod(tape.value(y).shape(),
                       tape.value(y).data().cwiseProduct(tape.value(w).data()));
  const Var weighted =
      tape.record(std::move(prod), {y}, [=](GradientTape<double>& t, Var, const Tensor4<double>& g) {
        if (auto* gy = t.grad_target(y)) gy->data() += g.data().cwiseProduct(t.value(w).data());
      });
  return sum(tape, weighted);
}

}  // namespace rcnn::testing
