#pragma once

// Forward and backward kernels for every operator used by the recurrent
// convolutional models. Backward kernels accumulate (+=) into the gradient
// tensors they are handed, so shared inputs sum their contributions.

#include "rcnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace rcnn {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Kernel (out-features, in-features, k, k) and per-output-map bias stored
/// as a (1, out-features, 1, 1) tensor.
///
/// Transposed convolutions use the layout of the strided convolution they are
/// the adjoint of: (in-features, out-features, k, k).
template <typename Scalar>
struct ConvWeights {
  Tensor4<Scalar> kernel;
  Tensor4<Scalar> bias;

  Index kernel_size() const { return kernel.shape().h; }

  static ConvWeights zeros(Index rows, Index cols, Index k, Index bias_len) {
    return {Tensor4<Scalar>({rows, cols, k, k}), Tensor4<Scalar>({1, bias_len, 1, 1})};
  }
};

enum class Mode { Train, Eval };

namespace detail {

template <typename Scalar>
using RowMatrix = typename Tensor4<Scalar>::RowMatrix;

inline void require_odd_square(const Shape& kernel, const char* what) {
  if (kernel.h != kernel.w || kernel.h % 2 == 0) {
    throw ShapeError(std::string(what) + ": kernel must be square with odd size, got " +
                     kernel.str());
  }
}

inline void require_bias(const Shape& bias, Index len, const char* what) {
  if (bias.size() != len) {
    throw ShapeError(std::string(what) + ": bias " + bias.str() + " does not have " +
                     std::to_string(len) + " entries");
  }
}

// Gathers the k x k neighbourhood of every output position of a (C, H, W)
// image into a (C*k*k) x (out_h*out_w) row-major matrix. Taps that fall
// outside the image read zero (same padding of (k-1)/2).
template <typename Scalar>
void im2col(const Scalar* image, Index channels, Index height, Index width, Index k,
            Index stride, Index out_h, Index out_w, Scalar* col) {
  const Index pad = (k - 1) / 2;
  const Index cols = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = image + c * height * width;
    for (Index dy = 0; dy < k; ++dy) {
      for (Index dx = 0; dx < k; ++dx) {
        Scalar* row = col + ((c * k + dy) * k + dx) * cols;
        for (Index oy = 0; oy < out_h; ++oy) {
          Scalar* dst = row + oy * out_w;
          const Index iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * width;
          if (stride == 1) {
            // Valid taps form the contiguous run ox in [lo, hi).
            const Index lo = std::clamp<Index>(pad - dx, 0, out_w);
            const Index hi = std::clamp<Index>(width + pad - dx, lo, out_w);
            std::fill(dst, dst + lo, Scalar(0));
            std::copy(src + lo + dx - pad, src + hi + dx - pad, dst + lo);
            std::fill(dst + hi, dst + out_w, Scalar(0));
            continue;
          }
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + dx - pad;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds every column entry back onto its tap.
template <typename Scalar>
void col2im(const Scalar* col, Index channels, Index height, Index width, Index k,
            Index stride, Index out_h, Index out_w, Scalar* image) {
  const Index pad = (k - 1) / 2;
  const Index cols = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = image + c * height * width;
    for (Index dy = 0; dy < k; ++dy) {
      for (Index dx = 0; dx < k; ++dx) {
        const Scalar* row = col + ((c * k + dy) * k + dx) * cols;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= height) continue;
          const Scalar* src = row + oy * out_w;
          Scalar* dst = plane + iy * width;
          if (stride == 1) {
            const Index lo = std::clamp<Index>(pad - dx, 0, out_w);
            const Index hi = std::clamp<Index>(width + pad - dx, lo, out_w);
            for (Index ox = lo; ox < hi; ++ox) dst[ox + dx - pad] += src[ox];
            continue;
          }
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + dx - pad;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void add_channel_bias(Tensor4<Scalar>& out, const Tensor4<Scalar>& bias) {
  const Eigen::Map<const Vector<Scalar>> b(bias.ptr(), out.shape().c);
  for (Index n = 0; n < out.shape().n; ++n) out.sample_matrix(n).colwise() += b;
}

template <typename Scalar>
void accumulate_channel_sums(const Tensor4<Scalar>& grad_out, Tensor4<Scalar>& grad_bias) {
  Eigen::Map<Vector<Scalar>> gb(grad_bias.ptr(), grad_out.shape().c);
  for (Index n = 0; n < grad_out.shape().n; ++n) gb += grad_out.sample_matrix(n).rowwise().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

/// Stride-1 convolution with zero padding (k-1)/2, output (N, K, H, W).
template <typename Scalar>
Tensor4<Scalar> conv2d_same(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernel,
                            const Tensor4<Scalar>& bias) {
  const Shape& in = input.shape();
  const Shape& ks = kernel.shape();
  detail::require_odd_square(ks, "conv2d_same");
  if (in.c != ks.c) {
    throw ShapeError("conv2d_same: input " + in.str() + " incompatible with kernel " + ks.str());
  }
  detail::require_bias(bias.shape(), ks.n, "conv2d_same");

  const Index k = ks.h;
  const Index patch = ks.c * k * k;
  Tensor4<Scalar> out({in.n, ks.n, in.h, in.w});
  detail::RowMatrix<Scalar> col(patch, in.plane());
  const typename Tensor4<Scalar>::ConstMatrixMap weights(kernel.ptr(), ks.n, patch);
  for (Index n = 0; n < in.n; ++n) {
    detail::im2col(input.sample_ptr(n), in.c, in.h, in.w, k, 1, in.h, in.w, col.data());
    out.sample_matrix(n).noalias() = weights * col;
  }
  detail::add_channel_bias(out, bias);
  return out;
}

template <typename Scalar>
Tensor4<Scalar> conv2d_same(const Tensor4<Scalar>& input, const ConvWeights<Scalar>& w) {
  return conv2d_same(input, w.kernel, w.bias);
}

/// Accumulates gradients of conv2d_same; any output pointer may be null.
template <typename Scalar>
void conv2d_same_backward(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernel,
                          const Tensor4<Scalar>& grad_out, Tensor4<Scalar>* grad_input,
                          Tensor4<Scalar>* grad_kernel, Tensor4<Scalar>* grad_bias) {
  const Shape& in = input.shape();
  const Shape& ks = kernel.shape();
  const Index k = ks.h;
  const Index patch = ks.c * k * k;
  detail::RowMatrix<Scalar> col(patch, in.plane());
  detail::RowMatrix<Scalar> dcol;
  const typename Tensor4<Scalar>::ConstMatrixMap weights(kernel.ptr(), ks.n, patch);
  for (Index n = 0; n < in.n; ++n) {
    const auto g = grad_out.sample_matrix(n);
    if (grad_kernel != nullptr) {
      detail::im2col(input.sample_ptr(n), in.c, in.h, in.w, k, 1, in.h, in.w, col.data());
      typename Tensor4<Scalar>::MatrixMap gk(grad_kernel->ptr(), ks.n, patch);
      gk.noalias() += g * col.transpose();
    }
    if (grad_input != nullptr) {
      dcol.noalias() = weights.transpose() * g;
      detail::col2im(dcol.data(), in.c, in.h, in.w, k, 1, in.h, in.w,
                     grad_input->sample_ptr(n));
    }
  }
  if (grad_bias != nullptr) detail::accumulate_channel_sums(grad_out, *grad_bias);
}

/// Stride-2 convolution with same padding: (N, C, 2H, 2W) -> (N, K, H, W).
/// Kernel layout (K, C, k, k). No bias.
template <typename Scalar>
Tensor4<Scalar> conv2d_stride2(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernel) {
  const Shape& in = input.shape();
  const Shape& ks = kernel.shape();
  detail::require_odd_square(ks, "conv2d_stride2");
  if (in.c != ks.c || in.h % 2 != 0 || in.w % 2 != 0) {
    throw ShapeError("conv2d_stride2: input " + in.str() + " incompatible with kernel " +
                     ks.str());
  }
  const Index k = ks.h;
  const Index oh = in.h / 2;
  const Index ow = in.w / 2;
  const Index patch = ks.c * k * k;
  Tensor4<Scalar> out({in.n, ks.n, oh, ow});
  detail::RowMatrix<Scalar> col(patch, oh * ow);
  const typename Tensor4<Scalar>::ConstMatrixMap weights(kernel.ptr(), ks.n, patch);
  for (Index n = 0; n < in.n; ++n) {
    detail::im2col(input.sample_ptr(n), in.c, in.h, in.w, k, 2, oh, ow, col.data());
    out.sample_matrix(n).noalias() = weights * col;
  }
  return out;
}

/// Transposed convolution with output stride 2: (N, C, H, W) -> (N, K, 2H, 2W).
/// Kernel layout (C, K, k, k), i.e. the adjoint of conv2d_stride2 with the
/// same kernel tensor. Bias has K entries.
template <typename Scalar>
Tensor4<Scalar> transposed_conv2d_x2(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernel,
                                     const Tensor4<Scalar>& bias) {
  const Shape& in = input.shape();
  const Shape& ks = kernel.shape();
  detail::require_odd_square(ks, "transposed_conv2d_x2");
  if (in.c != ks.n) {
    throw ShapeError("transposed_conv2d_x2: input " + in.str() + " incompatible with kernel " +
                     ks.str());
  }
  detail::require_bias(bias.shape(), ks.c, "transposed_conv2d_x2");

  const Index k = ks.h;
  const Index oh = in.h * 2;
  const Index ow = in.w * 2;
  const Index patch = ks.c * k * k;
  Tensor4<Scalar> out({in.n, ks.c, oh, ow});
  detail::RowMatrix<Scalar> col(patch, in.plane());
  const typename Tensor4<Scalar>::ConstMatrixMap weights(kernel.ptr(), ks.n, patch);
  for (Index n = 0; n < in.n; ++n) {
    col.noalias() = weights.transpose() * input.sample_matrix(n);
    detail::col2im(col.data(), ks.c, oh, ow, k, 2, in.h, in.w, out.sample_ptr(n));
  }
  detail::add_channel_bias(out, bias);
  return out;
}

template <typename Scalar>
Tensor4<Scalar> transposed_conv2d_x2(const Tensor4<Scalar>& input, const ConvWeights<Scalar>& w) {
  return transposed_conv2d_x2(input, w.kernel, w.bias);
}

template <typename Scalar>
void transposed_conv2d_x2_backward(const Tensor4<Scalar>& input, const Tensor4<Scalar>& kernel,
                                   const Tensor4<Scalar>& grad_out, Tensor4<Scalar>* grad_input,
                                   Tensor4<Scalar>* grad_kernel, Tensor4<Scalar>* grad_bias) {
  const Shape& in = input.shape();
  const Shape& ks = kernel.shape();
  const Index k = ks.h;
  const Index patch = ks.c * k * k;
  const Shape& go = grad_out.shape();
  detail::RowMatrix<Scalar> col(patch, in.plane());
  const typename Tensor4<Scalar>::ConstMatrixMap weights(kernel.ptr(), ks.n, patch);
  for (Index n = 0; n < in.n; ++n) {
    detail::im2col(grad_out.sample_ptr(n), go.c, go.h, go.w, k, 2, in.h, in.w, col.data());
    if (grad_input != nullptr) grad_input->sample_matrix(n).noalias() += weights * col;
    if (grad_kernel != nullptr) {
      typename Tensor4<Scalar>::MatrixMap gk(grad_kernel->ptr(), ks.n, patch);
      gk.noalias() += input.sample_matrix(n) * col.transpose();
    }
  }
  if (grad_bias != nullptr) detail::accumulate_channel_sums(grad_out, *grad_bias);
}

// ---------------------------------------------------------------------------
// Pooling

template <typename Scalar>
struct PoolResult {
  Tensor4<Scalar> output;
  std::vector<Index> argmax;  // flat input offset of each output's winner
};

/// Disjoint 2x2 windows with stride 2. Ties go to the first element in
/// row-major window order.
template <typename Scalar>
PoolResult<Scalar> maxpool_2x2(const Tensor4<Scalar>& input) {
  const Shape& in = input.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw ShapeError("maxpool_2x2: spatial extent must be even, got " + in.str());
  }
  PoolResult<Scalar> r{Tensor4<Scalar>({in.n, in.c, in.h / 2, in.w / 2}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.output.size()));
  Index o = 0;
  for (Index n = 0; n < in.n; ++n) {
    for (Index c = 0; c < in.c; ++c) {
      for (Index y = 0; y < in.h; y += 2) {
        for (Index x = 0; x < in.w; x += 2) {
          Index best = input.offset(n, c, y, x);
          for (Index off : {input.offset(n, c, y, x + 1), input.offset(n, c, y + 1, x),
                            input.offset(n, c, y + 1, x + 1)}) {
            if (input[off] > input[best]) best = off;
          }
          r.output[o] = input[best];
          r.argmax[static_cast<std::size_t>(o)] = best;
          ++o;
        }
      }
    }
  }
  return r;
}

/// Max over all spatial positions of each feature map: (N, C, 1, 1).
template <typename Scalar>
PoolResult<Scalar> global_maxpool(const Tensor4<Scalar>& input) {
  const Shape& in = input.shape();
  if (in.h < 1 || in.w < 1) throw ShapeError("global_maxpool: empty spatial extent " + in.str());
  PoolResult<Scalar> r{Tensor4<Scalar>({in.n, in.c, 1, 1}), {}};
  r.argmax.resize(static_cast<std::size_t>(in.n * in.c));
  for (Index n = 0; n < in.n; ++n) {
    for (Index c = 0; c < in.c; ++c) {
      const Scalar* p = input.plane_ptr(n, c);
      const Index best = std::max_element(p, p + in.plane()) - p;
      const Index o = n * in.c + c;
      r.output[o] = p[best];
      r.argmax[static_cast<std::size_t>(o)] = input.offset(n, c, 0, 0) + best;
    }
  }
  return r;
}

template <typename Scalar>
void pool_backward(const std::vector<Index>& argmax, const Tensor4<Scalar>& grad_out,
                   Tensor4<Scalar>& grad_input) {
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    grad_input[argmax[i]] += grad_out[static_cast<Index>(i)];
  }
}

// ---------------------------------------------------------------------------
// Fully connected readout

/// Input is flattened per sample to (N, D); weights are a (1, 1, D, M) tensor,
/// bias (1, M, 1, 1). Output (N, M, 1, 1).
template <typename Scalar>
Tensor4<Scalar> dense(const Tensor4<Scalar>& input, const Tensor4<Scalar>& weights,
                      const Tensor4<Scalar>& bias) {
  const Shape& in = input.shape();
  const Shape& ws = weights.shape();
  if (ws.n != 1 || ws.c != 1 || in.sample() != ws.h) {
    throw ShapeError("dense: input " + in.str() + " incompatible with weights " + ws.str());
  }
  detail::require_bias(bias.shape(), ws.w, "dense");
  Tensor4<Scalar> out({in.n, ws.w, 1, 1});
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(bias.ptr(), ws.w);
  out.rows().noalias() = input.rows() * weights.matrix();
  out.rows().rowwise() += b;
  return out;
}

template <typename Scalar>
void dense_backward(const Tensor4<Scalar>& input, const Tensor4<Scalar>& weights,
                    const Tensor4<Scalar>& grad_out, Tensor4<Scalar>* grad_input,
                    Tensor4<Scalar>* grad_weights, Tensor4<Scalar>* grad_bias) {
  if (grad_weights != nullptr) {
    grad_weights->matrix().noalias() += input.rows().transpose() * grad_out.rows();
  }
  if (grad_bias != nullptr) {
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gb(grad_bias->ptr(), grad_out.shape().c);
    gb += grad_out.rows().colwise().sum();
  }
  if (grad_input != nullptr) {
    grad_input->rows().noalias() += grad_out.rows() * weights.matrix().transpose();
  }
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename Scalar>
struct RunningStats {
  Vector<Scalar> mean;
  Vector<Scalar> var;
  bool initialized = false;
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

template <typename Scalar>
struct BatchNormCache {
  Tensor4<Scalar> normalized;
  Vector<Scalar> inv_std;
  Mode mode = Mode::Train;
};

/// Per-feature-map normalization over batch and spatial axes. gamma/beta are
/// (1, C, 1, 1). Train mode uses batch statistics and updates `running` by an
/// exponential moving average; eval mode reads `running`.
template <typename Scalar>
Tensor4<Scalar> batchnorm(const Tensor4<Scalar>& input, const Tensor4<Scalar>& gamma,
                          const Tensor4<Scalar>& beta, Mode mode, RunningStats<Scalar>& running,
                          BatchNormCache<Scalar>* cache = nullptr,
                          const BatchNormOptions& options = {}) {
  const Shape& in = input.shape();
  detail::require_bias(gamma.shape(), in.c, "batchnorm gamma");
  detail::require_bias(beta.shape(), in.c, "batchnorm beta");
  const Index count = in.n * in.plane();
  const Scalar eps = static_cast<Scalar>(options.epsilon);

  Vector<Scalar> mean(in.c);
  Vector<Scalar> var(in.c);
  if (mode == Mode::Train) {
    if (count < 2) {
      throw ShapeError("batchnorm: train mode needs at least 2 values per feature map, got " +
                       in.str());
    }
    for (Index c = 0; c < in.c; ++c) {
      Scalar sum = 0;
      for (Index n = 0; n < in.n; ++n) {
        sum += Eigen::Map<const Vector<Scalar>>(input.plane_ptr(n, c), in.plane()).sum();
      }
      mean[c] = sum / static_cast<Scalar>(count);
      Scalar sq = 0;
      for (Index n = 0; n < in.n; ++n) {
        sq += (Eigen::Map<const Vector<Scalar>>(input.plane_ptr(n, c), in.plane()).array() -
               mean[c])
                  .square()
                  .sum();
      }
      var[c] = sq / static_cast<Scalar>(count);
    }
    const Scalar m = static_cast<Scalar>(options.momentum);
    if (!running.initialized) {
      running.mean = Vector<Scalar>::Zero(in.c);
      running.var = Vector<Scalar>::Ones(in.c);
      running.initialized = true;
    }
    const Scalar unbias = static_cast<Scalar>(count) / static_cast<Scalar>(count - 1);
    running.mean = (Scalar(1) - m) * running.mean + m * mean;
    running.var = (Scalar(1) - m) * running.var + (m * unbias) * var;
  } else {
    if (!running.initialized) throw NumericError("batchnorm: uninitialized running statistics");
    if (running.mean.size() != in.c) {
      throw ShapeError("batchnorm: running statistics have " +
                       std::to_string(running.mean.size()) + " maps, input " + in.str());
    }
    mean = running.mean;
    var = running.var;
  }

  const Vector<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
  Tensor4<Scalar> normalized(in);
  Tensor4<Scalar> out(in);
  for (Index n = 0; n < in.n; ++n) {
    for (Index c = 0; c < in.c; ++c) {
      const Eigen::Map<const Vector<Scalar>> x(input.plane_ptr(n, c), in.plane());
      Eigen::Map<Vector<Scalar>> xhat(normalized.plane_ptr(n, c), in.plane());
      Eigen::Map<Vector<Scalar>> y(out.plane_ptr(n, c), in.plane());
      xhat.array() = (x.array() - mean[c]) * inv_std[c];
      y.array() = gamma[c] * xhat.array() + beta[c];
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
    cache->mode = mode;
  }
  return out;
}

template <typename Scalar>
void batchnorm_backward(const BatchNormCache<Scalar>& cache, const Tensor4<Scalar>& gamma,
                        const Tensor4<Scalar>& grad_out, Tensor4<Scalar>* grad_input,
                        Tensor4<Scalar>* grad_gamma, Tensor4<Scalar>* grad_beta) {
  const Shape& s = grad_out.shape();
  const Scalar count = static_cast<Scalar>(s.n * s.plane());
  for (Index c = 0; c < s.c; ++c) {
    Scalar sum_g = 0;
    Scalar sum_gx = 0;
    for (Index n = 0; n < s.n; ++n) {
      const Eigen::Map<const Vector<Scalar>> g(grad_out.plane_ptr(n, c), s.plane());
      const Eigen::Map<const Vector<Scalar>> xhat(cache.normalized.plane_ptr(n, c), s.plane());
      sum_g += g.sum();
      sum_gx += g.dot(xhat);
    }
    if (grad_gamma != nullptr) (*grad_gamma)[c] += sum_gx;
    if (grad_beta != nullptr) (*grad_beta)[c] += sum_g;
    if (grad_input == nullptr) continue;
    const Scalar scale = gamma[c] * cache.inv_std[c];
    for (Index n = 0; n < s.n; ++n) {
      const Eigen::Map<const Vector<Scalar>> g(grad_out.plane_ptr(n, c), s.plane());
      const Eigen::Map<const Vector<Scalar>> xhat(cache.normalized.plane_ptr(n, c), s.plane());
      Eigen::Map<Vector<Scalar>> gi(grad_input->plane_ptr(n, c), s.plane());
      if (cache.mode == Mode::Train) {
        gi.array() += (scale / count) *
                      (count * g.array() - sum_g - xhat.array() * sum_gx);
      } else {
        gi.array() += scale * g.array();
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise and cross-map nonlinearities

template <typename Scalar>
Tensor4<Scalar> relu(const Tensor4<Scalar>& input) {
  return Tensor4<Scalar>(input.shape(), input.data().cwiseMax(Scalar(0)));
}

template <typename Scalar>
void relu_backward(const Tensor4<Scalar>& output, const Tensor4<Scalar>& grad_out,
                   Tensor4<Scalar>& grad_input) {
  grad_input.data().array() +=
      (output.data().array() > Scalar(0)).select(grad_out.data().array(), Scalar(0));
}

/// Local response normalization across feature maps.
struct LrnParams {
  int size = 5;
  double bias = 1.0;
  double alpha = 1e-4;
  double beta = 0.5;
};

namespace detail {

inline std::pair<Index, Index> lrn_window(Index k, Index maps, int size) {
  return {std::max<Index>(0, k - size / 2), std::min<Index>(maps - 1, k + size / 2)};
}

// d^(-beta) into `out`. beta = 0.5 is the configured value and uses rsqrt.
template <typename Scalar, typename Derived>
void lrn_power(const Eigen::ArrayBase<Derived>& denom, double beta,
               Eigen::Array<Scalar, Eigen::Dynamic, 1>& out) {
  if (beta == 0.5) {
    out = denom.rsqrt();
  } else {
    out = denom.pow(static_cast<Scalar>(-beta));
  }
}

}  // namespace detail

/// y_k = a_k * (c + alpha * sum_{k' in window(k)} a_k'^2)^(-beta), where the
/// window spans size/2 maps either side of k clamped to [0, K-1].
/// `denominator`, if given, receives the bracketed term for the backward pass.
template <typename Scalar>
Tensor4<Scalar> lrn(const Tensor4<Scalar>& input, const LrnParams& params = {},
                    Tensor4<Scalar>* denominator = nullptr) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Shape& s = input.shape();
  Tensor4<Scalar> out(s);
  Tensor4<Scalar> denom(s);
  const Scalar c = static_cast<Scalar>(params.bias);
  const Scalar alpha = static_cast<Scalar>(params.alpha);
  Array squares(s.sample());
  Array acc(s.plane());
  Array scale(s.plane());
  for (Index n = 0; n < s.n; ++n) {
    squares = Eigen::Map<const Array>(input.sample_ptr(n), s.sample()).square();
    for (Index k = 0; k < s.c; ++k) {
      const auto [lo, hi] = detail::lrn_window(k, s.c, params.size);
      acc = squares.segment(lo * s.plane(), s.plane());
      for (Index j = lo + 1; j <= hi; ++j) acc += squares.segment(j * s.plane(), s.plane());
      Eigen::Map<Array> d(denom.plane_ptr(n, k), s.plane());
      d = c + alpha * acc;
      detail::lrn_power(d, params.beta, scale);
      Eigen::Map<Array>(out.plane_ptr(n, k), s.plane()) =
          Eigen::Map<const Array>(input.plane_ptr(n, k), s.plane()) * scale;
    }
  }
  if (denominator != nullptr) *denominator = std::move(denom);
  return out;
}

template <typename Scalar>
void lrn_backward(const Tensor4<Scalar>& input, const Tensor4<Scalar>& output,
                  const Tensor4<Scalar>& denominator, const Tensor4<Scalar>& grad_out,
                  Tensor4<Scalar>& grad_input, const LrnParams& params = {}) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Shape& s = input.shape();
  const Scalar coeff = static_cast<Scalar>(2.0 * params.alpha * params.beta);
  Array t(s.sample());
  Array cross(s.plane());
  Array scale(s.plane());
  for (Index n = 0; n < s.n; ++n) {
    // t_k = g_k * y_k / D_k, the shared factor of the cross-map terms.
    t = Eigen::Map<const Array>(grad_out.sample_ptr(n), s.sample()) *
        Eigen::Map<const Array>(output.sample_ptr(n), s.sample()) /
        Eigen::Map<const Array>(denominator.sample_ptr(n), s.sample());
    for (Index j = 0; j < s.c; ++j) {
      const auto [lo, hi] = detail::lrn_window(j, s.c, params.size);
      cross = t.segment(lo * s.plane(), s.plane());
      for (Index k = lo + 1; k <= hi; ++k) cross += t.segment(k * s.plane(), s.plane());
      const Eigen::Map<const Array> g(grad_out.plane_ptr(n, j), s.plane());
      const Eigen::Map<const Array> a(input.plane_ptr(n, j), s.plane());
      const Eigen::Map<const Array> d(denominator.plane_ptr(n, j), s.plane());
      detail::lrn_power(d, params.beta, scale);
      Eigen::Map<Array>(grad_input.plane_ptr(n, j), s.plane()) += g * scale - coeff * a * cross;
    }
  }
}

// ---------------------------------------------------------------------------
// Softmax readout and the time-summed cross-entropy

/// Row-wise softmax over (N, M, 1, 1) with max subtraction.
template <typename Scalar>
Tensor4<Scalar> softmax(const Tensor4<Scalar>& input) {
  Tensor4<Scalar> out(input.shape());
  auto x = input.rows();
  auto y = out.rows();
  for (Index n = 0; n < x.rows(); ++n) {
    y.row(n) = (x.row(n).array() - x.row(n).maxCoeff()).exp().matrix();
    y.row(n) /= y.row(n).sum();
  }
  return out;
}

template <typename Scalar>
void softmax_backward(const Tensor4<Scalar>& output, const Tensor4<Scalar>& grad_out,
                      Tensor4<Scalar>& grad_input) {
  auto y = output.rows();
  auto g = grad_out.rows();
  auto gi = grad_input.rows();
  for (Index n = 0; n < y.rows(); ++n) {
    const Scalar dot = y.row(n).dot(g.row(n));
    gi.row(n).array() += y.row(n).array() * (g.row(n).array() - dot);
  }
}

inline constexpr double kProbabilityClamp = 1e-7;

template <typename Scalar>
void require_one_hot(const Tensor4<Scalar>& labels) {
  auto y = labels.rows();
  for (Index n = 0; n < y.rows(); ++n) {
    Index ones = 0;
    for (Index i = 0; i < y.cols(); ++i) {
      if (y(n, i) == Scalar(1)) {
        ++ones;
      } else if (y(n, i) != Scalar(0)) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw DataError("label row " + std::to_string(n) + " is not one-hot");
  }
}

/// Binary cross-entropy summed over output units, averaged over the batch:
/// -(1/N) sum_n sum_i [y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7].
template <typename Scalar>
Scalar cross_entropy(const Tensor4<Scalar>& probabilities, const Tensor4<Scalar>& labels) {
  require_same_shape(probabilities, labels, "cross_entropy");
  require_one_hot(labels);
  const Scalar lo = static_cast<Scalar>(kProbabilityClamp);
  const Scalar hi = Scalar(1) - lo;
  const auto p = probabilities.data().array().max(lo).min(hi);
  const auto y = labels.data().array();
  const Scalar total = (y * p.log() + (Scalar(1) - y) * (Scalar(1) - p).log()).sum();
  return -total / static_cast<Scalar>(probabilities.shape().n);
}

template <typename Scalar>
void cross_entropy_backward(const Tensor4<Scalar>& probabilities, const Tensor4<Scalar>& labels,
                            Scalar grad_out, Tensor4<Scalar>& grad_input) {
  const Scalar lo = static_cast<Scalar>(kProbabilityClamp);
  const Scalar hi = Scalar(1) - lo;
  const Scalar scale = -grad_out / static_cast<Scalar>(probabilities.shape().n);
  for (Index i = 0; i < probabilities.size(); ++i) {
    const Scalar p = probabilities[i];
    if (p < lo || p > hi) continue;  // clamp is flat there
    const Scalar y = labels[i];
    grad_input[i] += scale * (y / p - (Scalar(1) - y) / (Scalar(1) - p));
  }
}

}  // namespace rcnn
