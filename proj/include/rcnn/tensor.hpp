#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rcnn {

using Index = Eigen::Index;

// Error categories. The CLI maps them onto distinct exit codes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extent of a rank-4 tensor in (batch, channel, row, column) order.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  Index sample() const { return c * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
  }
};

/// Dense row-major NCHW array. Storage is an Eigen column vector so that the
/// whole tensor, a sample, or a (channel x pixel) slab can be viewed as an
/// Eigen expression without copying.
template <typename Scalar>
class Tensor4 {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor4() = default;

  explicit Tensor4(Shape shape) : shape_(shape), data_(Storage::Zero(shape.size())) {
    check_extent(shape);
  }

  Tensor4(Shape shape, Storage data) : shape_(shape), data_(std::move(data)) {
    check_extent(shape);
    if (data_.size() != shape.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor4 Zero(Shape shape) { return Tensor4(shape); }

  static Tensor4 Constant(Shape shape, Scalar value) {
    return Tensor4(shape, Storage::Constant(shape.size(), value));
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data_[offset(n, c, h, w)];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data_[offset(n, c, h, w)];
  }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar* sample_ptr(Index n) { return data_.data() + n * shape_.sample(); }
  const Scalar* sample_ptr(Index n) const { return data_.data() + n * shape_.sample(); }
  Scalar* plane_ptr(Index n, Index c) { return sample_ptr(n) + c * shape_.plane(); }
  const Scalar* plane_ptr(Index n, Index c) const {
    return sample_ptr(n) + c * shape_.plane();
  }

  // Sample n viewed as a (channels x pixels) matrix.
  MatrixMap sample_matrix(Index n) {
    return MatrixMap(sample_ptr(n), shape_.c, shape_.plane());
  }
  ConstMatrixMap sample_matrix(Index n) const {
    return ConstMatrixMap(sample_ptr(n), shape_.c, shape_.plane());
  }

  // Whole tensor as (n x c*h*w).
  MatrixMap rows() { return MatrixMap(ptr(), shape_.n, shape_.sample()); }
  ConstMatrixMap rows() const { return ConstMatrixMap(ptr(), shape_.n, shape_.sample()); }

  // Last two axes as a matrix, for tensors shaped (1, 1, rows, cols).
  MatrixMap matrix() { return MatrixMap(ptr(), shape_.n * shape_.c * shape_.h, shape_.w); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(ptr(), shape_.n * shape_.c * shape_.h, shape_.w);
  }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor4<Other> cast() const {
    return Tensor4<Other>(shape_, data_.template cast<Other>());
  }

 private:
  static void check_extent(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("negative extent in shape " + s.str());
    }
  }

  Shape shape_{};
  Storage data_{};
};

using Tensor = Tensor4<float>;

template <typename Scalar>
void require_same_shape(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace rcnn
