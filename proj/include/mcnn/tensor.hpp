#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcnn/errors.hpp"

namespace mcnn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major n-dimensional array. Batches use (N, C, H, W) order.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> values);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<size_t>(i)]; }

  ArrayMap array() { return ArrayMap(data_.data(), size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), size()); }

  // View as a rows x cols matrix; rows * cols must equal size().
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;
  // Leading dimension kept, remaining dimensions flattened.
  MatrixMap flat2d() { return matrix(dim(0), size() / dim(0)); }
  ConstMatrixMap flat2d() const { return matrix(dim(0), size() / dim(0)); }

  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;
  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    for (Index i = 0; i < size(); ++i) out[i] = static_cast<Other>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  // Eigen's vectorised reductions peel according to pointer alignment, so
  // buffers need a fixed alignment for runs to be bit-reproducible.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Output extent of a sliding window; throws DimensionError when < 1.
Index window_output_size(Index in, Index kernel, Index stride, Index pad);

struct ConvWindow {
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index pad = 0;
};

/// Lowers a C x H x W image to a (C*kh*kw) x (Ho*Wo) matrix. Column j is the
/// receptive field of output position j, channel-major then row-major within
/// the patch. Padding contributes zeros.
template <typename Scalar>
Tensor<Scalar> im2col(const Tensor<Scalar>& input, const ConvWindow& window);

// Raw-buffer forms used by the batched convolution. `ld` is the row stride of
// the column matrix and `col_offset` the first column written.
template <typename Scalar>
void im2col_into(const Scalar* image, Index channels, Index height, Index width,
                 const ConvWindow& window, Scalar* cols, Index ld, Index col_offset);
template <typename Scalar>
void col2im_add(const Scalar* cols, Index ld, Index col_offset, Index channels, Index height,
                Index width, const ConvWindow& window, Scalar* image);

struct InitScheme {
  enum class Kind { XavierUniform, Gaussian, Zeros };
  Kind kind = Kind::XavierUniform;
  double sigma = 0.01;

  static InitScheme xavier_uniform() { return {Kind::XavierUniform, 0.0}; }
  static InitScheme gaussian(double sigma) { return {Kind::Gaussian, sigma}; }
  static InitScheme zeros() { return {Kind::Zeros, 0.0}; }
  // Accepts "xavier_uniform", "zeros", "gaussian(0.01)".
  static InitScheme parse(std::string_view text);
};

// Fan-in/out for weight shapes [out, in] or [out, in, kh, kw].
std::pair<Index, Index> fans(const Shape& shape);

template <typename Scalar>
Tensor<Scalar> rand_init(const Shape& shape, const InitScheme& scheme, std::uint64_t seed);

}  // namespace mcnn
