#include "mcnn/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

namespace mcnn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  for (Index d : shape)
    if (d < 1) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
}
}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(shape_size(shape_)), fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  check_shape(shape_);
  if (shape_size(shape_) != size())
    throw DimensionError("shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(data_.size()) + " values");
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != size())
    throw DimensionError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) +
                         "x" + std::to_string(cols));
  return MatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size())
    throw DimensionError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) +
                         "x" + std::to_string(cols));
  return ConstMatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
void Tensor<Scalar>::reshape(Shape shape) {
  check_shape(shape);
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename Scalar>
bool Tensor<Scalar>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix(a.dim(0), b.dim(1)).noalias() =
      a.matrix(a.dim(0), a.dim(1)) * b.matrix(b.dim(0), b.dim(1));
  return out;
}

Index window_output_size(Index in, Index kernel, Index stride, Index pad) {
  if (kernel < 1 || stride < 1 || pad < 0)
    throw DimensionError("invalid window: kernel " + std::to_string(kernel) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
  const Index span = in + 2 * pad - kernel;
  if (span < 0)
    throw DimensionError("window " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
  return span / stride + 1;
}

template <typename Scalar>
void im2col_into(const Scalar* image, Index channels, Index height, Index width,
                 const ConvWindow& w, Scalar* cols, Index ld, Index col_offset) {
  const Index out_h = window_output_size(height, w.kernel_h, w.stride, w.pad);
  const Index out_w = window_output_size(width, w.kernel_w, w.stride, w.pad);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < w.kernel_h; ++ky) {
      for (Index kx = 0; kx < w.kernel_w; ++kx) {
        const Index row = (c * w.kernel_h + ky) * w.kernel_w + kx;
        Scalar* dst = cols + row * ld + col_offset;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * w.stride - w.pad + ky;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * w.stride - w.pad + kx;
            const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
            dst[oy * out_w + ox] = inside ? image[(c * height + iy) * width + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, Index ld, Index col_offset, Index channels, Index height,
                Index width, const ConvWindow& w, Scalar* image) {
  const Index out_h = window_output_size(height, w.kernel_h, w.stride, w.pad);
  const Index out_w = window_output_size(width, w.kernel_w, w.stride, w.pad);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < w.kernel_h; ++ky) {
      for (Index kx = 0; kx < w.kernel_w; ++kx) {
        const Index row = (c * w.kernel_h + ky) * w.kernel_w + kx;
        const Scalar* src = cols + row * ld + col_offset;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * w.stride - w.pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * w.stride - w.pad + kx;
            if (ix < 0 || ix >= width) continue;
            image[(c * height + iy) * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> im2col(const Tensor<Scalar>& input, const ConvWindow& window) {
  if (input.rank() != 3)
    throw DimensionError("im2col expects C x H x W input, got " + shape_string(input.shape()));
  const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index out_h = window_output_size(h, window.kernel_h, window.stride, window.pad);
  const Index out_w = window_output_size(w, window.kernel_w, window.stride, window.pad);
  Tensor<Scalar> cols({c * window.kernel_h * window.kernel_w, out_h * out_w});
  im2col_into(input.data(), c, h, w, window, cols.data(), out_h * out_w, Index(0));
  return cols;
}

InitScheme InitScheme::parse(std::string_view text) {
  if (text == "xavier_uniform") return xavier_uniform();
  if (text == "zeros") return zeros();
  constexpr std::string_view prefix = "gaussian(";
  if (text.starts_with(prefix) && text.ends_with(")")) {
    auto body = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    double sigma = 0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), sigma);
    if (ec == std::errc() && ptr == body.data() + body.size() && sigma > 0) return gaussian(sigma);
  }
  throw ConfigError("unknown init scheme '" + std::string(text) + "'");
}

std::pair<Index, Index> fans(const Shape& shape) {
  if (shape.size() == 2) return {shape[1], shape[0]};
  if (shape.size() == 4) {
    const Index receptive = shape[2] * shape[3];
    return {shape[1] * receptive, shape[0] * receptive};
  }
  const Index n = shape_size(shape);
  return {n, n};
}

template <typename Scalar>
Tensor<Scalar> rand_init(const Shape& shape, const InitScheme& scheme, std::uint64_t seed) {
  Tensor<Scalar> out(shape);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  switch (scheme.kind) {
    case InitScheme::Kind::Zeros:
      break;
    case InitScheme::Kind::XavierUniform: {
      auto [fan_in, fan_out] = fans(shape);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : out.values()) v = static_cast<Scalar>(dist(rng));
      break;
    }
    case InitScheme::Kind::Gaussian: {
      std::normal_distribution<double> dist(0.0, scheme.sigma);
      for (auto& v : out.values()) v = static_cast<Scalar>(dist(rng));
      break;
    }
  }
  return out;
}

#define MCNN_INSTANTIATE(S)                                                                    \
  template class Tensor<S>;                                                                    \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> im2col(const Tensor<S>&, const ConvWindow&);                              \
  template void im2col_into(const S*, Index, Index, Index, const ConvWindow&, S*, Index, Index); \
  template void col2im_add(const S*, Index, Index, Index, Index, Index, const ConvWindow&, S*);  \
  template Tensor<S> rand_init<S>(const Shape&, const InitScheme&, std::uint64_t);

MCNN_INSTANTIATE(float)
MCNN_INSTANTIATE(double)
#undef MCNN_INSTANTIATE

}  // namespace mcnn
