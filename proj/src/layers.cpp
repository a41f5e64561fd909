#include "mcnn/layers.hpp"

#include <cmath>

namespace mcnn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Shape without_batch(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

Shape with_batch(Index n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void require_rank(const Shape& s, size_t rank, const char* layer) {
  if (s.size() != rank)
    throw DimensionError(std::string(layer) + " expects rank-" + std::to_string(rank) +
                         " input, got " + shape_string(s));
}

template <typename Scalar>
void require_cache(const LayerCache<Scalar>& cache, const Tensor<Scalar>& grad_output,
                   const Shape& expected_out) {
  if (!cache.valid) throw ContractError("backward called without a forward cache");
  if (grad_output.shape() != expected_out)
    throw DimensionError("grad_output shape " + shape_string(grad_output.shape()) +
                         " does not match forward output " + shape_string(expected_out));
}

// ---------------------------------------------------------------------------
// Conv

template <typename Scalar>
Tensor<Scalar> conv_forward(const Conv& spec, const LayerParams<Scalar>& p, const Tensor<Scalar>& x,
                            LayerCache<Scalar>* cache) {
  require_rank(x.shape(), 4, "Conv");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Shape out_sample = output_shape(spec, without_batch(x.shape()));
  const ParamShapes ps = param_shapes(spec, without_batch(x.shape()));
  if (p.weight.shape() != ps.weight || p.bias.shape() != ps.bias)
    throw DimensionError("Conv params " + shape_string(p.weight.shape()) + " do not fit input " +
                         shape_string(x.shape()));
  const ConvWindow win{spec.kernel, spec.kernel, spec.stride, spec.pad};
  const Index ho = out_sample[1], wo = out_sample[2], plane = ho * wo;
  const Index patch = c * spec.kernel * spec.kernel;

  Tensor<Scalar> cols({patch, n * plane});
  for (Index i = 0; i < n; ++i)
    im2col_into(x.data() + i * c * h * w, c, h, w, win, cols.data(), n * plane, i * plane);

  RowMatrix<Scalar> y = p.weight.matrix(spec.out_channels, patch) * cols.matrix(patch, n * plane);
  Tensor<Scalar> out(with_batch(n, out_sample));
  for (Index i = 0; i < n; ++i) {
    auto dst = out.matrix(n * spec.out_channels, plane).middleRows(i * spec.out_channels,
                                                                    spec.out_channels);
    dst = y.middleCols(i * plane, plane);
    dst.colwise() += p.bias.array().matrix();
  }
  if (cache) {
    cache->input = x;
    cache->cols = std::move(cols);
  }
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> conv_backward(const Conv& spec, const LayerParams<Scalar>& p,
                                 const LayerCache<Scalar>& cache, const Tensor<Scalar>& dy,
                                 bool want_input) {
  const Tensor<Scalar>& x = cache.input;
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Shape out_sample = output_shape(spec, without_batch(x.shape()));
  require_cache(cache, dy, with_batch(n, out_sample));
  const Index plane = out_sample[1] * out_sample[2];
  const Index patch = c * spec.kernel * spec.kernel;
  const Index oc = spec.out_channels;

  RowMatrix<Scalar> dy_mat(oc, n * plane);
  for (Index i = 0; i < n; ++i)
    dy_mat.middleCols(i * plane, plane) = dy.matrix(n * oc, plane).middleRows(i * oc, oc);

  LayerGrads<Scalar> g;
  g.weight = Tensor<Scalar>(p.weight.shape());
  g.weight.matrix(oc, patch).noalias() = dy_mat * cache.cols.matrix(patch, n * plane).transpose();
  g.bias = Tensor<Scalar>(p.bias.shape());
  g.bias.array() = dy_mat.rowwise().sum().array();
  if (want_input) {
    RowMatrix<Scalar> dcols = p.weight.matrix(oc, patch).transpose() * dy_mat;
    g.input = Tensor<Scalar>(x.shape());
    const ConvWindow win{spec.kernel, spec.kernel, spec.stride, spec.pad};
    for (Index i = 0; i < n; ++i)
      col2im_add(dcols.data(), n * plane, i * plane, c, h, w, win, g.input.data() + i * c * h * w);
  }
  return g;
}

// ---------------------------------------------------------------------------
// MaxPool

template <typename Scalar>
Tensor<Scalar> pool_forward(const MaxPool& spec, const Tensor<Scalar>& x, LayerCache<Scalar>* cache) {
  require_rank(x.shape(), 4, "MaxPool");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Shape out_sample = output_shape(spec, without_batch(x.shape()));
  const Index ho = out_sample[1], wo = out_sample[2];
  Tensor<Scalar> out(with_batch(n, out_sample));
  std::vector<Index> argmax(static_cast<size_t>(out.size()));
  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index base = plane * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox, ++o) {
        Index best = base + (oy * spec.stride) * w + ox * spec.stride;
        for (Index ky = 0; ky < spec.kernel; ++ky) {
          const Index row = base + (oy * spec.stride + ky) * w + ox * spec.stride;
          for (Index kx = 0; kx < spec.kernel; ++kx)
            if (x[row + kx] > x[best]) best = row + kx;
        }
        out[o] = x[best];
        argmax[static_cast<size_t>(o)] = best;
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->argmax = std::move(argmax);
  }
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> pool_backward(const MaxPool& spec, const LayerCache<Scalar>& cache,
                                 const Tensor<Scalar>& dy) {
  const Shape& in = cache.input.shape();
  require_cache(cache, dy, with_batch(in[0], output_shape(spec, without_batch(in))));
  LayerGrads<Scalar> g;
  g.input = Tensor<Scalar>(in);
  for (Index o = 0; o < dy.size(); ++o) g.input[cache.argmax[static_cast<size_t>(o)]] += dy[o];
  return g;
}

// ---------------------------------------------------------------------------
// LRN

template <typename Scalar>
Tensor<Scalar> lrn_forward(const LRN& spec, const Tensor<Scalar>& x, LayerCache<Scalar>* cache) {
  require_rank(x.shape(), 4, "LRN");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Index half = spec.local_size / 2;
  const Scalar coeff = static_cast<Scalar>(spec.alpha / static_cast<double>(spec.local_size));
  const Scalar k = static_cast<Scalar>(spec.k);
  const Scalar beta = static_cast<Scalar>(spec.beta);
  Tensor<Scalar> scale(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < n; ++i) {
    auto xs = x.matrix(n * c, plane).middleRows(i * c, c);
    auto ss = scale.matrix(n * c, plane).middleRows(i * c, c);
    auto ys = out.matrix(n * c, plane).middleRows(i * c, c);
    const RowMatrix<Scalar> sq = xs.array().square().matrix();
    for (Index ch = 0; ch < c; ++ch) {
      const Index lo = std::max<Index>(0, ch - half), hi = std::min<Index>(c - 1, ch + half);
      ss.row(ch) = (k + coeff * sq.middleRows(lo, hi - lo + 1).colwise().sum().array()).matrix();
    }
    ys = (xs.array() * ss.array().pow(-beta)).matrix();
  }
  if (cache) {
    cache->input = x;
    cache->scale = std::move(scale);
  }
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> lrn_backward(const LRN& spec, const LayerCache<Scalar>& cache,
                                const Tensor<Scalar>& dy) {
  const Tensor<Scalar>& x = cache.input;
  require_cache(cache, dy, x.shape());
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Index half = spec.local_size / 2;
  const Scalar beta = static_cast<Scalar>(spec.beta);
  const Scalar factor = static_cast<Scalar>(2.0 * spec.alpha * spec.beta /
                                            static_cast<double>(spec.local_size));
  LayerGrads<Scalar> g;
  g.input = Tensor<Scalar>(x.shape());
  for (Index i = 0; i < n; ++i) {
    auto xs = x.matrix(n * c, plane).middleRows(i * c, c);
    auto ss = cache.scale.matrix(n * c, plane).middleRows(i * c, c);
    auto dys = dy.matrix(n * c, plane).middleRows(i * c, c);
    auto dxs = g.input.matrix(n * c, plane).middleRows(i * c, c);
    // t_c = dy_c * x_c * s_c^(-beta-1)
    const RowMatrix<Scalar> t =
        (dys.array() * xs.array() * ss.array().pow(-beta - Scalar(1))).matrix();
    dxs = (dys.array() * ss.array().pow(-beta)).matrix();
    for (Index ch = 0; ch < c; ++ch) {
      const Index lo = std::max<Index>(0, ch - half), hi = std::min<Index>(c - 1, ch + half);
      dxs.row(ch).array() -=
          factor * xs.row(ch).array() * t.middleRows(lo, hi - lo + 1).colwise().sum().array();
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// FullyConnected

template <typename Scalar>
Tensor<Scalar> fc_forward(const FullyConnected& spec, const LayerParams<Scalar>& p,
                          const Tensor<Scalar>& x, LayerCache<Scalar>* cache) {
  if (x.rank() < 2) throw DimensionError("FullyConnected expects a batch, got " + shape_string(x.shape()));
  const Index n = x.dim(0), f = x.size() / n;
  const ParamShapes ps = param_shapes(spec, without_batch(x.shape()));
  if (p.weight.shape() != ps.weight || p.bias.shape() != ps.bias)
    throw DimensionError("FullyConnected params " + shape_string(p.weight.shape()) +
                         " do not fit input " + shape_string(x.shape()));
  Tensor<Scalar> out({n, spec.units});
  auto y = out.matrix(n, spec.units);
  y.noalias() = x.matrix(n, f) * p.weight.matrix(spec.units, f).transpose();
  if (spec.bias) y.rowwise() += p.bias.array().matrix().transpose();
  if (cache) cache->input = x;
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> fc_backward(const FullyConnected& spec, const LayerParams<Scalar>& p,
                               const LayerCache<Scalar>& cache, const Tensor<Scalar>& dy,
                               bool want_input) {
  const Tensor<Scalar>& x = cache.input;
  const Index n = x.dim(0), f = x.size() / n;
  require_cache(cache, dy, Shape{n, spec.units});
  auto dy_mat = dy.matrix(n, spec.units);
  LayerGrads<Scalar> g;
  g.weight = Tensor<Scalar>(p.weight.shape());
  g.weight.matrix(spec.units, f).noalias() = dy_mat.transpose() * x.matrix(n, f);
  if (spec.bias) {
    g.bias = Tensor<Scalar>(p.bias.shape());
    g.bias.array() = dy_mat.colwise().sum().transpose().array();
  }
  if (want_input) {
    g.input = Tensor<Scalar>(x.shape());
    g.input.matrix(n, f).noalias() = dy_mat * p.weight.matrix(spec.units, f);
  }
  return g;
}

}  // namespace

void validate(const LayerSpec& spec) {
  std::visit(overloaded{
                 [](const Conv& s) {
                   if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.pad < 0)
                     throw ConfigError("Conv needs out_channels, kernel, stride >= 1 and pad >= 0");
                 },
                 [](const MaxPool& s) {
                   if (s.kernel < 1 || s.stride < 1)
                     throw ConfigError("MaxPool needs kernel, stride >= 1");
                 },
                 [](const LRN& s) {
                   if (s.local_size < 1 || s.local_size % 2 == 0)
                     throw ConfigError("LRN local_size must be odd and >= 1");
                   if (s.k <= 0) throw ConfigError("LRN k must be positive");
                 },
                 [](const ReLU&) {},
                 [](const FullyConnected& s) {
                   if (s.units < 1) throw ConfigError("FullyConnected needs units >= 1");
                 },
                 [](const Dropout& s) {
                   if (!(s.rate >= 0.0 && s.rate < 1.0))
                     throw ConfigError("Dropout rate must lie in [0, 1)");
                 },
             },
             spec);
}

std::string kind_name(const LayerSpec& spec) {
  return std::visit(overloaded{
                        [](const Conv&) { return "Conv"; },
                        [](const MaxPool&) { return "MaxPool"; },
                        [](const LRN&) { return "LRN"; },
                        [](const ReLU&) { return "ReLU"; },
                        [](const FullyConnected&) { return "FullyConnected"; },
                        [](const Dropout&) { return "Dropout"; },
                    },
                    spec);
}

bool has_params(const LayerSpec& spec) {
  return std::holds_alternative<Conv>(spec) || std::holds_alternative<FullyConnected>(spec);
}

Shape output_shape(const LayerSpec& spec, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const Conv& s) -> Shape {
            require_rank(in, 3, "Conv");
            return {s.out_channels, window_output_size(in[1], s.kernel, s.stride, s.pad),
                    window_output_size(in[2], s.kernel, s.stride, s.pad)};
          },
          [&](const MaxPool& s) -> Shape {
            require_rank(in, 3, "MaxPool");
            return {in[0], window_output_size(in[1], s.kernel, s.stride, 0),
                    window_output_size(in[2], s.kernel, s.stride, 0)};
          },
          [&](const LRN&) -> Shape {
            require_rank(in, 3, "LRN");
            return in;
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const FullyConnected& s) -> Shape { return {s.units}; },
          [&](const Dropout&) -> Shape { return in; },
      },
      spec);
}

ParamShapes param_shapes(const LayerSpec& spec, const Shape& in) {
  if (const auto* conv = std::get_if<Conv>(&spec)) {
    require_rank(in, 3, "Conv");
    return {{conv->out_channels, in[0], conv->kernel, conv->kernel}, {conv->out_channels}};
  }
  if (const auto* fc = std::get_if<FullyConnected>(&spec)) {
    ParamShapes ps{{fc->units, shape_size(in)}, {}};
    if (fc->bias) ps.bias = {fc->units};
    return ps;
  }
  return {};
}

template <typename Scalar>
LayerParams<Scalar> init_params(const LayerSpec& spec, const Shape& input, const InitScheme& scheme,
                                std::uint64_t seed) {
  const ParamShapes ps = param_shapes(spec, input);
  LayerParams<Scalar> p;
  if (!ps.weight.empty()) p.weight = rand_init<Scalar>(ps.weight, scheme, seed);
  if (!ps.bias.empty()) p.bias = Tensor<Scalar>(ps.bias);
  return p;
}

template <typename Scalar>
Tensor<Scalar> forward(const LayerSpec& spec, const LayerParams<Scalar>& params,
                       const Tensor<Scalar>& input, Mode mode, Rng* rng,
                       LayerCache<Scalar>* cache) {
  if (input.rank() < 2)
    throw DimensionError(kind_name(spec) + " expects a batched input, got " +
                         shape_string(input.shape()));
  if (cache) *cache = LayerCache<Scalar>{};
  Tensor<Scalar> out = std::visit(
      overloaded{
          [&](const Conv& s) { return conv_forward(s, params, input, cache); },
          [&](const MaxPool& s) { return pool_forward(s, input, cache); },
          [&](const LRN& s) { return lrn_forward(s, input, cache); },
          [&](const ReLU&) {
            Tensor<Scalar> y = input;
            y.array() = y.array().max(Scalar(0));
            if (cache) cache->input = input;
            return y;
          },
          [&](const FullyConnected& s) { return fc_forward(s, params, input, cache); },
          [&](const Dropout& s) {
            if (mode == Mode::Eval || s.rate == 0.0) {
              if (cache) cache->input = input;
              return input;
            }
            if (!rng) throw ContractError("Dropout in train mode requires an rng");
            Tensor<Scalar> mask(input.shape());
            const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - s.rate));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (auto& m : mask.values()) m = u(*rng) < s.rate ? Scalar(0) : keep;
            Tensor<Scalar> y = input;
            y.array() *= mask.array();
            if (cache) {
              cache->input = input;
              cache->mask = std::move(mask);
            }
            return y;
          },
      },
      spec);
  if (cache) cache->valid = true;
  return out;
}

template <typename Scalar>
LayerGrads<Scalar> backward(const LayerSpec& spec, const LayerParams<Scalar>& params,
                            const LayerCache<Scalar>& cache, const Tensor<Scalar>& grad_output,
                            bool want_input_grad) {
  if (!cache.valid) throw ContractError("backward called without a forward cache");
  return std::visit(
      overloaded{
          [&](const Conv& s) { return conv_backward(s, params, cache, grad_output, want_input_grad); },
          [&](const MaxPool& s) { return pool_backward(s, cache, grad_output); },
          [&](const LRN& s) { return lrn_backward(s, cache, grad_output); },
          [&](const ReLU&) {
            require_cache(cache, grad_output, cache.input.shape());
            LayerGrads<Scalar> g;
            g.input = grad_output;
            g.input.array() = (cache.input.array() > Scalar(0)).select(grad_output.array(), Scalar(0));
            return g;
          },
          [&](const FullyConnected& s) {
            return fc_backward(s, params, cache, grad_output, want_input_grad);
          },
          [&](const Dropout&) {
            require_cache(cache, grad_output, cache.input.shape());
            LayerGrads<Scalar> g;
            g.input = grad_output;
            if (!cache.mask.empty()) g.input.array() *= cache.mask.array();
            return g;
          },
      },
      spec);
}

#define MCNN_INSTANTIATE(S)                                                                      \
  template LayerParams<S> init_params<S>(const LayerSpec&, const Shape&, const InitScheme&,      \
                                         std::uint64_t);                                         \
  template Tensor<S> forward(const LayerSpec&, const LayerParams<S>&, const Tensor<S>&, Mode,    \
                             Rng*, LayerCache<S>*);                                              \
  template LayerGrads<S> backward(const LayerSpec&, const LayerParams<S>&, const LayerCache<S>&, \
                                  const Tensor<S>&, bool);

MCNN_INSTANTIATE(float)
MCNN_INSTANTIATE(double)
#undef MCNN_INSTANTIATE

}  // namespace mcnn
