#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

enum class Mode { Train, Eval };

using Rng = std::mt19937_64;

// Layer kinds. Kernels are square; a single stride applies to both axes.
struct Conv {
  Index out_channels = 1;
  Index kernel = 1;
  Index stride = 1;
  Index pad = 0;
};
struct MaxPool {
  Index kernel = 2;
  Index stride = 2;
};
// Across-channel local response normalization:
//   y_c = x_c / (k + alpha / n * sum_{|c'-c| <= n/2} x_c'^2)^beta
struct LRN {
  Index local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 2.0;
};
struct ReLU {};
struct FullyConnected {
  Index units = 1;
  bool bias = true;
};
// Inverted dropout: survivors are scaled by 1 / (1 - rate) at train time.
struct Dropout {
  double rate = 0.5;
};

using LayerSpec = std::variant<Conv, MaxPool, LRN, ReLU, FullyConnected, Dropout>;

/// Throws ConfigError if the spec violates its invariants.
void validate(const LayerSpec& spec);
std::string kind_name(const LayerSpec& spec);
bool has_params(const LayerSpec& spec);

/// Per-sample output shape (no batch axis) for a per-sample input shape.
Shape output_shape(const LayerSpec& spec, const Shape& input);

struct ParamShapes {
  Shape weight;  // empty when the layer has no weight
  Shape bias;    // empty when the layer has no bias
};
ParamShapes param_shapes(const LayerSpec& spec, const Shape& input);

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

// Forward intermediates needed by backward.
template <typename Scalar>
struct LayerCache {
  bool valid = false;
  Tensor<Scalar> input;
  Tensor<Scalar> cols;         // Conv: batched im2col matrix
  std::vector<Index> argmax;   // MaxPool: flat input index per output
  Tensor<Scalar> mask;         // Dropout: 0 or 1/(1-rate); empty in eval mode
  Tensor<Scalar> scale;        // LRN: k + alpha/n * sum x^2
};

template <typename Scalar>
struct LayerState {
  LayerParams<Scalar> params;
  LayerCache<Scalar> cache;
};

template <typename Scalar>
struct LayerGrads {
  Tensor<Scalar> input;  // empty when not requested
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

template <typename Scalar>
LayerParams<Scalar> init_params(const LayerSpec& spec, const Shape& input, const InitScheme& scheme,
                                std::uint64_t seed);

/// Batched forward pass; input has a leading batch axis. `rng` is required for
/// Dropout in train mode. When `cache` is non-null it receives what backward needs.
template <typename Scalar>
Tensor<Scalar> forward(const LayerSpec& spec, const LayerParams<Scalar>& params,
                       const Tensor<Scalar>& input, Mode mode, Rng* rng,
                       LayerCache<Scalar>* cache);

template <typename Scalar>
Tensor<Scalar> forward(const LayerSpec& spec, LayerState<Scalar>& state, const Tensor<Scalar>& input,
                       Mode mode, Rng* rng) {
  return forward(spec, state.params, input, mode, rng, &state.cache);
}

template <typename Scalar>
LayerGrads<Scalar> backward(const LayerSpec& spec, const LayerParams<Scalar>& params,
                            const LayerCache<Scalar>& cache, const Tensor<Scalar>& grad_output,
                            bool want_input_grad = true);

template <typename Scalar>
LayerGrads<Scalar> backward(const LayerSpec& spec, const LayerState<Scalar>& state,
                            const Tensor<Scalar>& grad_output) {
  return backward(spec, state.params, state.cache, grad_output);
}

/// Max relative error |a - n| / max(|a|, |n|, 1e-8) between analytic gradients
/// and central differences (eps 1e-5) over every input and parameter entry.
/// Runs in double precision. Input shape includes the batch axis.
double gradient_check(const LayerSpec& spec, const Shape& input_shape, std::uint64_t seed);

}  // namespace mcnn
