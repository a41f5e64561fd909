#pragma once

#include <cstdint>
#include <vector>

#include "mcnn/topology.hpp"

namespace mcnn {

/// Parameters of every node of a topology, indexed like NetworkTopology::nodes.
/// Gradients use the same structure.
template <typename Scalar>
struct NetworkParams {
  std::vector<LayerParams<Scalar>> layers;

  // Name-addressed access; `name` is a ParamInfo name such as "conv1.weight".
  Tensor<Scalar>& at(const NetworkTopology& topology, const std::string& name);
  const Tensor<Scalar>& at(const NetworkTopology& topology, const std::string& name) const;

  template <typename Other>
  NetworkParams<Other> cast() const {
    NetworkParams<Other> out;
    for (const auto& l : layers)
      out.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
    return out;
  }
};

template <typename Scalar>
Tensor<Scalar>& param_ref(LayerParams<Scalar>& layer, const ParamInfo& info) {
  return info.is_bias ? layer.bias : layer.weight;
}
template <typename Scalar>
const Tensor<Scalar>& param_ref(const LayerParams<Scalar>& layer, const ParamInfo& info) {
  return info.is_bias ? layer.bias : layer.weight;
}

/// Xavier-uniform weights, zero biases, identity AUX. Each tensor draws from
/// its own stream derived from `seed` and the tensor's position.
template <typename Scalar>
NetworkParams<Scalar> init_network(const NetworkTopology& topology, std::uint64_t seed,
                                   const InitScheme& weights = InitScheme::xavier_uniform());

/// Zero tensors shaped like the topology's parameters.
template <typename Scalar>
NetworkParams<Scalar> zero_params(const NetworkTopology& topology);

/// Throws CheckpointError naming the first tensor whose shape disagrees.
template <typename Scalar>
void check_params(const NetworkTopology& topology, const NetworkParams<Scalar>& params);

template <typename Scalar>
struct ForwardCache {
  bool valid = false;
  std::vector<LayerCache<Scalar>> layers;
  Tensor<Scalar> mcnn_scores;  // scores before AUX (mcnn-aux only)
};

/// Raw (pre-sigmoid) scores, one column per entry of output_attributes.
/// `batch` is N x C x H x W.
template <typename Scalar>
Tensor<Scalar> forward_full(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                            const Tensor<Scalar>& batch, Mode mode, Rng* rng,
                            ForwardCache<Scalar>* cache = nullptr);

/// Reverse pass from score gradients. Frozen tensors get zero gradients and
/// subgraphs with nothing trainable upstream are skipped. Trunk gradients
/// accumulate over all branches.
template <typename Scalar>
NetworkParams<Scalar> backward_full(const NetworkTopology& topology,
                                    const NetworkParams<Scalar>& params,
                                    const ForwardCache<Scalar>& cache,
                                    const Tensor<Scalar>& grad_scores, const FreezeMask& freeze);

}  // namespace mcnn
