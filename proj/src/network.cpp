#include "mcnn/network.hpp"

#include <cmath>

namespace mcnn {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, size_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = x;
  y.array() = Scalar(1) / (Scalar(1) + (-x.array()).exp());
  return y;
}

template <typename Scalar>
Tensor<Scalar> batched(const Tensor<Scalar>& x, Index n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return x.reshaped(std::move(s));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>& NetworkParams<Scalar>::at(const NetworkTopology& topology, const std::string& name) {
  for (const auto& p : topology.parameters())
    if (p.name == name) return param_ref(layers.at(static_cast<size_t>(p.node)), p);
  throw CheckpointError("no parameter named '" + name + "'");
}

template <typename Scalar>
const Tensor<Scalar>& NetworkParams<Scalar>::at(const NetworkTopology& topology,
                                                const std::string& name) const {
  for (const auto& p : topology.parameters())
    if (p.name == name) return param_ref(layers.at(static_cast<size_t>(p.node)), p);
  throw CheckpointError("no parameter named '" + name + "'");
}

template <typename Scalar>
NetworkParams<Scalar> zero_params(const NetworkTopology& topology) {
  NetworkParams<Scalar> params;
  params.layers.resize(topology.nodes.size());
  for (const auto& p : topology.parameters())
    param_ref(params.layers[static_cast<size_t>(p.node)], p) = Tensor<Scalar>(p.shape);
  return params;
}

template <typename Scalar>
NetworkParams<Scalar> init_network(const NetworkTopology& topology, std::uint64_t seed,
                                   const InitScheme& weights) {
  NetworkParams<Scalar> params = zero_params<Scalar>(topology);
  const auto infos = topology.parameters();
  for (size_t i = 0; i < infos.size(); ++i) {
    const auto& p = infos[i];
    if (p.is_bias) continue;
    Tensor<Scalar>& w = param_ref(params.layers[static_cast<size_t>(p.node)], p);
    if (p.node == topology.aux_node) {
      w.matrix(p.shape[0], p.shape[1]).setIdentity();
    } else {
      w = rand_init<Scalar>(p.shape, weights, stream_seed(seed, i));
    }
  }
  return params;
}

template <typename Scalar>
void check_params(const NetworkTopology& topology, const NetworkParams<Scalar>& params) {
  if (params.layers.size() != topology.nodes.size())
    throw CheckpointError("parameter set has " + std::to_string(params.layers.size()) +
                          " layers, topology has " + std::to_string(topology.nodes.size()));
  for (const auto& p : topology.parameters()) {
    const auto& t = param_ref(params.layers[static_cast<size_t>(p.node)], p);
    if (t.shape() != p.shape)
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_string(t.shape()) +
                            ", topology expects " + shape_string(p.shape));
  }
}

template <typename Scalar>
Tensor<Scalar> forward_full(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                            const Tensor<Scalar>& batch, Mode mode, Rng* rng,
                            ForwardCache<Scalar>* cache) {
  const Shape expected = topology.config.input_shape();
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != expected)
    throw DimensionError("batch shape " + shape_string(batch.shape()) + " does not match input " +
                         shape_string(expected));
  check_params(topology, params);
  const Index n = batch.dim(0);
  if (cache) {
    cache->valid = false;
    cache->layers.assign(topology.nodes.size(), LayerCache<Scalar>{});
  }

  std::vector<Tensor<Scalar>> outputs(topology.nodes.size());
  for (size_t i = 0; i < topology.nodes.size(); ++i) {
    const Node& node = topology.nodes[i];
    if (node.parent == kAuxParent) continue;
    const Tensor<Scalar>& in = node.parent < 0 ? batch : outputs[static_cast<size_t>(node.parent)];
    outputs[i] = forward(node.spec, params.layers[i], in, mode, rng,
                         cache ? &cache->layers[i] : nullptr);
  }

  Tensor<Scalar> scores({n, topology.output_width()});
  auto sm = scores.matrix(n, topology.output_width());
  for (const auto& head : topology.heads) {
    const auto& out = outputs[static_cast<size_t>(head.node)];
    const Index units = static_cast<Index>(head.columns.size());
    for (Index u = 0; u < units; ++u) sm.col(head.columns[static_cast<size_t>(u)]) = out.matrix(n, units).col(u);
  }

  if (topology.aux_node >= 0) {
    const auto aux = static_cast<size_t>(topology.aux_node);
    if (cache) cache->mcnn_scores = scores;
    const Tensor<Scalar> aux_in =
        topology.config.aux_input == AuxInput::Sigmoid ? sigmoid(scores) : scores;
    scores = forward(topology.nodes[aux].spec, params.layers[aux], aux_in, mode, rng,
                     cache ? &cache->layers[aux] : nullptr);
  }
  if (cache) cache->valid = true;
  return scores;
}

template <typename Scalar>
NetworkParams<Scalar> backward_full(const NetworkTopology& topology,
                                    const NetworkParams<Scalar>& params,
                                    const ForwardCache<Scalar>& cache,
                                    const Tensor<Scalar>& grad_scores, const FreezeMask& freeze) {
  if (!cache.valid || cache.layers.size() != topology.nodes.size())
    throw ContractError("backward_full called without a matching forward cache");
  const size_t count = topology.nodes.size();
  const auto infos = topology.parameters();

  // trainable[i]: node i owns a tensor that is not frozen.
  // upstream[i]: some ancestor of node i is trainable, so its input gradient is needed.
  std::vector<bool> trainable(count, false), upstream(count, false);
  for (const auto& p : infos)
    if (!freeze.frozen(p.name)) trainable[static_cast<size_t>(p.node)] = true;
  bool any_mcnn_trainable = false;
  for (size_t i = 0; i < count; ++i) {
    const int parent = topology.nodes[i].parent;
    if (parent >= 0) {
      const auto pi = static_cast<size_t>(parent);
      upstream[i] = upstream[pi] || trainable[pi];
    }
    if (static_cast<int>(i) != topology.aux_node && trainable[i]) any_mcnn_trainable = true;
  }

  NetworkParams<Scalar> grads = zero_params<Scalar>(topology);
  if (grad_scores.rank() != 2 || grad_scores.dim(1) != topology.output_width())
    throw DimensionError("grad_scores shape " + shape_string(grad_scores.shape()) +
                         " does not match score width " + std::to_string(topology.output_width()));
  const Index n = grad_scores.dim(0);

  auto store = [&](size_t i, LayerGrads<Scalar>& g) {
    for (const auto& p : infos) {
      if (static_cast<size_t>(p.node) != i || freeze.frozen(p.name)) continue;
      param_ref(grads.layers[i], p) = std::move(p.is_bias ? g.bias : g.weight);
    }
  };

  Tensor<Scalar> score_grad = grad_scores;
  if (topology.aux_node >= 0) {
    const auto aux = static_cast<size_t>(topology.aux_node);
    LayerGrads<Scalar> g = backward(topology.nodes[aux].spec, params.layers[aux], cache.layers[aux],
                                    grad_scores, any_mcnn_trainable);
    if (trainable[aux]) store(aux, g);
    if (!any_mcnn_trainable) return grads;
    score_grad = std::move(g.input);
    if (topology.config.aux_input == AuxInput::Sigmoid) {
      const Tensor<Scalar> s = sigmoid(cache.mcnn_scores);
      score_grad.array() *= s.array() * (Scalar(1) - s.array());
    }
  }

  std::vector<Tensor<Scalar>> grad_out(count);
  const auto gm = score_grad.matrix(n, topology.output_width());
  for (const auto& head : topology.heads) {
    const auto h = static_cast<size_t>(head.node);
    if (!trainable[h] && !upstream[h]) continue;
    const Index units = static_cast<Index>(head.columns.size());
    Tensor<Scalar> g({n, units});
    for (Index u = 0; u < units; ++u) g.matrix(n, units).col(u) = gm.col(head.columns[static_cast<size_t>(u)]);
    grad_out[h] = std::move(g);
  }

  for (size_t k = count; k-- > 0;) {
    if (static_cast<int>(k) == topology.aux_node || grad_out[k].empty()) continue;
    if (!trainable[k] && !upstream[k]) continue;
    const Node& node = topology.nodes[k];
    const Tensor<Scalar>& out_grad = grad_out[k];
    LayerGrads<Scalar> g = backward(node.spec, params.layers[k], cache.layers[k],
                                    batched(out_grad, n, node.out_shape), upstream[k]);
    if (trainable[k]) store(k, g);
    if (upstream[k] && node.parent >= 0) {
      auto& acc = grad_out[static_cast<size_t>(node.parent)];
      Tensor<Scalar> gi = batched(g.input, n, node.in_shape);
      if (acc.empty()) {
        acc = std::move(gi);
      } else {
        acc.array() += gi.array();
      }
    }
    grad_out[k] = Tensor<Scalar>{};
  }
  return grads;
}

#define MCNN_INSTANTIATE(S)                                                                       \
  template struct NetworkParams<S>;                                                               \
  template NetworkParams<S> init_network<S>(const NetworkTopology&, std::uint64_t,                \
                                            const InitScheme&);                                   \
  template NetworkParams<S> zero_params<S>(const NetworkTopology&);                               \
  template void check_params(const NetworkTopology&, const NetworkParams<S>&);                    \
  template Tensor<S> forward_full(const NetworkTopology&, const NetworkParams<S>&,                \
                                  const Tensor<S>&, Mode, Rng*, ForwardCache<S>*);                \
  template NetworkParams<S> backward_full(const NetworkTopology&, const NetworkParams<S>&,         \
                                          const ForwardCache<S>&, const Tensor<S>&,               \
                                          const FreezeMask&);

MCNN_INSTANTIATE(float)
MCNN_INSTANTIATE(double)
#undef MCNN_INSTANTIATE

}  // namespace mcnn
