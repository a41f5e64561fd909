#include "mcnn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

namespace mcnn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

Rng training_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7a11u};
  return Rng(seq);
}

void check_vocab(const NetworkTopology& topology, const BatchSource& data) {
  if (!(topology.vocab == data.dataset().vocab))
    throw CheckpointError("dataset attribute vocabulary differs from the network's");
  if (data.input_shape() != topology.config.input_shape())
    throw DimensionError("network expects input " + shape_string(topology.config.input_shape()) +
                         ", data pipeline produces " + shape_string(data.input_shape()));
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& m, std::span<const Index> rows) {
  const Index width = m.dim(1);
  Tensor<Scalar> out({static_cast<Index>(rows.size()), width});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(m.data() + rows[i] * width, width, out.data() + static_cast<Index>(i) * width);
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_of(const Tensor<Scalar>& s) {
  Tensor<Scalar> out(s.shape());
  out.array() = Scalar(1) / (Scalar(1) + (-s.array()).exp());
  return out;
}

void check_finite(double loss, const std::string& stage, int epoch, int batch) {
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite loss in " + stage + " at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch),
                          epoch, batch);
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float") return Precision::F32;
  if (text == "f64" || text == "double") return Precision::F64;
  throw ConfigError("unknown precision '" + std::string(text) + "' (expected f32 or f64)");
}

void HyperParams::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1 || aux_epochs < 0) throw ConfigError("epochs must be >= 1");
  if (!(lr >= 0) || !(aux_lr >= 0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
  if (lr_step < 0 || !(lr_gamma > 0)) throw ConfigError("bad learning-rate schedule");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

double HyperParams::rate(double base, int epoch) const {
  return lr_step > 0 ? base * std::pow(lr_gamma, epoch / lr_step) : base;
}

template <typename Scalar>
void sgd_step(Tensor<Scalar>& weight, const Tensor<Scalar>& grad, Tensor<Scalar>& velocity, double lr,
              double momentum, double weight_decay) {
  if (grad.shape() != weight.shape() || velocity.shape() != weight.shape())
    throw DimensionError("sgd_step: weight " + shape_string(weight.shape()) + ", grad " +
                         shape_string(grad.shape()) + ", velocity " + shape_string(velocity.shape()));
  const auto mu = static_cast<Scalar>(momentum), rate = static_cast<Scalar>(lr),
             decay = static_cast<Scalar>(weight_decay);
  velocity.array() = mu * velocity.array() + rate * (grad.array() + decay * weight.array());
  weight.array() -= velocity.array();
}

LabelMatrix output_labels(const NetworkTopology& topology, const LabelMatrix& labels) {
  return labels.select_cols(topology.output_attributes);
}

template <typename Scalar>
TrainResult<Scalar> train(const NetworkTopology& topology, NetworkParams<Scalar> params,
                          const BatchSource& data, const HyperParams& hyper, const FreezeMask& freeze,
                          const std::string& stage, const EpochCallback& on_epoch) {
  hyper.validate();
  check_params(topology, params);
  check_vocab(topology, data);
  if (data.dataset().rows(Split::Train).empty()) throw DataError("training split is empty");

  const auto infos = topology.parameters();
  bool any_trainable = false;
  for (const auto& info : infos) any_trainable |= !freeze.frozen(info.name);

  NetworkParams<Scalar> velocity = zero_params<Scalar>(topology);
  const LabelMatrix labels = output_labels(topology, data.dataset().labels);
  Rng rng = training_rng(hyper.seed);
  TrainResult<Scalar> result;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr = hyper.rate(hyper.lr, epoch);
    const auto order = data.epoch_order(hyper.seed, epoch);
    double total = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
      const std::span<const Index> rows(order.data() + start, stop - start);
      const Tensor<Scalar> batch = data.images<Scalar>(rows, Mode::Train, &rng);
      ForwardCache<Scalar> cache;
      const Tensor<Scalar> scores = forward_full(topology, params, batch, Mode::Train, &rng,
                                                 any_trainable ? &cache : nullptr);
      const auto loss = sigmoid_ce(scores, labels.select_rows({rows.begin(), rows.end()}));
      check_finite(loss.loss, stage, epoch, batches);
      total += loss.loss;
      ++batches;
      if (!any_trainable) continue;

      NetworkParams<Scalar> grads = backward_full(topology, params, cache, loss.grad, freeze);
      for (const auto& info : infos) {
        if (freeze.frozen(info.name)) continue;
        const auto node = static_cast<size_t>(info.node);
        sgd_step(param_ref(params.layers[node], info), param_ref(grads.layers[node], info),
                 param_ref(velocity.layers[node], info), lr, hyper.momentum, hyper.weight_decay);
      }
    }
    EpochRecord rec{stage, epoch, lr, total / batches};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.params = std::move(params);
  return result;
}

template <typename Scalar>
Tensor<Scalar> predict_scores(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                              const BatchSource& data, std::span<const Index> rows, Index batch_size,
                              int threads) {
  check_params(topology, params);
  check_vocab(topology, data);
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const Index n = static_cast<Index>(rows.size()), width = topology.output_width();
  Tensor<Scalar> out({n, width});
  const Index batches = (n + batch_size - 1) / batch_size;

  // Batch boundaries do not depend on the worker count, so every row is
  // computed by the same arithmetic whatever `threads` is.
  auto work = [&](Index first) {
    for (Index b = first; b < batches; b += threads) {
      const Index start = b * batch_size, stop = std::min(n, start + batch_size);
      const auto part = rows.subspan(static_cast<size_t>(start), static_cast<size_t>(stop - start));
      const Tensor<Scalar> s =
          forward_full(topology, params, data.images<Scalar>(part, Mode::Eval, nullptr), Mode::Eval, nullptr);
      std::copy_n(s.data(), s.size(), out.data() + start * width);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  return out;
}

template <typename Scalar>
MetricsReport evaluate(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                       const BatchSource& data, Split split, Index batch_size, int threads) {
  check_vocab(topology, data);
  const auto rows = data.dataset().rows(split);
  if (rows.empty()) throw DataError(to_string(split) + " split is empty");
  const Tensor<Scalar> scores = predict_scores(topology, params, data, rows, batch_size, threads);
  const LabelMatrix all = output_labels(topology, data.dataset().labels);
  const LabelMatrix labels = all.select_rows(rows);

  MetricsReport r;
  r.attributes = topology.output_names();
  r.per_attribute_accuracy = accuracy(threshold(scores), labels);
  r.baseline_accuracy = majority_baseline(all.select_rows(data.dataset().rows(Split::Train)), labels);
  r.mean_accuracy = mean_of(r.per_attribute_accuracy);
  r.loss = sigmoid_ce(scores, labels).loss;
  return r;
}

template <typename Scalar>
Tensor<Scalar> train_aux_on_scores(const Tensor<Scalar>& scores, const LabelMatrix& labels,
                                   Tensor<Scalar> aux_weight, const HyperParams& hyper,
                                   std::vector<EpochRecord>& history, const EpochCallback& on_epoch) {
  hyper.validate();
  const Index n = scores.dim(0), width = scores.dim(1);
  const LayerSpec fc = FullyConnected{width, false};
  if (aux_weight.shape() != Shape{width, width})
    throw DimensionError("AUX weight " + shape_string(aux_weight.shape()) + " for " + std::to_string(width) +
                         " scores");
  LayerParams<Scalar> params{std::move(aux_weight), {}};
  Tensor<Scalar> velocity(params.weight.shape());
  std::vector<Index> positions(static_cast<size_t>(n));
  std::iota(positions.begin(), positions.end(), Index(0));

  for (int epoch = 0; epoch < hyper.aux_epochs; ++epoch) {
    const double lr = hyper.rate(hyper.aux_lr, epoch);
    const auto order = shuffled(positions, hyper.seed, epoch);
    double total = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
      const std::span<const Index> rows(order.data() + start, stop - start);
      LayerCache<Scalar> cache;
      const Tensor<Scalar> out = forward(fc, params, gather_rows(scores, rows), Mode::Train, nullptr, &cache);
      const auto loss = sigmoid_ce(out, labels.select_rows({rows.begin(), rows.end()}));
      check_finite(loss.loss, "aux", epoch, batches);
      total += loss.loss;
      ++batches;
      const auto grads = backward(fc, params, cache, loss.grad, false);
      sgd_step(params.weight, grads.weight, velocity, lr, hyper.momentum, hyper.weight_decay);
    }
    EpochRecord rec{"aux", epoch, lr, total / batches};
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return std::move(params.weight);
}

template <typename Scalar>
TwoStageResult<Scalar> train_two_stage(const NetworkTopology& mcnn, const BatchSource& data,
                                       const HyperParams& hyper, const EpochCallback& on_epoch) {
  if (mcnn.variant != Variant::Mcnn) throw ContractError("train_two_stage needs an MCNN topology");
  TwoStageResult<Scalar> r;
  r.mcnn = mcnn;

  auto start = Clock::now();
  auto stage1 = train(mcnn, init_network<Scalar>(mcnn, hyper.seed), data, hyper, FreezeMask::all_trainable(mcnn),
                      "mcnn", on_epoch);
  r.mcnn_params = std::move(stage1.params);
  r.history = std::move(stage1.history);
  r.stage1_seconds = seconds_since(start);

  start = Clock::now();
  auto attached = attach_aux(mcnn);
  r.aux = std::move(attached.topology);
  r.freeze = std::move(attached.freeze);
  r.aux_params = init_network<Scalar>(r.aux, hyper.seed);
  for (size_t i = 0; i < mcnn.nodes.size(); ++i) {
    if (r.aux.nodes[i].name != mcnn.nodes[i].name) throw ContractError("attach_aux reordered nodes");
    r.aux_params.layers[i] = r.mcnn_params.layers[i];
  }

  const auto rows = data.dataset().rows(Split::Train);
  const LabelMatrix labels = output_labels(mcnn, data.dataset().labels).select_rows(rows);
  const Tensor<Scalar> scores = predict_scores(mcnn, r.mcnn_params, data, rows, hyper.batch_size, hyper.threads);
  r.stage1_final_loss = sigmoid_ce(scores, labels).loss;
  // Through the assembled network rather than the cached scores, so this
  // also checks that the identity AUX reproduces the MCNN.
  r.stage2_initial_loss =
      sigmoid_ce(predict_scores(r.aux, r.aux_params, data, rows, hyper.batch_size, hyper.threads), labels).loss;

  const Tensor<Scalar> inputs = mcnn.config.aux_input == AuxInput::Sigmoid ? sigmoid_of(scores) : scores;
  auto& weight = r.aux_params.layers[static_cast<size_t>(r.aux.aux_node)].weight;
  weight = train_aux_on_scores(inputs, labels, weight, hyper, r.history, on_epoch);
  const LayerSpec fc = FullyConnected{mcnn.output_width(), false};
  r.stage2_final_loss =
      sigmoid_ce(forward(fc, r.aux_params.layers[static_cast<size_t>(r.aux.aux_node)], inputs, Mode::Eval,
                         nullptr, static_cast<LayerCache<Scalar>*>(nullptr)),
                 labels)
          .loss;
  r.stage2_seconds = seconds_since(start);
  return r;
}

#define MCNN_INSTANTIATE(S)                                                                               \
  template void sgd_step(Tensor<S>&, const Tensor<S>&, Tensor<S>&, double, double, double);              \
  template TrainResult<S> train(const NetworkTopology&, NetworkParams<S>, const BatchSource&,             \
                                const HyperParams&, const FreezeMask&, const std::string&,                \
                                const EpochCallback&);                                                    \
  template Tensor<S> predict_scores(const NetworkTopology&, const NetworkParams<S>&, const BatchSource&, \
                                    std::span<const Index>, Index, int);                                  \
  template MetricsReport evaluate(const NetworkTopology&, const NetworkParams<S>&, const BatchSource&,   \
                                  Split, Index, int);                                                     \
  template Tensor<S> train_aux_on_scores(const Tensor<S>&, const LabelMatrix&, Tensor<S>,                \
                                         const HyperParams&, std::vector<EpochRecord>&,                   \
                                         const EpochCallback&);                                           \
  template TwoStageResult<S> train_two_stage(const NetworkTopology&, const BatchSource&,                 \
                                             const HyperParams&, const EpochCallback&);

MCNN_INSTANTIATE(float)
MCNN_INSTANTIATE(double)
#undef MCNN_INSTANTIATE

}  // namespace mcnn
