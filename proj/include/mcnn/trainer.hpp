#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mcnn/data.hpp"
#include "mcnn/loss.hpp"
#include "mcnn/network.hpp"

namespace mcnn {

enum class Precision { F32, F64 };
std::string to_string(Precision p);
Precision parse_precision(std::string_view text);

struct HyperParams {
  Index batch_size = 100;
  int epochs = 22;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int lr_step = 15;  // multiply the rate by lr_gamma every lr_step epochs; 0 disables
  double lr_gamma = 0.1;
  // Stage two of the MCNN-AUX schedule.
  int aux_epochs = 22;
  double aux_lr = 0.01;
  std::uint64_t seed = 1;
  Precision precision = Precision::F32;
  int threads = 1;  // evaluation workers; training is single threaded

  void validate() const;  // ConfigError
  double rate(double base, int epoch) const;
};

/// Mean train-mode loss over the batches of one epoch.
struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// v <- momentum * v + lr * (g + weight_decay * w);  w <- w - v
template <typename Scalar>
void sgd_step(Tensor<Scalar>& weight, const Tensor<Scalar>& grad, Tensor<Scalar>& velocity, double lr,
              double momentum, double weight_decay);

template <typename Scalar>
struct TrainResult {
  NetworkParams<Scalar> params;
  std::vector<EpochRecord> history;
};

/// Mini-batch SGD over the training split. Frozen tensors are neither
/// decayed nor updated. Throws DivergenceError on a non-finite batch loss.
template <typename Scalar>
TrainResult<Scalar> train(const NetworkTopology& topology, NetworkParams<Scalar> params,
                          const BatchSource& data, const HyperParams& hyper, const FreezeMask& freeze,
                          const std::string& stage = "train", const EpochCallback& on_epoch = {});

/// Eval-mode scores for `rows`, computed in batches of `batch_size`. Batches
/// are spread over `threads` workers; the result does not depend on it.
template <typename Scalar>
Tensor<Scalar> predict_scores(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                              const BatchSource& data, std::span<const Index> rows, Index batch_size,
                              int threads = 1);

/// Labels restricted to the topology's output columns.
LabelMatrix output_labels(const NetworkTopology& topology, const LabelMatrix& labels);

/// Eval-mode accuracy, baseline and loss on one split. Throws
/// CheckpointError if the dataset vocabulary differs from the topology's.
template <typename Scalar>
MetricsReport evaluate(const NetworkTopology& topology, const NetworkParams<Scalar>& params,
                       const BatchSource& data, Split split, Index batch_size = 100, int threads = 1);

template <typename Scalar>
struct TwoStageResult {
  NetworkTopology mcnn;
  NetworkParams<Scalar> mcnn_params;  // stage-one result
  NetworkTopology aux;
  NetworkParams<Scalar> aux_params;
  FreezeMask freeze;
  std::vector<EpochRecord> history;  // stage "mcnn" then stage "aux"
  // Eval-mode losses over the training split.
  double stage1_final_loss = 0.0;
  double stage2_initial_loss = 0.0;  // full MCNN-AUX forward, identity AUX
  double stage2_final_loss = 0.0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
};

/// Trains the MCNN, attaches an identity AUX layer, freezes everything else
/// and trains the AUX weights. The frozen network is deterministic in eval
/// mode, so stage two computes its scores once and trains on them.
template <typename Scalar>
TwoStageResult<Scalar> train_two_stage(const NetworkTopology& mcnn, const BatchSource& data,
                                       const HyperParams& hyper, const EpochCallback& on_epoch = {});

/// Stage two alone, on precomputed MCNN scores. Returns the trained AUX
/// weight and appends one record per epoch to `history`.
template <typename Scalar>
Tensor<Scalar> train_aux_on_scores(const Tensor<Scalar>& scores, const LabelMatrix& labels,
                                   Tensor<Scalar> aux_weight, const HyperParams& hyper,
                                   std::vector<EpochRecord>& history, const EpochCallback& on_epoch = {});

}  // namespace mcnn
