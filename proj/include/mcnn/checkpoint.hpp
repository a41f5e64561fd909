#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mcnn/trainer.hpp"

namespace mcnn {

template <typename Scalar>
struct Checkpoint {
  NetworkTopology topology;
  NetworkParams<Scalar> params;
  FreezeMask freeze;
  HyperParams hyper;
  std::vector<EpochRecord> history;
};

// File layout:
//   MCNNCKPT1\n
//   <header byte count>\n
//   <JSON header: topology config, vocabulary, grouping, variant, freeze
//    flags, hyperparameters, loss history and, per tensor, name, shape,
//    dtype and byte offset into the blob>\n
//   <blob: every tensor in parameter order, little-endian>
template <typename Scalar>
void save_checkpoint(std::ostream& out, const Checkpoint<Scalar>& ckpt);
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt);

/// Throws CheckpointError on a malformed header, a tensor list that does not
/// match the rebuilt topology, a dtype other than Scalar's, or a truncated
/// blob (naming the first tensor that cannot be read).
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(std::istream& in);
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Element type recorded in a checkpoint header.
Precision checkpoint_precision(const std::filesystem::path& path);

/// CheckpointError unless the checkpoint was built with `config`.
void require_config(const NetworkTopology& topology, const TopologyConfig& config);

}  // namespace mcnn
