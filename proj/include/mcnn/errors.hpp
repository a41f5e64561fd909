#pragma once

#include <stdexcept>
#include <string>

namespace mcnn {

// Shapes that do not fit together.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad settings: unknown init scheme, invalid grouping, bad flag values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward without a forward cache.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input files and labels.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  DivergenceError(std::string msg, int epoch, int batch)
      : std::runtime_error(std::move(msg)), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

}  // namespace mcnn
