#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

using BinaryMatrix = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x A binary labels. mask(n, a) == 1 marks a present label.
struct LabelMatrix {
  BinaryMatrix values;
  BinaryMatrix mask;

  static LabelMatrix full(BinaryMatrix values);
  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  // Throws DataError if any entry is outside {0, 1} or the shapes differ.
  void validate() const;
  LabelMatrix select_rows(const std::vector<Index>& rows) const;
  LabelMatrix select_cols(const std::vector<Index>& cols) const;
};

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  Tensor<Scalar> grad;  // d loss / d scores
};

/// Multi-label sigmoid cross-entropy, summed over attributes and divided by
/// the batch size N. Uses max(s,0) - s*y + log(1 + exp(-|s|)) per entry;
/// masked-out entries contribute neither loss nor gradient.
template <typename Scalar>
LossResult<Scalar> sigmoid_ce(const Tensor<Scalar>& scores, const LabelMatrix& labels);

/// 1 where score >= 0.
template <typename Scalar>
BinaryMatrix threshold(const Tensor<Scalar>& scores);

using Fraction = std::optional<double>;  // nullopt: no labelled rows

std::vector<Fraction> accuracy(const BinaryMatrix& predictions, const LabelMatrix& labels);

/// Accuracy on `test` of always predicting the training majority label.
/// Ties go to label 0.
std::vector<Fraction> majority_baseline(const LabelMatrix& train, const LabelMatrix& test);

struct MetricsReport {
  std::vector<std::string> attributes;
  std::vector<Fraction> per_attribute_accuracy;
  std::vector<Fraction> baseline_accuracy;
  Fraction mean_accuracy;
  double loss = 0.0;

  // Header row of attribute names; one row each for accuracy and baseline.
  // Undefined entries are written as NA.
  void write_csv(std::ostream& out) const;
  static MetricsReport read_csv(std::istream& in);
};

Fraction mean_of(const std::vector<Fraction>& values);

}  // namespace mcnn
