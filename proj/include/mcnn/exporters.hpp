#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mcnn/tensor.hpp"

namespace mcnn {

/// AUX weight matrix as CSV: a header of column names (the MCNN outputs),
/// then one row per AUX output starting with its name. Values use the
/// shortest representation that parses back to the same Scalar.
template <typename Scalar>
void write_heatmap_csv(std::ostream& out, const std::vector<std::string>& names, const Tensor<Scalar>& weights);

template <typename Scalar>
struct HeatmapCsv {
  std::vector<std::string> names;
  Tensor<Scalar> weights;
};
template <typename Scalar>
HeatmapCsv<Scalar> read_heatmap_csv(std::istream& in);

// Grey level of weight w in the single-image heatmap, S = max |w|.
int heatmap_gray(double w, double scale);

/// Binary PGM; each weight becomes a cell x cell square with grey level
/// 128 + 127 * w / S (rounded), so 128 is zero and 255 the largest weight.
template <typename Scalar>
void write_heatmap_pgm(std::ostream& out, const Tensor<Scalar>& weights, Index cell = 1);

/// Two PGMs for colour rendering: 255 * max(w, 0) / S and 255 * max(-w, 0) / S.
template <typename Scalar>
void write_signed_pgm(std::ostream& positive, std::ostream& negative, const Tensor<Scalar>& weights,
                      Index cell = 1);

struct GrayImage {
  Index width = 0;
  Index height = 0;
  int maxval = 255;
  std::vector<std::string> comments;
  std::vector<std::uint8_t> pixels;  // row-major
};
GrayImage read_pgm(std::istream& in);

struct Influence {
  std::string name;
  double weight = 0.0;
};

struct RelationshipRow {
  std::string attribute;
  std::vector<Influence> positive;  // by |weight|, largest first
  std::vector<Influence> negative;
};

struct RelationshipTable {
  double tau = 0.5;
  double max_offdiag = 0.0;
  std::vector<RelationshipRow> rows;

  // Aligned three-column text; empty lists read "N/A".
  std::string text() const;
};

/// Row i lists j != i with w[i][j] >= tau * M as positive influences and
/// w[i][j] <= -tau * M as negative ones, M = max |off-diagonal w|. A matrix
/// without off-diagonal weight has no influences.
template <typename Scalar>
RelationshipTable extract_relationships(const std::vector<std::string>& names, const Tensor<Scalar>& weights,
                                        double tau = 0.5);

}  // namespace mcnn
