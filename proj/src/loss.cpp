#include "mcnn/loss.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace mcnn {

LabelMatrix LabelMatrix::full(BinaryMatrix values) {
  LabelMatrix m;
  m.mask = BinaryMatrix::Ones(values.rows(), values.cols());
  m.values = std::move(values);
  return m;
}

void LabelMatrix::validate() const {
  if (values.rows() != mask.rows() || values.cols() != mask.cols())
    throw DataError("label values and mask differ in shape");
  if ((values > 1).any()) throw DataError("label value outside {0, 1}");
  if ((mask > 1).any()) throw DataError("label mask outside {0, 1}");
}

LabelMatrix LabelMatrix::select_rows(const std::vector<Index>& rows) const {
  LabelMatrix out;
  out.values.resize(static_cast<Index>(rows.size()), cols());
  out.mask.resize(static_cast<Index>(rows.size()), cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Index>(i)) = values.row(rows[i]);
    out.mask.row(static_cast<Index>(i)) = mask.row(rows[i]);
  }
  return out;
}

LabelMatrix LabelMatrix::select_cols(const std::vector<Index>& cols) const {
  LabelMatrix out;
  out.values.resize(rows(), static_cast<Index>(cols.size()));
  out.mask.resize(rows(), static_cast<Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Index>(j)) = values.col(cols[j]);
    out.mask.col(static_cast<Index>(j)) = mask.col(cols[j]);
  }
  return out;
}

template <typename Scalar>
LossResult<Scalar> sigmoid_ce(const Tensor<Scalar>& scores, const LabelMatrix& labels) {
  labels.validate();
  if (scores.rank() != 2 || scores.dim(0) != labels.rows() || scores.dim(1) != labels.cols())
    throw DimensionError("scores " + shape_string(scores.shape()) + " vs labels [" +
                         std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()) + "]");
  const Index n = scores.dim(0), a = scores.dim(1);
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(scores.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < a; ++j) {
      if (!labels.mask(i, j)) continue;
      const double s = static_cast<double>(scores[i * a + j]);
      const double y = labels.values(i, j);
      total += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
      const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      r.grad[i * a + j] = static_cast<Scalar>((p - y) * inv_n);
    }
  }
  r.loss = total * inv_n;
  return r;
}

template <typename Scalar>
BinaryMatrix threshold(const Tensor<Scalar>& scores) {
  const auto m = scores.flat2d();
  return (m.array() >= Scalar(0)).template cast<std::uint8_t>();
}

std::vector<Fraction> accuracy(const BinaryMatrix& predictions, const LabelMatrix& labels) {
  labels.validate();
  if (predictions.rows() != labels.rows() || predictions.cols() != labels.cols())
    throw DimensionError("predictions and labels differ in shape");
  std::vector<Fraction> out;
  for (Index j = 0; j < labels.cols(); ++j) {
    Index total = 0, hits = 0;
    for (Index i = 0; i < labels.rows(); ++i) {
      if (!labels.mask(i, j)) continue;
      ++total;
      hits += predictions(i, j) == labels.values(i, j);
    }
    out.push_back(total ? Fraction(static_cast<double>(hits) / static_cast<double>(total))
                        : std::nullopt);
  }
  return out;
}

std::vector<Fraction> majority_baseline(const LabelMatrix& train, const LabelMatrix& test) {
  train.validate();
  test.validate();
  if (train.cols() != test.cols()) throw DimensionError("train and test label widths differ");
  std::vector<Fraction> out;
  for (Index j = 0; j < train.cols(); ++j) {
    Index ones = 0, zeros = 0;
    for (Index i = 0; i < train.rows(); ++i) {
      if (!train.mask(i, j)) continue;
      (train.values(i, j) ? ones : zeros) += 1;
    }
    Index total = 0, hits = 0;
    const std::uint8_t majority = ones > zeros ? 1 : 0;
    for (Index i = 0; i < test.rows(); ++i) {
      if (!test.mask(i, j)) continue;
      ++total;
      hits += test.values(i, j) == majority;
    }
    if (ones + zeros == 0 || total == 0) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(static_cast<double>(hits) / static_cast<double>(total));
    }
  }
  return out;
}

Fraction mean_of(const std::vector<Fraction>& values) {
  double sum = 0;
  int n = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++n;
    }
  return n ? Fraction(sum / n) : std::nullopt;
}

namespace {

std::string format_fraction(const Fraction& f) {
  if (!f) return "NA";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, *f);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::vector<Fraction> parse_row(const std::vector<std::string>& cells, const char* label) {
  if (cells.empty() || cells[0] != label)
    throw DataError(std::string("metrics CSV: expected row '") + label + "'");
  std::vector<Fraction> out;
  for (size_t i = 1; i < cells.size(); ++i) {
    if (cells[i] == "NA") {
      out.push_back(std::nullopt);
      continue;
    }
    double v = 0;
    auto [ptr, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
    if (ec != std::errc()) throw DataError("metrics CSV: bad number '" + cells[i] + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

void MetricsReport::write_csv(std::ostream& out) const {
  out << "metric";
  for (const auto& a : attributes) out << ',' << a;
  out << "\naccuracy";
  for (const auto& f : per_attribute_accuracy) out << ',' << format_fraction(f);
  out << "\nbaseline";
  for (const auto& f : baseline_accuracy) out << ',' << format_fraction(f);
  out << '\n';
}

MetricsReport MetricsReport::read_csv(std::istream& in) {
  std::string header, acc, base;
  if (!std::getline(in, header) || !std::getline(in, acc) || !std::getline(in, base))
    throw DataError("metrics CSV: expected three lines");
  MetricsReport r;
  auto cells = split_csv(header);
  if (cells.empty() || cells[0] != "metric") throw DataError("metrics CSV: bad header");
  r.attributes.assign(cells.begin() + 1, cells.end());
  r.per_attribute_accuracy = parse_row(split_csv(acc), "accuracy");
  r.baseline_accuracy = parse_row(split_csv(base), "baseline");
  if (r.per_attribute_accuracy.size() != r.attributes.size() ||
      r.baseline_accuracy.size() != r.attributes.size())
    throw DataError("metrics CSV: row width does not match header");
  r.mean_accuracy = mean_of(r.per_attribute_accuracy);
  return r;
}

template LossResult<float> sigmoid_ce(const Tensor<float>&, const LabelMatrix&);
template LossResult<double> sigmoid_ce(const Tensor<double>&, const LabelMatrix&);
template BinaryMatrix threshold(const Tensor<float>&);
template BinaryMatrix threshold(const Tensor<double>&);

}  // namespace mcnn
