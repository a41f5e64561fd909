#include "mcnn/exporters.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace mcnn {
namespace {

template <typename Scalar>
Index square_size(const Tensor<Scalar>& w) {
  if (w.rank() != 2 || w.dim(0) != w.dim(1))
    throw DimensionError("expected a square weight matrix, got " + shape_string(w.shape()));
  return w.dim(0);
}

template <typename Scalar>
double max_abs(const Tensor<Scalar>& w) {
  return w.empty() ? 0.0 : static_cast<double>(w.array().abs().maxCoeff());
}

template <typename Scalar>
std::string format_value(Scalar v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

void pgm_header(std::ostream& out, Index side, const std::string& comment) {
  out << "P5\n# " << comment << "\n" << side << ' ' << side << "\n255\n";
}

template <typename Scalar, typename F>
void pgm_pixels(std::ostream& out, const Tensor<Scalar>& w, Index cell, F&& level) {
  const Index n = w.dim(0);
  std::string row(static_cast<size_t>(n * cell), '\0');
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j)
      std::fill_n(row.begin() + j * cell, cell, static_cast<char>(level(static_cast<double>(w[i * n + j]))));
    for (Index r = 0; r < cell; ++r) out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

std::string pgm_token(std::istream& in, std::vector<std::string>& comments) {
  std::string tok;
  int c = in.get();
  while (in) {
    if (c == '#' && tok.empty()) {
      std::string line;
      std::getline(in, line);
      const auto first = line.find_first_not_of(' ');
      comments.push_back(first == std::string::npos ? std::string() : line.substr(first));
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else {
      tok.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return tok;
}

std::string join(const std::vector<Influence>& list) {
  if (list.empty()) return "N/A";
  std::string out;
  for (const auto& inf : list) {
    char w[32];
    std::snprintf(w, sizeof w, "%+.3f", inf.weight);
    if (!out.empty()) out += ", ";
    out += inf.name + " (" + w + ")";
  }
  return out;
}

}  // namespace

template <typename Scalar>
void write_heatmap_csv(std::ostream& out, const std::vector<std::string>& names, const Tensor<Scalar>& weights) {
  const Index n = square_size(weights);
  if (static_cast<Index>(names.size()) != n) throw DimensionError("heatmap: one name per row required");
  out << "aux_output";
  for (const auto& name : names) out << ',' << name;
  out << '\n';
  for (Index i = 0; i < n; ++i) {
    out << names[static_cast<size_t>(i)];
    for (Index j = 0; j < n; ++j) out << ',' << format_value(weights[i * n + j]);
    out << '\n';
  }
}

template <typename Scalar>
HeatmapCsv<Scalar> read_heatmap_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("heatmap CSV: empty");
  auto header = split(line, ',');
  if (header.empty() || header[0] != "aux_output") throw DataError("heatmap CSV: bad header");
  HeatmapCsv<Scalar> h;
  h.names.assign(header.begin() + 1, header.end());
  const Index n = static_cast<Index>(h.names.size());
  h.weights = Tensor<Scalar>({n, n});
  for (Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw DataError("heatmap CSV: missing row " + std::to_string(i + 1));
    auto cells = split(line, ',');
    if (static_cast<Index>(cells.size()) != n + 1 || cells[0] != h.names[static_cast<size_t>(i)])
      throw DataError("heatmap CSV: malformed row " + std::to_string(i + 1));
    for (Index j = 0; j < n; ++j) {
      const auto& c = cells[static_cast<size_t>(j + 1)];
      Scalar v{};
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size()) throw DataError("heatmap CSV: bad number '" + c + "'");
      h.weights[i * n + j] = v;
    }
  }
  return h;
}

int heatmap_gray(double w, double scale) {
  if (scale <= 0) return 128;
  return static_cast<int>(std::lround(128.0 + 127.0 * w / scale));
}

template <typename Scalar>
void write_heatmap_pgm(std::ostream& out, const Tensor<Scalar>& weights, Index cell) {
  const Index n = square_size(weights);
  if (cell < 1) throw ConfigError("heatmap cell size must be >= 1");
  const double s = max_abs(weights);
  pgm_header(out, n * cell, "gray = 128 + 127*w/S, S = max|w| = " + format_value(s) +
                                "; rows: AUX outputs, columns: MCNN outputs");
  pgm_pixels(out, weights, cell, [&](double w) { return heatmap_gray(w, s); });
}

template <typename Scalar>
void write_signed_pgm(std::ostream& positive, std::ostream& negative, const Tensor<Scalar>& weights, Index cell) {
  const Index n = square_size(weights);
  if (cell < 1) throw ConfigError("heatmap cell size must be >= 1");
  const double s = max_abs(weights);
  auto level = [s](double w) { return s > 0 ? static_cast<int>(std::lround(255.0 * std::max(w, 0.0) / s)) : 0; };
  pgm_header(positive, n * cell, "gray = 255*max(w,0)/S, S = max|w| = " + format_value(s));
  pgm_pixels(positive, weights, cell, level);
  pgm_header(negative, n * cell, "gray = 255*max(-w,0)/S, S = max|w| = " + format_value(s));
  pgm_pixels(negative, weights, cell, [&](double w) { return level(-w); });
}

GrayImage read_pgm(std::istream& in) {
  GrayImage img;
  if (pgm_token(in, img.comments) != "P5") throw DataError("PGM: expected P5 magic");
  try {
    img.width = std::stol(pgm_token(in, img.comments));
    img.height = std::stol(pgm_token(in, img.comments));
    img.maxval = std::stoi(pgm_token(in, img.comments));
  } catch (const std::exception&) {
    throw DataError("PGM: bad header");
  }
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 255) throw DataError("PGM: bad header");
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw DataError("PGM: truncated pixel data");
  return img;
}

std::string RelationshipTable::text() const {
  const std::string h1 = "Attribute", h2 = "Positive Influences", h3 = "Negative Influences";
  size_t w1 = h1.size(), w2 = h2.size();
  std::vector<std::array<std::string, 3>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.attribute, join(r.positive), join(r.negative)});
    w1 = std::max(w1, cells.back()[0].size());
    w2 = std::max(w2, cells.back()[1].size());
  }
  auto pad = [](const std::string& s, size_t w) { return s + std::string(w - s.size(), ' '); };
  std::ostringstream out;
  char head[128];
  std::snprintf(head, sizeof head, "# tau = %g, max |off-diagonal weight| = %.6g\n", tau, max_offdiag);
  out << head;
  out << pad(h1, w1) << " | " << pad(h2, w2) << " | " << h3 << '\n';
  out << std::string(w1, '-') << "-+-" << std::string(w2, '-') << "-+-" << std::string(h3.size(), '-') << '\n';
  for (const auto& c : cells) out << pad(c[0], w1) << " | " << pad(c[1], w2) << " | " << c[2] << '\n';
  return out.str();
}

template <typename Scalar>
RelationshipTable extract_relationships(const std::vector<std::string>& names, const Tensor<Scalar>& weights,
                                        double tau) {
  const Index n = square_size(weights);
  if (static_cast<Index>(names.size()) != n) throw DimensionError("relationships: one name per row required");
  if (!(tau > 0 && tau <= 1)) throw ConfigError("relationship threshold must be in (0, 1]");
  RelationshipTable t;
  t.tau = tau;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) t.max_offdiag = std::max(t.max_offdiag, std::abs(static_cast<double>(weights[i * n + j])));
  const double cut = tau * t.max_offdiag;
  auto by_magnitude = [](const Influence& a, const Influence& b) { return std::abs(a.weight) > std::abs(b.weight); };
  for (Index i = 0; i < n; ++i) {
    RelationshipRow row{names[static_cast<size_t>(i)], {}, {}};
    if (t.max_offdiag > 0) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = static_cast<double>(weights[i * n + j]);
        if (w >= cut) row.positive.push_back({names[static_cast<size_t>(j)], w});
        if (w <= -cut) row.negative.push_back({names[static_cast<size_t>(j)], w});
      }
    }
    std::stable_sort(row.positive.begin(), row.positive.end(), by_magnitude);
    std::stable_sort(row.negative.begin(), row.negative.end(), by_magnitude);
    t.rows.push_back(std::move(row));
  }
  return t;
}

#define MCNN_INSTANTIATE(S)                                                                                  \
  template void write_heatmap_csv(std::ostream&, const std::vector<std::string>&, const Tensor<S>&);         \
  template HeatmapCsv<S> read_heatmap_csv(std::istream&);                                                   \
  template void write_heatmap_pgm(std::ostream&, const Tensor<S>&, Index);                                  \
  template void write_signed_pgm(std::ostream&, std::ostream&, const Tensor<S>&, Index);                    \
  template RelationshipTable extract_relationships(const std::vector<std::string>&, const Tensor<S>&, double);

MCNN_INSTANTIATE(float)
MCNN_INSTANTIATE(double)
#undef MCNN_INSTANTIATE

}  // namespace mcnn
