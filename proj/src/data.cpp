#include "mcnn/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace mcnn {
namespace {

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string t; ss >> t;) out.push_back(t);
  return out;
}

[[noreturn]] void fail(const std::string& source, long line, const std::string& what) {
  throw DataError(source + ":" + std::to_string(line) + ": " + what);
}

std::string stem_of(const std::string& id) {
  const auto dot = id.rfind('.');
  return dot == std::string::npos ? id : id.substr(0, dot);
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

LabelFile parse_label_file(std::istream& in, const std::string& source) {
  std::string line;
  long lineno = 1;
  if (!std::getline(in, line)) fail(source, lineno, "missing record count");
  long expected = 0;
  {
    auto t = tokens(line);
    try {
      size_t used = 0;
      if (t.size() != 1) throw std::invalid_argument("");
      expected = std::stol(t[0], &used);
      if (used != t[0].size() || expected < 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      fail(source, lineno, "expected a record count, got '" + line + "'");
    }
  }

  ++lineno;
  if (!std::getline(in, line)) fail(source, lineno, "missing attribute names");
  LabelFile file;
  try {
    file.vocab = AttributeVocab(tokens(line));
  } catch (const ConfigError& e) {
    fail(source, lineno, e.what());
  }
  const size_t width = static_cast<size_t>(file.vocab.size());

  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = tokens(line);
    if (t.empty()) continue;
    if (static_cast<long>(file.records.size()) == expected)
      fail(source, lineno, "more records than the declared " + std::to_string(expected));
    if (t.size() != width + 1)
      fail(source, lineno, "expected " + std::to_string(width + 1) + " fields, got " +
                               std::to_string(t.size()));
    if (!seen.insert(t[0]).second) fail(source, lineno, "duplicate image id " + t[0]);
    LabelRecord r{t[0], {}};
    r.labels.reserve(width);
    for (size_t j = 1; j <= width; ++j) {
      if (t[j] == "1") {
        r.labels.push_back(1);
      } else if (t[j] == "-1") {
        r.labels.push_back(0);
      } else {
        fail(source, lineno, "label '" + t[j] + "' for " + file.vocab.name(static_cast<Index>(j - 1)) +
                                 " is not -1 or 1");
      }
    }
    file.records.push_back(std::move(r));
  }
  if (static_cast<long>(file.records.size()) != expected)
    fail(source, lineno, "declared " + std::to_string(expected) + " records, found " +
                             std::to_string(file.records.size()));
  return file;
}

LabelFile parse_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_label_file(in, path.string());
}

void write_label_file(std::ostream& out, const LabelFile& file) {
  out << file.records.size() << '\n';
  for (Index j = 0; j < file.vocab.size(); ++j) out << (j ? " " : "") << file.vocab.name(j);
  out << '\n';
  for (const auto& r : file.records) {
    out << r.id;
    for (auto v : r.labels) out << (v ? "  1" : " -1");
    out << '\n';
  }
}

std::unordered_map<std::string, Split> parse_partition_file(std::istream& in,
                                                            const std::string& source) {
  std::unordered_map<std::string, Split> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 2) fail(source, lineno, "expected 'image_id split'");
    if (t[1] != "0" && t[1] != "1" && t[1] != "2")
      fail(source, lineno, "split must be 0, 1 or 2, got '" + t[1] + "'");
    if (!out.emplace(t[0], static_cast<Split>(t[1][0] - '0')).second)
      fail(source, lineno, "duplicate image id " + t[0]);
  }
  return out;
}

std::unordered_map<std::string, Split> parse_partition_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_partition_file(in, path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  auto labels = parse_label_file(root / "list_attr_celeba.txt");
  auto parts = parse_partition_file(root / "list_eval_partition.txt");
  m.vocab = std::move(labels.vocab);
  for (auto& r : labels.records) {
    auto it = parts.find(r.id);
    if (it == parts.end()) throw DataError("no partition entry for " + r.id);
    m.records.push_back({r.id, std::move(r.labels), it->second});
  }
  if (!m.records.empty()) {
    const auto stem = root / "images" / stem_of(m.records.front().id);
    if (std::filesystem::exists(stem.string() + ".mtt")) {
      m.format = ImageFormat::RawTensor;
    } else if (!std::filesystem::exists(stem.string() + ".ppm")) {
      throw DataError("no .ppm or .mtt image for " + m.records.front().id + " under " +
                      (root / "images").string());
    }
  }
  return m;
}

std::filesystem::path DatasetManifest::image_path(const ManifestRecord& r) const {
  return root / "images" / (stem_of(r.id) + file_extension(format));
}

std::vector<Index> Dataset::rows(Split split) const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i)
    if (splits[static_cast<size_t>(i)] == split) out.push_back(i);
  return out;
}

Shape Dataset::image_shape() const {
  if (images.empty()) throw DataError("empty dataset");
  const Shape& s = images.front().shape();
  for (size_t i = 1; i < images.size(); ++i)
    if (images[i].shape() != s)
      throw DataError("image " + ids[i] + " is " + shape_string(images[i].shape()) + ", expected " +
                      shape_string(s));
  return s;
}

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset d;
  d.vocab = manifest.vocab;
  const Index n = static_cast<Index>(manifest.records.size());
  BinaryMatrix values(n, d.vocab.size());
  for (Index i = 0; i < n; ++i) {
    const auto& r = manifest.records[static_cast<size_t>(i)];
    d.ids.push_back(r.id);
    d.images.push_back(read_image(manifest.image_path(r), manifest.format));
    d.splits.push_back(r.split);
    for (Index j = 0; j < d.vocab.size(); ++j) values(i, j) = r.labels[static_cast<size_t>(j)];
  }
  d.labels = LabelMatrix::full(std::move(values));
  return d;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root, ImageFormat format) {
  std::filesystem::create_directories(root / "images");
  LabelFile file{dataset.vocab, {}};
  std::ofstream parts(root / "list_eval_partition.txt");
  for (Index i = 0; i < dataset.size(); ++i) {
    const auto& id = dataset.ids[static_cast<size_t>(i)];
    LabelRecord r{id, {}};
    for (Index j = 0; j < dataset.vocab.size(); ++j) r.labels.push_back(dataset.labels.values(i, j));
    file.records.push_back(std::move(r));
    parts << id << ' ' << static_cast<int>(dataset.splits[static_cast<size_t>(i)]) << '\n';
    write_image(root / "images" / (stem_of(id) + file_extension(format)),
                dataset.images[static_cast<size_t>(i)], format);
  }
  std::ofstream labels(root / "list_attr_celeba.txt");
  write_label_file(labels, file);
  if (!labels || !parts) throw DataError("failed writing dataset to " + root.string());
}

Tensorf compute_mean(const Dataset& dataset, MeanMode mode) {
  const auto rows = dataset.rows(Split::Train);
  if (rows.empty()) throw DataError("training split is empty");
  const Shape shape = dataset.image_shape();
  // Accumulate in double so the mean of many 8-bit images stays exact enough
  // for the zero-mean property after subtraction.
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(shape_size(shape));
  for (Index r : rows) sum += dataset.images[static_cast<size_t>(r)].array().cast<double>();
  sum /= static_cast<double>(rows.size());
  if (mode == MeanMode::PerChannel) {
    const Index plane = shape[1] * shape[2];
    for (Index c = 0; c < shape[0]; ++c) sum.segment(c * plane, plane) = sum.segment(c * plane, plane).mean();
  }
  Tensorf mean(shape);
  mean.array() = sum.cast<float>();
  return mean;
}

CropOffset crop_offset(Index height, Index width, Index crop_h, Index crop_w, Mode mode, Rng* rng) {
  if (crop_h > height || crop_w > width || crop_h < 1 || crop_w < 1)
    throw DimensionError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                         " does not fit a " + std::to_string(height) + "x" + std::to_string(width) +
                         " image");
  if (mode == Mode::Eval) return {(height - crop_h) / 2, (width - crop_w) / 2};
  if (!rng) throw ContractError("random crop needs an rng");
  std::uniform_int_distribution<Index> dy(0, height - crop_h), dx(0, width - crop_w);
  const Index y = dy(*rng);
  return {y, dx(*rng)};
}

Tensorf preprocess(const Tensorf& image, const Tensorf& mean, Index crop_h, Index crop_w, Mode mode,
                   Rng* rng) {
  if (image.shape() != mean.shape())
    throw DimensionError("image " + shape_string(image.shape()) + " vs mean " + shape_string(mean.shape()));
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto off = crop_offset(h, w, crop_h, crop_w, mode, rng);
  Tensorf out({c, crop_h, crop_w});
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < crop_h; ++y)
      for (Index x = 0; x < crop_w; ++x) {
        const Index src = (ch * h + y + off.y) * w + x + off.x;
        out[(ch * crop_h + y) * crop_w + x] = image[src] - mean[src];
      }
  return out;
}

JitterGrid JitterGrid::square(Index step) {
  JitterGrid g;
  for (Index dy : {-step, Index(0), step})
    for (Index dx : {-step, Index(0), step}) g.offsets.emplace_back(dy, dx);
  return g;
}

JitterGrid JitterGrid::parse(std::string_view text) {
  JitterGrid g;
  std::istringstream ss{std::string(text)};
  for (std::string tok; ss >> tok;) {
    const auto colon = tok.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument("");
      g.offsets.emplace_back(std::stol(tok.substr(0, colon)), std::stol(tok.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("jitter offset '" + tok + "' is not of the form dy:dx");
    }
  }
  if (g.offsets.empty()) throw ConfigError("jitter grid is empty");
  return g;
}

std::vector<Tensorf> jitter_augment(const Tensorf& image, const JitterGrid& grid) {
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<Tensorf> out;
  out.reserve(grid.offsets.size());
  for (auto [dy, dx] : grid.offsets) {
    Tensorf shifted(image.shape());
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < h; ++y) {
        const Index sy = std::clamp(y - dy, Index(0), h - 1);
        for (Index x = 0; x < w; ++x) {
          const Index sx = std::clamp(x - dx, Index(0), w - 1);
          shifted[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
        }
      }
    out.push_back(std::move(shifted));
  }
  return out;
}

Dataset jitter_dataset(const Dataset& dataset, const JitterGrid& grid) {
  Dataset out;
  out.vocab = dataset.vocab;
  std::vector<Index> source;
  for (Index i = 0; i < dataset.size(); ++i) {
    const auto& id = dataset.ids[static_cast<size_t>(i)];
    const Split split = dataset.splits[static_cast<size_t>(i)];
    if (split != Split::Train) {
      out.ids.push_back(id);
      out.images.push_back(dataset.images[static_cast<size_t>(i)]);
      out.splits.push_back(split);
      source.push_back(i);
      continue;
    }
    auto variants = jitter_augment(dataset.images[static_cast<size_t>(i)], grid);
    for (size_t k = 0; k < variants.size(); ++k) {
      out.ids.push_back(id + "#" + std::to_string(k));
      out.images.push_back(std::move(variants[k]));
      out.splits.push_back(split);
      source.push_back(i);
    }
  }
  out.labels = dataset.labels.select_rows(source);
  return out;
}

BatchSource::BatchSource(const Dataset& dataset, Tensorf mean, Index crop_h, Index crop_w)
    : dataset_(&dataset), mean_(std::move(mean)), crop_h_(crop_h), crop_w_(crop_w),
      train_rows_(dataset.rows(Split::Train)) {
  const Shape s = dataset.image_shape();
  if (mean_.shape() != s)
    throw DimensionError("mean " + shape_string(mean_.shape()) + " vs images " + shape_string(s));
  crop_offset(s[1], s[2], crop_h, crop_w, Mode::Eval, nullptr);
}

Shape BatchSource::input_shape() const { return {mean_.dim(0), crop_h_, crop_w_}; }

std::vector<Index> shuffled(std::vector<Index> rows, std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  Rng rng(seq);
  std::shuffle(rows.begin(), rows.end(), rng);
  return rows;
}

std::vector<Index> BatchSource::epoch_order(std::uint64_t seed, int epoch) const {
  return shuffled(train_rows_, seed, epoch);
}

template <typename Scalar>
Tensor<Scalar> BatchSource::images(std::span<const Index> rows, Mode mode, Rng* rng) const {
  const Index per = mean_.dim(0) * crop_h_ * crop_w_;
  Tensor<Scalar> out({static_cast<Index>(rows.size()), mean_.dim(0), crop_h_, crop_w_});
  for (size_t i = 0; i < rows.size(); ++i) {
    const Tensorf img = preprocess(dataset_->images[static_cast<size_t>(rows[i])], mean_, crop_h_, crop_w_,
                                   mode, rng);
    for (Index k = 0; k < per; ++k) out[static_cast<Index>(i) * per + k] = static_cast<Scalar>(img[k]);
  }
  return out;
}

LabelMatrix BatchSource::labels(std::span<const Index> rows) const {
  return dataset_->labels.select_rows({rows.begin(), rows.end()});
}

template Tensor<float> BatchSource::images(std::span<const Index>, Mode, Rng*) const;
template Tensor<double> BatchSource::images(std::span<const Index>, Mode, Rng*) const;

}  // namespace mcnn
