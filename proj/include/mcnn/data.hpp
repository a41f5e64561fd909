#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcnn/images.hpp"
#include "mcnn/layers.hpp"
#include "mcnn/loss.hpp"
#include "mcnn/topology.hpp"

namespace mcnn {

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split s);
Split parse_split(std::string_view text);

struct LabelRecord {
  std::string id;
  std::vector<std::uint8_t> labels;  // one 0/1 entry per vocabulary name
};

struct LabelFile {
  AttributeVocab vocab;
  std::vector<LabelRecord> records;
};

/// CelebA list_attr format: a record count, a line of 40 names, then one line
/// per image with an id and 40 values in {-1, 1}. Errors carry line numbers.
LabelFile parse_label_file(std::istream& in, const std::string& source = "<stream>");
LabelFile parse_label_file(const std::filesystem::path& path);
void write_label_file(std::ostream& out, const LabelFile& file);

/// CelebA list_eval_partition format: "image_id digit", 0/1/2 = train/val/test.
std::unordered_map<std::string, Split> parse_partition_file(std::istream& in,
                                                            const std::string& source = "<stream>");
std::unordered_map<std::string, Split> parse_partition_file(const std::filesystem::path& path);

struct ManifestRecord {
  std::string id;
  std::vector<std::uint8_t> labels;
  Split split = Split::Train;
};

/// A dataset directory: list_attr_celeba.txt, list_eval_partition.txt and
/// images/<stem>.ppm or images/<stem>.mtt, where <stem> is the id without
/// its extension.
struct DatasetManifest {
  std::filesystem::path root;
  AttributeVocab vocab;
  std::vector<ManifestRecord> records;
  ImageFormat format = ImageFormat::Ppm;

  static DatasetManifest load(const std::filesystem::path& root);
  std::filesystem::path image_path(const ManifestRecord& r) const;
};

/// Images and labels held in memory.
struct Dataset {
  AttributeVocab vocab;
  std::vector<std::string> ids;
  std::vector<Tensorf> images;  // [C, H, W] each
  LabelMatrix labels;           // rows follow `images`
  std::vector<Split> splits;

  Index size() const { return static_cast<Index>(images.size()); }
  std::vector<Index> rows(Split split) const;
  Shape image_shape() const;  // DataError if images differ in shape
};

Dataset load_dataset(const DatasetManifest& manifest);
// Writes `dataset` in the directory layout DatasetManifest::load reads.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root, ImageFormat format);

enum class MeanMode { PerPixel, PerChannel };

/// Mean of the training split, shape [C, H, W]. PerChannel fills each
/// channel plane with that channel's overall mean.
Tensorf compute_mean(const Dataset& dataset, MeanMode mode = MeanMode::PerPixel);

struct CropOffset {
  Index y = 0;
  Index x = 0;
};

/// Uniform over the valid top-left positions in train mode, centred in eval mode.
CropOffset crop_offset(Index height, Index width, Index crop_h, Index crop_w, Mode mode, Rng* rng);

/// Mean subtraction followed by a crop to crop_h x crop_w.
Tensorf preprocess(const Tensorf& image, const Tensorf& mean, Index crop_h, Index crop_w, Mode mode,
                   Rng* rng);

/// Pixel translations applied by jittering, as (dy, dx).
struct JitterGrid {
  std::vector<std::pair<Index, Index>> offsets;

  // {-step, 0, step}^2, nine offsets.
  static JitterGrid square(Index step);
  // Parses "dy:dx dy:dx ...".
  static JitterGrid parse(std::string_view text);
};

/// One translated copy of `image` per grid offset; pixels shifted in from
/// outside the image repeat the nearest edge pixel.
std::vector<Tensorf> jitter_augment(const Tensorf& image, const JitterGrid& grid);

/// Replaces every training image by its jittered variants; val and test rows
/// are kept unchanged. Variant ids get a "#k" suffix.
Dataset jitter_dataset(const Dataset& dataset, const JitterGrid& grid);

/// `rows` permuted by a generator seeded from (seed, epoch).
std::vector<Index> shuffled(std::vector<Index> rows, std::uint64_t seed, int epoch);

/// Preprocessing state shared by training and evaluation.
class BatchSource {
 public:
  BatchSource(const Dataset& dataset, Tensorf mean, Index crop_h, Index crop_w);

  const Dataset& dataset() const { return *dataset_; }
  const Tensorf& mean() const { return mean_; }
  Shape input_shape() const;

  // Training rows in the order used for `epoch`; a fixed function of (seed, epoch).
  std::vector<Index> epoch_order(std::uint64_t seed, int epoch) const;

  template <typename Scalar>
  Tensor<Scalar> images(std::span<const Index> rows, Mode mode, Rng* rng) const;
  LabelMatrix labels(std::span<const Index> rows) const;

 private:
  const Dataset* dataset_;
  Tensorf mean_;
  Index crop_h_;
  Index crop_w_;
  std::vector<Index> train_rows_;
};

}  // namespace mcnn
