#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcnn/data.hpp"
#include "mcnn/synthetic.hpp"
#include "mcnn/trainer.hpp"

namespace mcnn {

/// `key = value` lines; `#` starts a comment. Keys may repeat.
class KeyValueFile {
 public:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };

  static KeyValueFile parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueFile load(const std::filesystem::path& path);

  const std::string& source() const { return source_; }
  const std::vector<Entry>& entries() const { return entries_; }
  // Last value given for `key`.
  std::optional<std::string> get(std::string_view key) const;

 private:
  std::string source_;
  std::vector<Entry> entries_;
};

/// Settings shared by the command-line tools. Every field has a default;
/// a config file overrides defaults and flags override the file.
struct RunConfig {
  Variant variant = Variant::Mcnn;
  std::string attribute;
  std::filesystem::path data;
  std::filesystem::path groups;  // empty: built-in CelebA grouping
  std::string scale = "paper";
  std::filesystem::path out = "out";
  HyperParams hyper;
  MeanMode mean = MeanMode::PerPixel;
  std::optional<JitterGrid> jitter;  // unset: no augmentation
  AuxInput aux_input = AuxInput::Raw;

  // Applies the run keys of `file`; synthetic-data keys are skipped and any
  // other key is a ConfigError naming its line.
  void apply(const KeyValueFile& file);
  void set(const std::string& key, const std::string& value);
  static bool is_key(std::string_view key);
};

/// Synthetic-data keys of `file`: train, val, test, size, noise, intensity,
/// label_noise, prevalence, prevalence.<Name>, synth_seed and repeated
/// `pair = A, B, rho` lines.
SyntheticSpec synthetic_spec(const KeyValueFile& file);
bool is_synthetic_key(std::string_view key);

// Strict numeric parsing; ConfigError names `what` on failure.
double parse_double(const std::string& text, const std::string& what);
long parse_long(const std::string& text, const std::string& what);

}  // namespace mcnn
