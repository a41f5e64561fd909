#include "mcnn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mcnn {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) out.push_back(trim(part));
  return out;
}

constexpr std::string_view kRunKeys[] = {
    "variant",   "attribute", "data",     "groups",     "scale",    "out",       "seed",
    "epochs",    "batch",     "lr",       "momentum",   "weight_decay", "lr_step", "lr_gamma",
    "aux_epochs", "aux_lr",   "threads",  "precision",  "mean",     "jitter_step", "jitter",
    "aux_input"};

constexpr std::string_view kSynthKeys[] = {"train", "val",         "test",       "size",      "noise",
                                           "intensity", "label_noise", "prevalence", "synth_seed", "pair"};

}  // namespace

double parse_double(const std::string& text, const std::string& what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(what + ": '" + text + "' is not a number");
  return v;
}

long parse_long(const std::string& text, const std::string& what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(what + ": '" + text + "' is not an integer");
  return v;
}

KeyValueFile KeyValueFile::parse(std::istream& in, const std::string& source) {
  KeyValueFile f;
  f.source_ = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    Entry e{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), lineno};
    if (e.key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    f.entries_.push_back(std::move(e));
  }
  return f;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in, path.string());
}

std::optional<std::string> KeyValueFile::get(std::string_view key) const {
  std::optional<std::string> v;
  for (const auto& e : entries_)
    if (e.key == key) v = e.value;
  return v;
}

bool RunConfig::is_key(std::string_view key) {
  for (auto k : kRunKeys)
    if (k == key) return true;
  return false;
}

bool is_synthetic_key(std::string_view key) {
  if (key.starts_with("prevalence.")) return true;
  for (auto k : kSynthKeys)
    if (k == key) return true;
  return false;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") {
    variant = parse_variant(value);
  } else if (key == "attribute") {
    attribute = value;
  } else if (key == "data") {
    data = value;
  } else if (key == "groups") {
    groups = value;
  } else if (key == "scale") {
    TopologyConfig::by_name(value);  // validates
    scale = value;
  } else if (key == "out") {
    out = value;
  } else if (key == "seed") {
    const long s = parse_long(value, key);
    if (s < 0) throw ConfigError("seed must be >= 0");
    hyper.seed = static_cast<std::uint64_t>(s);
  } else if (key == "epochs") {
    hyper.epochs = static_cast<int>(parse_long(value, key));
  } else if (key == "batch") {
    hyper.batch_size = parse_long(value, key);
  } else if (key == "lr") {
    hyper.lr = parse_double(value, key);
  } else if (key == "momentum") {
    hyper.momentum = parse_double(value, key);
  } else if (key == "weight_decay") {
    hyper.weight_decay = parse_double(value, key);
  } else if (key == "lr_step") {
    hyper.lr_step = static_cast<int>(parse_long(value, key));
  } else if (key == "lr_gamma") {
    hyper.lr_gamma = parse_double(value, key);
  } else if (key == "aux_epochs") {
    hyper.aux_epochs = static_cast<int>(parse_long(value, key));
  } else if (key == "aux_lr") {
    hyper.aux_lr = parse_double(value, key);
  } else if (key == "threads") {
    hyper.threads = static_cast<int>(parse_long(value, key));
  } else if (key == "precision") {
    hyper.precision = parse_precision(value);
  } else if (key == "mean") {
    if (value == "per_pixel") {
      mean = MeanMode::PerPixel;
    } else if (value == "per_channel") {
      mean = MeanMode::PerChannel;
    } else {
      throw ConfigError("mean must be per_pixel or per_channel");
    }
  } else if (key == "jitter_step") {
    const long step = parse_long(value, key);
    if (step < 0) throw ConfigError("jitter_step must be >= 0");
    jitter = step > 0 ? std::optional(JitterGrid::square(step)) : std::nullopt;
  } else if (key == "jitter") {
    jitter = JitterGrid::parse(value);
  } else if (key == "aux_input") {
    if (value == "raw") {
      aux_input = AuxInput::Raw;
    } else if (value == "sigmoid") {
      aux_input = AuxInput::Sigmoid;
    } else {
      throw ConfigError("aux_input must be raw or sigmoid");
    }
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

void RunConfig::apply(const KeyValueFile& file) {
  for (const auto& e : file.entries()) {
    if (is_synthetic_key(e.key)) continue;
    try {
      set(e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(file.source() + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
}

SyntheticSpec synthetic_spec(const KeyValueFile& file) {
  SyntheticSpec s;
  std::vector<std::pair<std::string, double>> named_prevalence;
  for (const auto& e : file.entries()) {
    if (!is_synthetic_key(e.key)) continue;
    const std::string where = file.source() + ":" + std::to_string(e.line) + ": " + e.key;
    if (e.key == "train") {
      s.train = parse_long(e.value, where);
    } else if (e.key == "val") {
      s.val = parse_long(e.value, where);
    } else if (e.key == "test") {
      s.test = parse_long(e.value, where);
    } else if (e.key == "size") {
      const auto x = e.value.find('x');
      s.height = parse_long(e.value.substr(0, x), where);
      s.width = x == std::string::npos ? s.height : parse_long(e.value.substr(x + 1), where);
    } else if (e.key == "noise") {
      s.noise = parse_double(e.value, where);
    } else if (e.key == "intensity") {
      s.intensity = parse_double(e.value, where);
    } else if (e.key == "label_noise") {
      s.label_noise = parse_double(e.value, where);
    } else if (e.key == "synth_seed") {
      s.seed = static_cast<std::uint64_t>(parse_long(e.value, where));
    } else if (e.key == "prevalence") {
      s.prevalence.assign(static_cast<size_t>(s.vocab.size()), parse_double(e.value, where));
    } else if (e.key.starts_with("prevalence.")) {
      named_prevalence.emplace_back(e.key.substr(11), parse_double(e.value, where));
    } else if (e.key == "pair") {
      const auto parts = split_commas(e.value);
      if (parts.size() != 3) throw ConfigError(where + ": expected 'pair = A, B, rho'");
      s.pairs.push_back({parts[0], parts[1], parse_double(parts[2], where)});
    }
  }
  if (!named_prevalence.empty() && s.prevalence.empty())
    s.prevalence.assign(static_cast<size_t>(s.vocab.size()), 0.5);
  for (const auto& [name, p] : named_prevalence) s.prevalence[static_cast<size_t>(s.vocab.index_of(name))] = p;
  s.validate();
  return s;
}

}  // namespace mcnn
