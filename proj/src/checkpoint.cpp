#include "mcnn/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace mcnn {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "MCNNCKPT1";

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

json stage_json(const ConvStage& s) {
  return {{"conv", {s.conv.out_channels, s.conv.kernel, s.conv.stride, s.conv.pad}},
          {"pool", {s.pool.kernel, s.pool.stride}}};
}

ConvStage stage_from(const json& j) {
  const auto c = j.at("conv").get<std::vector<Index>>();
  const auto p = j.at("pool").get<std::vector<Index>>();
  if (c.size() != 4 || p.size() != 2) throw CheckpointError("bad conv stage in header");
  return {{c[0], c[1], c[2], c[3]}, {p[0], p[1]}};
}

json config_json(const TopologyConfig& c) {
  return {{"scale", c.scale},
          {"input", {c.channels, c.height, c.width}},
          {"stage1", stage_json(c.stage1)},
          {"stage2", stage_json(c.stage2)},
          {"stage3", stage_json(c.stage3)},
          {"lrn", {{"local_size", c.lrn.local_size}, {"alpha", c.lrn.alpha}, {"beta", c.lrn.beta}, {"k", c.lrn.k}}},
          {"fc_units", c.fc_units},
          {"dropout", c.dropout},
          {"aux_input", c.aux_input == AuxInput::Raw ? "raw" : "sigmoid"}};
}

TopologyConfig config_from(const json& j) {
  TopologyConfig c;
  c.scale = j.at("scale").get<std::string>();
  const auto in = j.at("input").get<std::vector<Index>>();
  if (in.size() != 3) throw CheckpointError("bad input shape in header");
  c.channels = in[0];
  c.height = in[1];
  c.width = in[2];
  c.stage1 = stage_from(j.at("stage1"));
  c.stage2 = stage_from(j.at("stage2"));
  c.stage3 = stage_from(j.at("stage3"));
  const auto& l = j.at("lrn");
  c.lrn = {l.at("local_size").get<Index>(), l.at("alpha").get<double>(), l.at("beta").get<double>(),
           l.at("k").get<double>()};
  c.fc_units = j.at("fc_units").get<Index>();
  c.dropout = j.at("dropout").get<double>();
  c.aux_input = j.at("aux_input").get<std::string>() == "sigmoid" ? AuxInput::Sigmoid : AuxInput::Raw;
  return c;
}

json hyper_json(const HyperParams& h) {
  return {{"batch_size", h.batch_size}, {"epochs", h.epochs},     {"lr", h.lr},
          {"momentum", h.momentum},     {"weight_decay", h.weight_decay}, {"lr_step", h.lr_step},
          {"lr_gamma", h.lr_gamma},     {"aux_epochs", h.aux_epochs},     {"aux_lr", h.aux_lr},
          {"seed", h.seed},             {"precision", to_string(h.precision)}};
}

HyperParams hyper_from(const json& j) {
  HyperParams h;
  h.batch_size = j.at("batch_size").get<Index>();
  h.epochs = j.at("epochs").get<int>();
  h.lr = j.at("lr").get<double>();
  h.momentum = j.at("momentum").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.lr_step = j.at("lr_step").get<int>();
  h.lr_gamma = j.at("lr_gamma").get<double>();
  h.aux_epochs = j.at("aux_epochs").get<int>();
  h.aux_lr = j.at("aux_lr").get<double>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.precision = parse_precision(j.at("precision").get<std::string>());
  return h;
}

NetworkTopology rebuild(const json& h) {
  const AttributeVocab vocab(h.at("vocab").get<std::vector<std::string>>());
  const TopologyConfig config = config_from(h.at("config"));
  const Variant variant = parse_variant(h.at("variant").get<std::string>());
  if (variant == Variant::Independent)
    return build_independent(vocab, h.at("attribute").get<std::string>(), config);
  const GroupSpec groups = GroupSpec::parse(h.at("groups").get<std::string>(), vocab);
  NetworkTopology mcnn = build_mcnn(vocab, groups, config);
  return variant == Variant::McnnAux ? attach_aux(mcnn).topology : mcnn;
}

json read_header(std::istream& in) {
  std::string magic, count;
  if (!std::getline(in, magic) || magic != kMagic) throw CheckpointError("not a checkpoint (bad magic)");
  if (!std::getline(in, count)) throw CheckpointError("truncated checkpoint header");
  size_t bytes = 0;
  try {
    bytes = std::stoul(count);
  } catch (const std::exception&) {
    throw CheckpointError("bad checkpoint header length '" + count + "'");
  }
  std::string text(bytes, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(bytes)) || in.get() != '\n')
    throw CheckpointError("truncated checkpoint header");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace

template <typename Scalar>
void save_checkpoint(std::ostream& out, const Checkpoint<Scalar>& ckpt) {
  const NetworkTopology& t = ckpt.topology;
  check_params(t, ckpt.params);
  json h;
  h["dtype"] = dtype_name<Scalar>();
  h["variant"] = to_string(t.variant);
  h["attribute"] = t.attribute ? json(t.vocab.name(*t.attribute)) : json(nullptr);
  h["config"] = config_json(t.config);
  h["vocab"] = t.vocab.names();
  h["groups"] = t.variant == Variant::Independent ? std::string() : t.groups.text(t.vocab);
  h["hyper"] = hyper_json(ckpt.hyper);
  json history = json::array();
  for (const auto& r : ckpt.history)
    history.push_back({{"stage", r.stage}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}});
  h["history"] = history;

  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& info : t.parameters()) {
    const auto& tensor = param_ref(ckpt.params.layers[static_cast<size_t>(info.node)], info);
    const std::uint64_t bytes = static_cast<std::uint64_t>(tensor.size()) * sizeof(Scalar);
    tensors.push_back({{"name", info.name},
                       {"shape", info.shape},
                       {"dtype", dtype_name<Scalar>()},
                       {"offset", offset},
                       {"bytes", bytes},
                       {"frozen", ckpt.freeze.frozen(info.name)}});
    offset += bytes;
  }
  h["tensors"] = tensors;

  const std::string text = h.dump(1);
  out << kMagic << '\n' << text.size() << '\n' << text << '\n';
  for (const auto& info : t.parameters()) {
    const auto& tensor = param_ref(ckpt.params.layers[static_cast<size_t>(info.node)], info);
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * static_cast<Index>(sizeof(Scalar))));
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  save_checkpoint(out, ckpt);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(std::istream& in) {
  const json h = read_header(in);
  Checkpoint<Scalar> c;
  try {
    if (h.at("dtype").get<std::string>() != dtype_name<Scalar>())
      throw CheckpointError("checkpoint holds " + h.at("dtype").get<std::string>() + " tensors, expected " +
                            dtype_name<Scalar>());
    c.topology = rebuild(h);
    c.hyper = hyper_from(h.at("hyper"));
    for (const auto& r : h.at("history"))
      c.history.push_back({r.at("stage").get<std::string>(), r.at("epoch").get<int>(), r.at("lr").get<double>(),
                           r.at("loss").get<double>()});
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint topology is invalid: ") + e.what());
  }

  const auto infos = c.topology.parameters();
  const auto& tensors = h.at("tensors");
  if (tensors.size() != infos.size())
    throw CheckpointError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, topology has " +
                          std::to_string(infos.size()));
  c.params = zero_params<Scalar>(c.topology);
  c.freeze = FreezeMask::all_trainable(c.topology);
  std::uint64_t offset = 0;
  for (size_t i = 0; i < infos.size(); ++i) {
    const auto& info = infos[i];
    const auto& entry = tensors[i];
    if (entry.value("name", "") != info.name)
      throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + entry.value("name", "") +
                            "', expected '" + info.name + "'");
    if (entry.value("shape", Shape{}) != info.shape)
      throw CheckpointError("tensor " + info.name + ": stored shape does not match " + shape_string(info.shape));
    if (entry.value("offset", std::uint64_t{0}) != offset)
      throw CheckpointError("tensor " + info.name + ": unexpected blob offset");
    c.freeze.set(info.name, entry.value("frozen", false));
    auto& tensor = param_ref(c.params.layers[static_cast<size_t>(info.node)], info);
    const auto bytes = static_cast<std::streamsize>(tensor.size() * static_cast<Index>(sizeof(Scalar)));
    if (!in.read(reinterpret_cast<char*>(tensor.data()), bytes))
      throw CheckpointError("checkpoint truncated: cannot read tensor " + info.name);
    offset += static_cast<std::uint64_t>(bytes);
  }
  return c;
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return load_checkpoint<Scalar>(in);
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const json h = read_header(in);
  try {
    return parse_precision(h.at("dtype").get<std::string>());
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad checkpoint dtype: ") + e.what());
  }
}

void require_config(const NetworkTopology& topology, const TopologyConfig& config) {
  if (!(topology.config == config))
    throw CheckpointError("checkpoint was built with the '" + topology.config.scale +
                          "' topology config, which differs from the requested '" + config.scale + "'");
}

template void save_checkpoint(std::ostream&, const Checkpoint<float>&);
template void save_checkpoint(std::ostream&, const Checkpoint<double>&);
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint(std::istream&);
template Checkpoint<double> load_checkpoint(std::istream&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace mcnn
