#include "mcnn/topology.hpp"

#include <algorithm>

namespace mcnn {

TopologyConfig TopologyConfig::paper() { return TopologyConfig{}; }

TopologyConfig TopologyConfig::tiny() {
  TopologyConfig c;
  c.scale = "tiny";
  c.height = 16;
  c.width = 16;
  c.stage1 = {{8, 3, 1, 1}, {2, 2}};
  c.stage2 = {{16, 3, 1, 1}, {2, 2}};
  // A 4x4 map is already small; the third pool keeps full resolution.
  c.stage3 = {{24, 3, 1, 1}, {1, 1}};
  c.fc_units = 32;
  // Half of a 32-unit layer is too few units for a group head to carry all
  // of its attributes; the heads stall on whichever colour they did not pick
  // up first.
  c.dropout = 0.0;
  return c;
}

TopologyConfig TopologyConfig::by_name(std::string_view scale) {
  if (scale == "paper") return paper();
  if (scale == "tiny") return tiny();
  throw ConfigError("unknown scale '" + std::string(scale) + "' (expected paper or tiny)");
}

bool operator==(const TopologyConfig& a, const TopologyConfig& b) {
  auto conv_eq = [](const Conv& x, const Conv& y) {
    return x.out_channels == y.out_channels && x.kernel == y.kernel && x.stride == y.stride &&
           x.pad == y.pad;
  };
  auto stage_eq = [&](const ConvStage& x, const ConvStage& y) {
    return conv_eq(x.conv, y.conv) && x.pool.kernel == y.pool.kernel &&
           x.pool.stride == y.pool.stride;
  };
  return a.channels == b.channels && a.height == b.height && a.width == b.width &&
         stage_eq(a.stage1, b.stage1) && stage_eq(a.stage2, b.stage2) &&
         stage_eq(a.stage3, b.stage3) && a.lrn.local_size == b.lrn.local_size &&
         a.lrn.alpha == b.lrn.alpha && a.lrn.beta == b.lrn.beta && a.lrn.k == b.lrn.k &&
         a.fc_units == b.fc_units && a.dropout == b.dropout && a.aux_input == b.aux_input;
}

int NetworkTopology::find(std::string_view name) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<ParamInfo> NetworkTopology::parameters() const {
  std::vector<ParamInfo> out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const ParamShapes ps = param_shapes(nodes[i].spec, nodes[i].in_shape);
    if (!ps.weight.empty()) out.push_back({nodes[i].name + ".weight", static_cast<int>(i), false, ps.weight});
    if (!ps.bias.empty()) out.push_back({nodes[i].name + ".bias", static_cast<int>(i), true, ps.bias});
  }
  return out;
}

std::vector<std::string> NetworkTopology::output_names() const {
  std::vector<std::string> names;
  for (Index a : output_attributes) names.push_back(vocab.name(a));
  return names;
}

FreezeMask FreezeMask::all_trainable(const NetworkTopology& topology) {
  FreezeMask m;
  for (const auto& p : topology.parameters()) m.set(p.name, false);
  return m;
}

FreezeMask FreezeMask::all_frozen(const NetworkTopology& topology) {
  FreezeMask m;
  for (const auto& p : topology.parameters()) m.set(p.name, true);
  return m;
}

bool FreezeMask::frozen(const std::string& name) const {
  auto it = frozen_.find(name);
  return it != frozen_.end() && it->second;
}

namespace {

class Builder {
 public:
  explicit Builder(NetworkTopology& t) : t_(t) {}

  int add(std::string name, LayerSpec spec, int parent) {
    validate(spec);
    Node n;
    n.name = std::move(name);
    n.parent = parent;
    n.in_shape = parent < 0 ? t_.config.input_shape() : t_.nodes[static_cast<size_t>(parent)].out_shape;
    n.out_shape = output_shape(spec, n.in_shape);
    n.spec = std::move(spec);
    t_.nodes.push_back(std::move(n));
    return static_cast<int>(t_.nodes.size()) - 1;
  }

  // Conv -> ReLU -> MaxPool -> LRN
  int conv_stage(const std::string& suffix, const ConvStage& stage, int parent) {
    int n = add("conv" + suffix, stage.conv, parent);
    n = add("relu" + suffix, ReLU{}, n);
    n = add("pool" + suffix, stage.pool, n);
    return add("norm" + suffix, t_.config.lrn, n);
  }

  // FC1 -> ReLU -> Dropout -> FC2 -> ReLU -> Dropout -> output units
  int fc_stack(const std::string& suffix, Index outputs, int parent) {
    const Dropout drop{t_.config.dropout};
    int n = add("fc1" + suffix, FullyConnected{t_.config.fc_units, true}, parent);
    n = add("relu_fc1" + suffix, ReLU{}, n);
    n = add("drop_fc1" + suffix, drop, n);
    n = add("fc2" + suffix, FullyConnected{t_.config.fc_units, true}, n);
    n = add("relu_fc2" + suffix, ReLU{}, n);
    n = add("drop_fc2" + suffix, drop, n);
    return add("out" + suffix, FullyConnected{outputs, true}, n);
  }

 private:
  NetworkTopology& t_;
};

}  // namespace

NetworkTopology build_mcnn(const AttributeVocab& vocab, const GroupSpec& groups,
                           const TopologyConfig& config) {
  NetworkTopology t;
  t.variant = Variant::Mcnn;
  t.config = config;
  t.vocab = vocab;
  t.groups = groups;
  Builder b(t);

  int trunk = b.conv_stage("1", config.stage1, -1);
  trunk = b.conv_stage("2", config.stage2, trunk);

  std::map<std::string, int> branch_tip;
  for (const auto& br : groups.branches())
    branch_tip[br.name] = b.conv_stage("3." + br.name, config.stage3, trunk);

  for (Index a = 0; a < vocab.size(); ++a) t.output_attributes.push_back(a);
  std::vector<int> covered(static_cast<size_t>(vocab.size()), 0);
  for (const auto& g : groups.groups()) {
    OutputHead head;
    head.group = g.name;
    head.attributes = g.attributes;
    head.node = b.fc_stack("." + g.name, static_cast<Index>(g.attributes.size()),
                           branch_tip.at(groups.branch_of(g.name)));
    for (Index a : g.attributes) {
      head.columns.push_back(a);
      ++covered[static_cast<size_t>(a)];
    }
    t.heads.push_back(std::move(head));
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; }))
    throw ConfigError("grouping does not partition the attribute vocabulary");
  return t;
}

NetworkTopology build_independent(const AttributeVocab& vocab, std::string_view attribute,
                                  const TopologyConfig& config) {
  NetworkTopology t;
  t.variant = Variant::Independent;
  t.config = config;
  t.vocab = vocab;
  const Index attr = vocab.index_of(attribute);
  t.attribute = attr;
  Builder b(t);
  int n = b.conv_stage("1", config.stage1, -1);
  n = b.conv_stage("2", config.stage2, n);
  n = b.conv_stage("3", config.stage3, n);
  OutputHead head;
  head.group = std::string(attribute);
  head.attributes = {attr};
  head.columns = {0};
  head.node = b.fc_stack("", 1, n);
  t.heads.push_back(std::move(head));
  t.output_attributes = {attr};
  return t;
}

AuxAttachment attach_aux(const NetworkTopology& mcnn) {
  if (mcnn.variant != Variant::Mcnn)
    throw ContractError("attach_aux requires an mcnn topology, got " + to_string(mcnn.variant));
  AuxAttachment result{mcnn, FreezeMask::all_frozen(mcnn)};
  NetworkTopology& t = result.topology;
  t.variant = Variant::McnnAux;
  Node aux;
  aux.name = "aux";
  aux.spec = FullyConnected{t.output_width(), false};
  aux.parent = kAuxParent;
  aux.in_shape = {t.output_width()};
  aux.out_shape = {t.output_width()};
  t.nodes.push_back(std::move(aux));
  t.aux_node = static_cast<int>(t.nodes.size()) - 1;
  result.freeze.set("aux.weight", false);
  return result;
}

ParamCount count_params(const NetworkTopology& topology) {
  ParamCount count;
  std::map<int, Index> by_node;
  for (const auto& p : topology.parameters()) by_node[p.node] += shape_size(p.shape);
  for (const auto& [node, n] : by_node) {
    count.per_layer.emplace_back(topology.nodes[static_cast<size_t>(node)].name, n);
    count.total += n;
  }
  return count;
}

}  // namespace mcnn
