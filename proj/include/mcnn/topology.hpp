#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mcnn/layers.hpp"

namespace mcnn {

/// The ordered attribute names; score columns and label columns follow this order.
class AttributeVocab {
 public:
  static constexpr Index kSize = 40;

  AttributeVocab() = default;
  explicit AttributeVocab(std::vector<std::string> names);

  // The CelebA list_attr_celeba.txt header order.
  static AttributeVocab celeba();

  Index size() const { return static_cast<Index>(names_.size()); }
  const std::string& name(Index i) const { return names_.at(static_cast<size_t>(i)); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(std::string_view name) const;
  Index index_of(std::string_view name) const;  // ConfigError if absent

  friend bool operator==(const AttributeVocab& a, const AttributeVocab& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Index> index_;
};

struct AttributeGroup {
  std::string name;
  std::vector<Index> attributes;  // vocabulary indices, in file order
};

// A Conv3 stage and the groups whose FC1 layers read from it.
struct Conv3Branch {
  std::string name;
  std::vector<std::string> groups;
};

/// Partition of the vocabulary into groups plus the Conv3 sharing plan.
///
/// Text format, one group per line:
///   GroupName: attr1, attr2, ...
///   branch BranchName: Group1, Group2, ...
/// Groups not named on a branch line get a Conv3 stage of their own.
class GroupSpec {
 public:
  static GroupSpec parse(std::string_view text, const AttributeVocab& vocab);
  static GroupSpec load(const std::filesystem::path& path, const AttributeVocab& vocab);
  static GroupSpec celeba_default(const AttributeVocab& vocab);

  const std::vector<AttributeGroup>& groups() const { return groups_; }
  // Ordered by the first group each branch serves.
  const std::vector<Conv3Branch>& branches() const { return branches_; }
  const std::string& branch_of(std::string_view group) const;
  // Canonical text form; parse(text()) reproduces this spec.
  std::string text(const AttributeVocab& vocab) const;

 private:
  std::vector<AttributeGroup> groups_;
  std::vector<Conv3Branch> branches_;
};

enum class Variant { Independent, Mcnn, McnnAux };
std::string to_string(Variant v);
Variant parse_variant(std::string_view text);

// What the AUX layer reads: raw scores, or their sigmoids.
enum class AuxInput { Raw, Sigmoid };

struct ConvStage {
  Conv conv;
  MaxPool pool;
};

/// Layer dimensions of one path through the network.
struct TopologyConfig {
  std::string scale = "paper";
  Index channels = 3;
  Index height = 227;
  Index width = 227;
  ConvStage stage1{{75, 7, 4, 0}, {3, 2}};
  ConvStage stage2{{200, 5, 1, 2}, {3, 2}};
  ConvStage stage3{{300, 3, 1, 1}, {5, 5}};
  LRN lrn{5, 1e-4, 0.75, 2.0};
  Index fc_units = 512;
  double dropout = 0.5;
  AuxInput aux_input = AuxInput::Raw;

  static TopologyConfig paper();
  // 16x16 input, 8/16/24 filters, 32-unit FC layers.
  static TopologyConfig tiny();
  static TopologyConfig by_name(std::string_view scale);

  Shape input_shape() const { return {channels, height, width}; }
  friend bool operator==(const TopologyConfig&, const TopologyConfig&);
};

struct Node {
  std::string name;
  LayerSpec spec;
  int parent = -1;  // -1: network input; kAuxParent: concatenated scores
  Shape in_shape;   // per sample
  Shape out_shape;
};

inline constexpr int kAuxParent = -2;

struct OutputHead {
  std::string group;
  int node = -1;                 // FC producing the group's units
  std::vector<Index> attributes; // vocab index per unit
  std::vector<Index> columns;    // score column per unit
};

struct ParamInfo {
  std::string name;  // "<node>.weight" or "<node>.bias"
  int node = -1;
  bool is_bias = false;
  Shape shape;
};

/// A wired layer graph. Every node has one parent, so the graph is a tree
/// rooted at the input; nodes are stored in topological order.
class NetworkTopology {
 public:
  Variant variant = Variant::Mcnn;
  TopologyConfig config;
  AttributeVocab vocab;
  GroupSpec groups;
  std::optional<Index> attribute;  // independent variant only
  std::vector<Node> nodes;
  std::vector<OutputHead> heads;
  std::vector<Index> output_attributes;  // score column -> vocab index
  int aux_node = -1;

  Index output_width() const { return static_cast<Index>(output_attributes.size()); }
  int find(std::string_view name) const;  // -1 if absent
  std::vector<ParamInfo> parameters() const;
  std::vector<std::string> output_names() const;
};

/// Per-parameter-tensor trainable/frozen flags, keyed by parameter name.
class FreezeMask {
 public:
  static FreezeMask all_trainable(const NetworkTopology& topology);
  static FreezeMask all_frozen(const NetworkTopology& topology);

  bool frozen(const std::string& name) const;
  void set(const std::string& name, bool frozen) { frozen_[name] = frozen; }
  const std::map<std::string, bool>& entries() const { return frozen_; }

  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;

 private:
  std::map<std::string, bool> frozen_;
};

NetworkTopology build_mcnn(const AttributeVocab& vocab, const GroupSpec& groups,
                           const TopologyConfig& config);
NetworkTopology build_independent(const AttributeVocab& vocab, std::string_view attribute,
                                  const TopologyConfig& config);

struct AuxAttachment {
  NetworkTopology topology;
  FreezeMask freeze;  // every MCNN tensor frozen, AUX trainable
};
AuxAttachment attach_aux(const NetworkTopology& mcnn);

struct ParamCount {
  Index total = 0;
  std::vector<std::pair<std::string, Index>> per_layer;
};
/// Closed-form count from the inferred layer shapes; nothing is allocated.
ParamCount count_params(const NetworkTopology& topology);

}  // namespace mcnn
