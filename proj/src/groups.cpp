#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mcnn/default_groups.hpp"
#include "mcnn/topology.hpp"

namespace mcnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

AttributeVocab::AttributeVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (size() != kSize)
    throw ConfigError("attribute vocabulary needs " + std::to_string(kSize) + " names, got " +
                      std::to_string(size()));
  for (Index i = 0; i < size(); ++i) {
    if (!index_.emplace(names_[static_cast<size_t>(i)], i).second)
      throw ConfigError("duplicate attribute name '" + names_[static_cast<size_t>(i)] + "'");
  }
}

AttributeVocab AttributeVocab::celeba() {
  return AttributeVocab({"5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes",
                         "Bald", "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair",
                         "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin",
                         "Eyeglasses", "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones",
                         "Male", "Mouth_Slightly_Open", "Mustache", "Narrow_Eyes", "No_Beard",
                         "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline",
                         "Rosy_Cheeks", "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair",
                         "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick",
                         "Wearing_Necklace", "Wearing_Necktie", "Young"});
}

bool AttributeVocab::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

Index AttributeVocab::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown attribute '" + std::string(name) + "'");
  return it->second;
}

GroupSpec GroupSpec::parse(std::string_view text, const AttributeVocab& vocab) {
  GroupSpec spec;
  std::vector<Conv3Branch> shared;
  std::vector<int> seen(static_cast<size_t>(vocab.size()), 0);
  std::vector<std::string> unknown;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos)
      throw ConfigError("groups line " + std::to_string(line_no) + ": expected 'Name: a, b, ...'");
    std::string_view head = trim(line.substr(0, colon));
    auto items = split_list(line.substr(colon + 1));
    if (head.starts_with("branch ") || head.starts_with("branch\t")) {
      shared.push_back({std::string(trim(head.substr(6))), std::move(items)});
      continue;
    }
    if (head.empty())
      throw ConfigError("groups line " + std::to_string(line_no) + ": empty group name");
    AttributeGroup group{std::string(head), {}};
    for (const auto& name : items) {
      if (!vocab.contains(name)) {
        unknown.push_back(name);
        continue;
      }
      const Index idx = vocab.index_of(name);
      ++seen[static_cast<size_t>(idx)];
      group.attributes.push_back(idx);
    }
    if (group.attributes.empty() && unknown.empty())
      throw ConfigError("group '" + group.name + "' has no attributes");
    spec.groups_.push_back(std::move(group));
  }

  std::vector<std::string> missing, duplicated;
  for (Index i = 0; i < vocab.size(); ++i) {
    if (seen[static_cast<size_t>(i)] == 0) missing.push_back(vocab.name(i));
    if (seen[static_cast<size_t>(i)] > 1) duplicated.push_back(vocab.name(i));
  }
  if (!missing.empty() || !duplicated.empty() || !unknown.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s.empty() ? std::string("none") : s;
    };
    throw ConfigError("invalid grouping: missing [" + join(missing) + "], duplicated [" +
                      join(duplicated) + "], unknown [" + join(unknown) + "]");
  }

  std::set<std::string> names;
  for (const auto& g : spec.groups_)
    if (!names.insert(g.name).second) throw ConfigError("duplicate group name '" + g.name + "'");

  std::map<std::string, std::string> owner;
  for (const auto& b : shared) {
    if (b.groups.empty()) throw ConfigError("branch '" + b.name + "' serves no groups");
    for (const auto& g : b.groups) {
      if (!names.contains(g))
        throw ConfigError("branch '" + b.name + "' names unknown group '" + g + "'");
      if (!owner.emplace(g, b.name).second)
        throw ConfigError("group '" + g + "' assigned to more than one branch");
    }
  }
  for (const auto& g : spec.groups_) {
    auto it = owner.find(g.name);
    if (it == owner.end()) {
      spec.branches_.push_back({g.name, {g.name}});
      continue;
    }
    const bool placed = std::any_of(spec.branches_.begin(), spec.branches_.end(),
                                    [&](const Conv3Branch& b) { return b.name == it->second; });
    if (placed) continue;
    auto b = std::find_if(shared.begin(), shared.end(),
                          [&](const Conv3Branch& s) { return s.name == it->second; });
    if (names.contains(b->name) && !owner.contains(b->name))
      throw ConfigError("branch name '" + b->name + "' collides with a group name");
    spec.branches_.push_back(*b);
  }
  return spec;
}

GroupSpec GroupSpec::load(const std::filesystem::path& path, const AttributeVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open groups file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), vocab);
}

GroupSpec GroupSpec::celeba_default(const AttributeVocab& vocab) {
  return parse(kDefaultGroupsText, vocab);
}

const std::string& GroupSpec::branch_of(std::string_view group) const {
  for (const auto& b : branches_)
    for (const auto& g : b.groups)
      if (g == group) return b.name;
  throw ConfigError("no branch serves group '" + std::string(group) + "'");
}

std::string GroupSpec::text(const AttributeVocab& vocab) const {
  std::string out;
  for (const auto& g : groups_) {
    out += g.name + ":";
    for (size_t i = 0; i < g.attributes.size(); ++i)
      out += (i ? ", " : " ") + vocab.name(g.attributes[i]);
    out += '\n';
  }
  for (const auto& b : branches_) {
    if (b.groups.size() == 1 && b.groups.front() == b.name) continue;
    out += "branch " + b.name + ":";
    for (size_t i = 0; i < b.groups.size(); ++i) out += (i ? ", " : " ") + b.groups[i];
    out += '\n';
  }
  return out;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Independent: return "independent";
    case Variant::Mcnn: return "mcnn";
    case Variant::McnnAux: return "mcnn-aux";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "independent") return Variant::Independent;
  if (text == "mcnn") return Variant::Mcnn;
  if (text == "mcnn-aux" || text == "mcnn_aux") return Variant::McnnAux;
  throw ConfigError("unknown variant '" + std::string(text) + "'");
}

}  // namespace mcnn
