#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mcnn/default_groups.hpp"
#include "mcnn/loss.hpp"
#include "mcnn/network.hpp"

using namespace mcnn;

namespace {

const AttributeVocab& vocab() {
  static const AttributeVocab v = AttributeVocab::celeba();
  return v;
}
const GroupSpec& groups() {
  static const GroupSpec g = GroupSpec::celeba_default(vocab());
  return g;
}

Index count_kind(const NetworkTopology& t, const std::string& prefix) {
  return std::count_if(t.nodes.begin(), t.nodes.end(),
                       [&](const Node& n) { return n.name.rfind(prefix, 0) == 0; });
}

Tensord random_batch(const NetworkTopology& t, Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d;
  Shape s{n};
  for (Index x : t.config.input_shape()) s.push_back(x);
  Tensord b(s);
  for (auto& v : b.values()) v = d(rng);
  return b;
}

// Full-size closed form from the stated dimensions: Conv1 7x7 stride 4 on
// 227 -> 56, pool 3/2 -> 27, Conv2 5x5 pad 2 -> 27, pool 3/2 -> 13, Conv3 3x3
// pad 1 -> 13, pool 5/5 -> 2, so FC1 reads 300 * 2 * 2 inputs.
constexpr Index kConv1 = 75 * 3 * 7 * 7 + 75;
constexpr Index kConv2 = 200 * 75 * 5 * 5 + 200;
constexpr Index kConv3 = 300 * 200 * 3 * 3 + 300;
constexpr Index kFc1 = 512 * (300 * 2 * 2) + 512;
constexpr Index kFc2 = 512 * 512 + 512;
constexpr Index kIndependent = kConv1 + kConv2 + kConv3 + kFc1 + kFc2 + 512 + 1;
constexpr Index kMcnn = kConv1 + kConv2 + 6 * kConv3 + 9 * (kFc1 + kFc2) + 512 * 40 + 40;

}  // namespace

TEST_CASE("vocabulary") {
  CHECK(vocab().size() == 40);
  CHECK(vocab().index_of("Male") == 20);
  CHECK_THROWS_AS(vocab().index_of("Freckles"), ConfigError);
  auto names = vocab().names();
  names[1] = names[0];
  CHECK_THROWS_AS(AttributeVocab{names}, ConfigError);
}

TEST_CASE("default grouping partitions the vocabulary") {
  CHECK(groups().groups().size() == 9);
  std::vector<int> seen(40, 0);
  for (const auto& g : groups().groups())
    for (Index a : g.attributes) ++seen[static_cast<size_t>(a)];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  const auto& br = groups().branches();
  REQUIRE(br.size() == 6);
  std::vector<std::string> names;
  for (const auto& b : br) names.push_back(b.name);
  CHECK(names == std::vector<std::string>{"Gender", "Nose", "Mouth", "Eyes", "Face", "Rest"});
  CHECK(br[5].groups == std::vector<std::string>{"AroundHead", "FacialHair", "Cheeks", "Fat"});
}

TEST_CASE("default grouping text matches the shipped data file") {
  std::ifstream in(std::string(MCNN_SOURCE_DIR) + "/data/groups_celeba.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == kDefaultGroupsText);
  auto again = GroupSpec::parse(groups().text(vocab()), vocab());
  CHECK(again.text(vocab()) == groups().text(vocab()));
}

TEST_CASE("invalid groupings list missing and duplicated attributes") {
  std::string text = kDefaultGroupsText;
  text.replace(text.find("Nose: Big_Nose"), 14, "Nose: Big_Lips");
  try {
    GroupSpec::parse(text, vocab());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("missing [Big_Nose]") != std::string::npos);
    CHECK(msg.find("duplicated [Big_Lips]") != std::string::npos);
  }
  CHECK_THROWS_AS(GroupSpec::parse("Gender: Male\nbranch X: Nope\n", vocab()), ConfigError);
}

TEST_CASE("build_mcnn structure at full scale") {
  auto t = build_mcnn(vocab(), groups(), TopologyConfig::paper());
  CHECK(count_kind(t, "conv1") == 1);
  CHECK(count_kind(t, "conv2") == 1);
  CHECK(count_kind(t, "conv3.") == 6);
  CHECK(count_kind(t, "fc1.") == 9);
  CHECK(count_kind(t, "fc2.") == 9);
  CHECK(t.output_width() == 40);

  std::vector<int> covered(40, 0);
  for (const auto& h : t.heads)
    for (Index a : h.attributes) ++covered[static_cast<size_t>(a)];
  CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; }));

  // Gender path: Conv2 -> Conv3.Gender -> FC1.Gender -> FC2.Gender -> 1 unit.
  const auto& gender = *std::find_if(t.heads.begin(), t.heads.end(),
                                     [](const OutputHead& h) { return h.group == "Gender"; });
  CHECK(gender.attributes == std::vector<Index>{vocab().index_of("Male")});
  std::vector<std::string> path;
  for (int n = gender.node; n >= 0; n = t.nodes[static_cast<size_t>(n)].parent)
    if (has_params(t.nodes[static_cast<size_t>(n)].spec)) path.push_back(t.nodes[static_cast<size_t>(n)].name);
  CHECK(path == std::vector<std::string>{"out.Gender", "fc2.Gender", "fc1.Gender", "conv3.Gender",
                                         "conv2", "conv1"});

  // Conv3Rest feeds four FC1s.
  const int rest = t.find("norm3.Rest");
  CHECK(std::count_if(t.nodes.begin(), t.nodes.end(), [&](const Node& n) { return n.parent == rest; }) == 4);
  CHECK(t.nodes[static_cast<size_t>(t.find("fc1.Gender"))].in_shape == Shape{300, 2, 2});
}

TEST_CASE("parameter counts at full scale") {
  auto mcnn = build_mcnn(vocab(), groups(), TopologyConfig::paper());
  auto indep = build_independent(vocab(), "Smiling", TopologyConfig::paper());
  const Index m = count_params(mcnn).total;
  const Index i = count_params(indep).total;
  CHECK(i == kIndependent);
  CHECK(m == kMcnn);
  CHECK(i > 1'600'000);
  CHECK(m > 10'000'000);
  CHECK(m < 15'000'000);
  CHECK(40.0 * static_cast<double>(i) / static_cast<double>(m) > 4.0);

  auto aux = attach_aux(mcnn);
  CHECK(count_params(aux.topology).total - m == 1600);
  CHECK(count_params(aux.topology).per_layer.back() == std::pair<std::string, Index>{"aux", 1600});

  // Cross-check against tensors actually allocated.
  auto params = zero_params<float>(mcnn);
  Index allocated = 0;
  for (const auto& l : params.layers) allocated += l.weight.size() + l.bias.size();
  CHECK(allocated == m);
}

TEST_CASE("build_independent") {
  auto a = build_independent(vocab(), "Smiling", TopologyConfig::paper());
  auto b = build_independent(vocab(), "Male", TopologyConfig::paper());
  Index convs = 0, fcs = 0;
  for (const auto& n : a.nodes) {
    convs += std::holds_alternative<Conv>(n.spec);
    fcs += std::holds_alternative<FullyConnected>(n.spec);
  }
  CHECK(convs == 3);
  CHECK(fcs == 3);
  CHECK(a.output_width() == 1);
  REQUIRE(a.nodes.size() == b.nodes.size());
  for (size_t k = 0; k < a.nodes.size(); ++k) {
    CHECK(a.nodes[k].name == b.nodes[k].name);
    CHECK(a.nodes[k].out_shape == b.nodes[k].out_shape);
  }
  CHECK(a.output_names() == std::vector<std::string>{"Smiling"});
  CHECK_THROWS_AS(build_independent(vocab(), "Freckles", TopologyConfig::paper()), ConfigError);
}

TEST_CASE("attach_aux") {
  auto mcnn = build_mcnn(vocab(), groups(), TopologyConfig::tiny());
  auto aux = attach_aux(mcnn);
  CHECK(aux.topology.variant == Variant::McnnAux);
  for (const auto& [name, frozen] : aux.freeze.entries()) CHECK(frozen == (name != "aux.weight"));
  CHECK_FALSE(aux.freeze.frozen("aux.weight"));
  CHECK_THROWS_AS(attach_aux(aux.topology), ContractError);

  auto params = init_network<double>(aux.topology, 3);
  auto batch = random_batch(mcnn, 3, 1);
  auto base = init_network<double>(mcnn, 3);
  CHECK(forward_full(aux.topology, params, batch, Mode::Eval, nullptr) ==
        forward_full(mcnn, base, batch, Mode::Eval, nullptr));
}

TEST_CASE("tiny forward is deterministic and matches a straight-line composition") {
  auto t = build_mcnn(vocab(), groups(), TopologyConfig::tiny());
  auto params = init_network<double>(t, 11);
  auto batch = random_batch(t, 2, 5);
  auto scores = forward_full(t, params, batch, Mode::Eval, nullptr);
  CHECK(scores == forward_full(t, params, batch, Mode::Eval, nullptr));
  CHECK(scores.shape() == Shape{2, 40});

  for (const auto& head : t.heads) {
    std::vector<int> chain;
    for (int n = head.node; n >= 0; n = t.nodes[static_cast<size_t>(n)].parent) chain.push_back(n);
    Tensord x = batch;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const auto k = static_cast<size_t>(*it);
      x = forward<double>(t.nodes[k].spec, params.layers[k], x, Mode::Eval, nullptr, nullptr);
    }
    for (size_t u = 0; u < head.columns.size(); ++u)
      for (Index i = 0; i < 2; ++i)
        CHECK(scores[i * 40 + head.columns[u]] == x[i * static_cast<Index>(head.columns.size()) + static_cast<Index>(u)]);
  }
}

TEST_CASE("score columns depend only on their own path") {
  auto t = build_mcnn(vocab(), groups(), TopologyConfig::tiny());
  auto params = init_network<double>(t, 2);
  auto batch = random_batch(t, 2, 9);
  auto before = forward_full(t, params, batch, Mode::Eval, nullptr);
  params.at(t, "conv3.Gender.weight").array() += 0.5;
  params.at(t, "fc1.Gender.weight").array() *= 2.0;
  auto after = forward_full(t, params, batch, Mode::Eval, nullptr);
  const Index male = vocab().index_of("Male");
  for (Index i = 0; i < 2; ++i)
    for (Index a = 0; a < 40; ++a) {
      if (a == male) {
        CHECK(before[i * 40 + a] != after[i * 40 + a]);
      } else {
        CHECK(before[i * 40 + a] == after[i * 40 + a]);
      }
    }
}

TEST_CASE("whole-network gradient check on the tiny topology") {
  auto t = attach_aux(build_mcnn(vocab(), groups(), TopologyConfig::tiny())).topology;
  auto params = init_network<double>(t, 4);
  // Perturb the identity AUX so its gradient path mixes columns.
  Rng init(12);
  std::normal_distribution<double> small(0.0, 0.05);
  for (auto& v : params.at(t, "aux.weight").values()) v += small(init);
  for (auto& layer : params.layers)
    for (auto& v : layer.bias.values()) v = small(init);

  auto batch = random_batch(t, 2, 3);
  BinaryMatrix y(2, 40);
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < 80; ++i) y(i / 40, i % 40) = coin(init);
  const LabelMatrix labels = LabelMatrix::full(y);

  auto loss_at = [&](const NetworkParams<double>& p, ForwardCache<double>* cache) {
    Rng dropout(77);
    return sigmoid_ce(forward_full(t, p, batch, Mode::Train, &dropout, cache), labels);
  };
  ForwardCache<double> cache;
  auto lr = loss_at(params, &cache);
  auto grads = backward_full(t, params, cache, lr.grad, FreezeMask::all_trainable(t));

  auto infos = t.parameters();
  Rng pick(31);
  std::uniform_int_distribution<size_t> which(0, infos.size() - 1);
  const double eps = 1e-5;
  auto relative = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
  };
  double worst = 0;
  int kinks = 0;
  for (int s = 0; s < 200; ++s) {
    const auto& info = infos[which(pick)];
    auto& tensor = param_ref(params.layers[static_cast<size_t>(info.node)], info);
    std::uniform_int_distribution<Index> entry(0, tensor.size() - 1);
    const Index e = entry(pick);
    const double saved = tensor[e];
    tensor[e] = saved + eps;
    const double up = loss_at(params, nullptr).loss;
    tensor[e] = saved - eps;
    const double down = loss_at(params, nullptr).loss;
    tensor[e] = saved;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = param_ref(grads.layers[static_cast<size_t>(info.node)], info)[e];
    double rel = relative(analytic, numeric);
    if (rel > 1e-3) {
      // A ReLU or max-pool switch inside [-eps, eps] makes the central
      // difference meaningless; the analytic value must then equal one of
      // the one-sided slopes.
      const double mid = loss_at(params, nullptr).loss;
      const double fwd = (up - mid) / eps, bwd = (mid - down) / eps;
      if (relative(fwd, bwd) > 1e-3) {
        ++kinks;
        rel = std::min(relative(analytic, fwd), relative(analytic, bwd));
      }
    }
    worst = std::max(worst, rel);
  }
  CHECK(kinks <= 5);
  CHECK(worst < 1e-3);
}

TEST_CASE("backward_full reachability, freeze mask and trunk additivity") {
  auto t = build_mcnn(vocab(), groups(), TopologyConfig::tiny());
  auto params = init_network<double>(t, 5);
  auto batch = random_batch(t, 3, 2);
  ForwardCache<double> cache;
  Rng rng(1);
  forward_full(t, params, batch, Mode::Train, &rng, &cache);
  Rng gr(8);
  std::normal_distribution<double> d;
  Tensord gs({3, 40});
  for (auto& v : gs.values()) v = d(gr);
  const auto trainable = FreezeMask::all_trainable(t);
  auto full = backward_full(t, params, cache, gs, trainable);

  SUBCASE("only Gender grad scores -> Gender branch and trunk only") {
    Tensord only = Tensord({3, 40});
    const Index male = vocab().index_of("Male");
    for (Index i = 0; i < 3; ++i) only[i * 40 + male] = gs[i * 40 + male];
    auto g = backward_full(t, params, cache, only, trainable);
    for (const auto& p : t.parameters()) {
      const bool on_path = p.name.rfind("conv1", 0) == 0 || p.name.rfind("conv2", 0) == 0 ||
                           p.name.find(".Gender.") != std::string::npos;
      const double mag = g.at(t, p.name).array().abs().sum();
      CAPTURE(p.name);
      if (on_path) {
        CHECK(mag > 0.0);
      } else {
        CHECK(mag == 0.0);
      }
    }
  }

  SUBCASE("trunk gradient is the sum of per-branch contributions") {
    Tensord sum(params.at(t, "conv2.weight").shape());
    for (const auto& branch : t.groups.branches()) {
      Tensord part({3, 40});
      for (const auto& head : t.heads) {
        if (t.groups.branch_of(head.group) != branch.name) continue;
        for (Index col : head.columns)
          for (Index i = 0; i < 3; ++i) part[i * 40 + col] = gs[i * 40 + col];
      }
      sum.array() += backward_full(t, params, cache, part, trainable).at(t, "conv2.weight").array();
    }
    const auto& whole = full.at(t, "conv2.weight");
    const double scale = whole.array().abs().maxCoeff();
    CHECK((sum.array() - whole.array()).abs().maxCoeff() < 1e-12 * scale);
  }

  SUBCASE("frozen tensors get zero gradients") {
    auto mask = FreezeMask::all_frozen(t);
    mask.set("fc2.Mouth.weight", false);
    auto g = backward_full(t, params, cache, gs, mask);
    for (const auto& p : t.parameters()) {
      const double mag = g.at(t, p.name).array().abs().sum();
      if (p.name == "fc2.Mouth.weight") {
        CHECK(g.at(t, p.name) == full.at(t, p.name));
      } else {
        CHECK(mag == 0.0);
      }
    }
  }

  SUBCASE("AUX stage mask leaves only the AUX gradient") {
    auto aux = attach_aux(t);
    auto ap = init_network<double>(aux.topology, 5);
    ForwardCache<double> ac;
    Rng r2(1);
    forward_full(aux.topology, ap, batch, Mode::Train, &r2, &ac);
    auto g = backward_full(aux.topology, ap, ac, gs, aux.freeze);
    for (const auto& p : aux.topology.parameters()) {
      const double mag = g.at(aux.topology, p.name).array().abs().sum();
      if (p.name == "aux.weight") {
        CHECK(mag > 0.0);
      } else {
        CHECK(mag == 0.0);
      }
    }
  }

  SUBCASE("missing cache") {
    CHECK_THROWS_AS(backward_full(t, params, ForwardCache<double>{}, gs, trainable), ContractError);
  }
}

TEST_CASE("forward_full rejects mismatched params") {
  auto t = build_mcnn(vocab(), groups(), TopologyConfig::tiny());
  auto params = init_network<float>(t, 1);
  params.at(t, "fc1.Nose.weight") = Tensorf({3, 3});
  Tensorf batch({1, 3, 16, 16});
  CHECK_THROWS_AS(forward_full(t, params, batch, Mode::Eval, nullptr), CheckpointError);
}

TEST_CASE("AUX on sigmoid scores") {
  auto cfg = TopologyConfig::tiny();
  cfg.aux_input = AuxInput::Sigmoid;
  auto aux = attach_aux(build_mcnn(vocab(), groups(), cfg));
  auto params = init_network<double>(aux.topology, 2);
  auto batch = random_batch(aux.topology, 2, 4);
  auto s = forward_full(aux.topology, params, batch, Mode::Eval, nullptr);
  CHECK(s.array().minCoeff() > 0.0);
  CHECK(s.array().maxCoeff() < 1.0);
}
