// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// of criteria by number; no arguments runs all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "mcnn/checkpoint.hpp"
#include "mcnn/config.hpp"
#include "mcnn/exporters.hpp"
#include "mcnn/loss.hpp"
#include "mcnn/network.hpp"
#include "oracles.hpp"

using namespace mcnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double relative(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// ---------------------------------------------------------------------------
// Shared criterion-6 setup: the demo config's data and its seed-1 run.

struct Demo {
  RunConfig run;
  SyntheticSpec spec;
  Dataset data;
  std::optional<BatchSource> source;
  NetworkTopology mcnn;
};

Demo& demo() {
  static std::optional<Demo> d;
  if (!d) {
    d.emplace();
    const auto file = KeyValueFile::load(MCNN_DEMO_CONFIG);
    d->run.apply(file);
    d->spec = synthetic_spec(file);
    d->data = synth_generate(d->spec);
    d->source.emplace(d->data, compute_mean(d->data), 16, 16);
    d->mcnn = build_mcnn(d->data.vocab, GroupSpec::celeba_default(d->data.vocab), TopologyConfig::by_name(d->run.scale));
  }
  return *d;
}

struct DemoRun {
  TwoStageResult<float> result;
  double seconds = 0;
};

const DemoRun& demo_run(std::uint64_t seed) {
  static std::map<std::uint64_t, DemoRun> runs;
  auto it = runs.find(seed);
  if (it == runs.end()) {
    Demo& d = demo();
    HyperParams h = d.run.hyper;
    h.seed = seed;
    const auto t0 = Clock::now();
    DemoRun r{train_two_stage<float>(d.mcnn, *d.source, h), 0};
    r.seconds = seconds_since(t0);
    it = runs.emplace(seed, std::move(r)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  Rng rng(4242);
  std::uniform_int_distribution<Index> d(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = 7000 + static_cast<std::uint64_t>(trial);
    const Index n = d(rng), c = d(rng), h = 3 + d(rng), w = 3 + d(rng);
    auto note = [&](const std::string& kind, double e) { worst[kind] = std::max(worst[kind], e); };
    note("Conv", gradient_check(Conv{d(rng), d(rng), d(rng), d(rng) - 1}, {n, c, h, w}, seed));
    note("MaxPool", gradient_check(MaxPool{d(rng), d(rng)}, {n, c, h, w}, seed));
    note("LRN", gradient_check(LRN{2 * d(rng) - 1, 1e-2 * static_cast<double>(d(rng)), 0.75, 2.0}, {n, c + 3, h, w}, seed));
    note("ReLU", gradient_check(ReLU{}, {n, c, h, w}, seed));
    note("FullyConnected", gradient_check(FullyConnected{d(rng), true}, {n, c, h}, seed));
    note("FullyConnected", gradient_check(FullyConnected{d(rng), false}, {n, c * h}, seed));
    note("Dropout", gradient_check(Dropout{0.25 * static_cast<double>(d(rng) - 1)}, {n, c * h}, seed));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [kind, e] : worst) {
    const double limit = kind == "FullyConnected" ? 1e-6 : 1e-4;
    pass = pass && e < limit;
    detail += fmt("%s %.2e, ", kind.c_str(), e);
  }

  // Whole tiny MCNN-AUX network, 200 sampled parameters.
  const AttributeVocab v = AttributeVocab::celeba();
  const auto t = attach_aux(build_mcnn(v, GroupSpec::celeba_default(v), TopologyConfig::tiny())).topology;
  auto params = init_network<double>(t, 21);
  Rng init(22);
  std::normal_distribution<double> small(0.0, 0.05), unit(0.0, 1.0);
  for (auto& x : params.at(t, "aux.weight").values()) x += small(init);
  for (auto& layer : params.layers)
    for (auto& x : layer.bias.values()) x = small(init);
  Tensord batch({2, 3, 16, 16});
  for (auto& x : batch.values()) x = unit(init);
  BinaryMatrix y(2, 40);
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < 80; ++i) y(i / 40, i % 40) = coin(init);
  const LabelMatrix labels = LabelMatrix::full(y);
  auto loss_at = [&](const NetworkParams<double>& p, ForwardCache<double>* cache) {
    Rng dropout(5);
    return sigmoid_ce(forward_full(t, p, batch, Mode::Train, &dropout, cache), labels);
  };
  ForwardCache<double> cache;
  const auto lr = loss_at(params, &cache);
  const auto grads = backward_full(t, params, cache, lr.grad, FreezeMask::all_trainable(t));
  const auto infos = t.parameters();
  Rng pick(23);
  std::uniform_int_distribution<size_t> which(0, infos.size() - 1);
  const double eps = 1e-5;
  double net = 0;
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
    const double analytic = param_ref(grads.layers[static_cast<size_t>(info.node)], info)[e];
    double rel = relative(analytic, (up - down) / (2 * eps));
    if (rel > 1e-3) {
      // A ReLU or max-pool switch inside the step: compare one-sided slopes.
      const double mid = loss_at(params, nullptr).loss;
      const double fwd = (up - mid) / eps, bwd = (mid - down) / eps;
      if (relative(fwd, bwd) > 1e-3) {
        ++kinks;
        rel = std::min(relative(analytic, fwd), relative(analytic, bwd));
      }
    }
    net = std::max(net, rel);
  }
  const double secs = seconds_since(t0);
  pass = pass && net < 1e-3 && secs < 120;
  detail += fmt("network %.2e over 200 params (%d at kinks), %.1f s", net, kinks, secs);
  return {pass, detail};
}

Verdict parameter_counts() {
  const AttributeVocab v = AttributeVocab::celeba();
  const auto config = TopologyConfig::paper();
  const auto mcnn = build_mcnn(v, GroupSpec::celeba_default(v), config);
  const auto indep = build_independent(v, "Smiling", config);
  const auto aux = attach_aux(mcnn).topology;
  const Index m = count_params(mcnn).total, i = count_params(indep).total, a = count_params(aux).total;
  auto allocated = [](const NetworkTopology& t) {
    const auto p = zero_params<float>(t);
    Index n = 0;
    for (const auto& l : p.layers) n += l.weight.size() + l.bias.size();
    return n;
  };
  const bool agree = allocated(mcnn) == m && allocated(indep) == i && allocated(aux) == a;
  const double ratio = 40.0 * static_cast<double>(i) / static_cast<double>(m);
  const bool pass = agree && i > 1'600'000 && m < 15'000'000 && ratio > 4.0 && a - m == 1600;
  return {pass, fmt("independent %ld, mcnn %ld, 40x ratio %.2f, aux adds %ld, allocation %s", static_cast<long>(i),
                    static_cast<long>(m), ratio, static_cast<long>(a - m), agree ? "agrees" : "DISAGREES")};
}

Verdict loss_oracle() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 3.0);
  std::bernoulli_distribution coin(0.5);
  double worst_loss = 0, worst_grad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 3, a = 5;
    Tensord s({n, a});
    BinaryMatrix y(n, a);
    for (Index k = 0; k < n * a; ++k) {
      s[k] = g(rng);
      y(k / a, k % a) = coin(rng);
    }
    const LabelMatrix labels = LabelMatrix::full(y);
    const auto r = sigmoid_ce(s, labels);
    double ref = 0;
    for (Index k = 0; k < n * a; ++k) ref += oracle::sigmoid_ce(s[k], y(k / a, k % a));
    worst_loss = std::max(worst_loss, std::abs(r.loss - ref / static_cast<double>(n)));
    const double eps = 1e-5;
    for (Index k = 0; k < n * a; ++k) {
      LabelMatrix single = labels;
      single.mask.setZero();
      single.mask(k / a, k % a) = 1;
      Tensord p = s;
      p[k] += eps;
      const double up = sigmoid_ce(p, single).loss;
      p[k] -= 2 * eps;
      const double down = sigmoid_ce(p, single).loss;
      worst_grad = std::max(worst_grad, relative((up - down) / (2 * eps), r.grad[k]));
    }
  }
  return {worst_loss < 1e-12 && worst_grad < 1e-8,
          fmt("loss vs scalar loop %.2e, gradient vs differences %.2e", worst_loss, worst_grad)};
}

Verdict memorization() {
  const auto t0 = Clock::now();
  SyntheticSpec s;
  s.train = 20;
  s.test = 0;
  s.label_noise = 0.1;
  const Dataset d = synth_generate(s);
  const BatchSource src(d, compute_mean(d), 16, 16);
  const auto t = build_mcnn(d.vocab, GroupSpec::celeba_default(d.vocab), TopologyConfig::tiny());
  HyperParams h;
  h.epochs = 500;
  h.batch_size = 20;
  h.lr_step = 0;
  const auto r = train(t, init_network<float>(t, 1), src, h, FreezeMask::all_trainable(t));
  const double acc = *evaluate(t, r.params, src, Split::Train).mean_accuracy;
  const double secs = seconds_since(t0);
  return {acc >= 0.99 && secs < 300, fmt("train accuracy %.4f after 500 epochs, %.1f s", acc, secs)};
}

template <typename Scalar>
bool same_bits(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<size_t>(a.size())) == 0;
}

Verdict two_stage() {
  const auto& run = demo_run(1);
  const auto& r = run.result;
  bool unchanged = true;
  for (const auto& p : r.mcnn.parameters())
    unchanged = unchanged && same_bits(r.mcnn_params.at(r.mcnn, p.name), r.aux_params.at(r.aux, p.name));
  const double gap = std::abs(r.stage2_initial_loss - r.stage1_final_loss);
  const bool descended = r.stage2_final_loss <= r.stage2_initial_loss + 1e-6;
  return {unchanged && gap <= 1e-6 && descended,
          fmt("MCNN tensors %s, |stage-2 initial - stage-1 final| = %.2e, stage-2 loss %.6f -> %.6f",
              unchanged ? "bitwise unchanged" : "CHANGED", gap, r.stage2_initial_loss, r.stage2_final_loss)};
}

struct PairWeights {
  Index a, b;
  double ab, ba, rho;
};

Verdict planted_recovery() {
  const auto& run = demo_run(1);
  const auto& r = run.result;
  const Demo& d = demo();
  const auto& w = r.aux_params.at(r.aux, "aux.weight");
  const Index n = r.aux.output_width();
  int diag = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < n; ++j)
      if (w[i * n + j] > w[i * n + best]) best = j;
    diag += best == i;
  }
  const auto names = r.aux.output_names();
  auto col = [&](const std::string& name) {
    return static_cast<Index>(std::find(names.begin(), names.end(), name) - names.begin());
  };
  const auto table = extract_relationships(names, w, 0.5);
  int signs = 0, listed = 0;
  for (const auto& p : d.spec.pairs) {
    const Index a = col(p.a), b = col(p.b);
    // The link between a and b is the pair of weights a<-b and b<-a; its sign
    // is the sign of their sum.
    const double link = w[a * n + b] + w[b * n + a];
    signs += (link > 0) == (p.rho > 0);
    bool hit = false;
    for (auto [row, partner] : {std::pair{a, p.b}, std::pair{b, p.a}}) {
      const auto& lst = p.rho > 0 ? table.rows[static_cast<size_t>(row)].positive : table.rows[static_cast<size_t>(row)].negative;
      for (const auto& inf : lst) hit = hit || inf.name == partner;
    }
    listed += hit;
  }
  const auto pairs = static_cast<int>(d.spec.pairs.size());
  return {diag >= 36 && signs >= 5 && listed >= 4 && run.seconds < 1800,
          fmt("diagonal is row max in %d/40, link signs %d/%d, listed %d/%d, %.0f s", diag, signs, pairs, listed,
              pairs, run.seconds)};
}

Verdict multitask_direction() {
  Demo& d = demo();
  const auto& spec = d.spec;
  std::vector<std::string> attrs;
  for (const auto& p : spec.pairs) attrs.insert(attrs.end(), {p.a, p.b});
  double indep_sum = 0, mcnn_sum = 0, aux_sum = 0;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  for (auto seed : seeds) {
    const auto& r = demo_run(seed).result;
    const auto m1 = evaluate(r.mcnn, r.mcnn_params, *d.source, Split::Test);
    const auto m2 = evaluate(r.aux, r.aux_params, *d.source, Split::Test);
    HyperParams h = d.run.hyper;
    h.seed = seed;
    double ind = 0, mc = 0, ax = 0;
    for (const auto& name : attrs) {
      const Index k = d.data.vocab.index_of(name);
      mc += *m1.per_attribute_accuracy[static_cast<size_t>(k)];
      ax += *m2.per_attribute_accuracy[static_cast<size_t>(k)];
      const auto t = build_independent(d.data.vocab, name, d.mcnn.config);
      const auto tr = train(t, init_network<float>(t, seed), *d.source, h, FreezeMask::all_trainable(t));
      ind += *evaluate(t, tr.params, *d.source, Split::Test).mean_accuracy;
    }
    const double k = static_cast<double>(attrs.size());
    std::cout << fmt("  seed %lu: independent %.4f, mcnn %.4f, mcnn-aux %.4f\n", static_cast<unsigned long>(seed),
                     ind / k, mc / k, ax / k);
    indep_sum += ind / k;
    mcnn_sum += mc / k;
    aux_sum += ax / k;
  }
  const double s = static_cast<double>(seeds.size());
  const double ind = 100 * indep_sum / s, mc = 100 * mcnn_sum / s, ax = 100 * aux_sum / s;
  return {mc >= ind - 0.5 && ax >= mc - 0.2,
          fmt("pair-attribute accuracy over 3 seeds: independent %.2f, mcnn %.2f, mcnn-aux %.2f points", ind, mc, ax)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "mcnn_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "variant = mcnn-aux\nscale = tiny\nepochs = 2\naux_epochs = 2\nbatch = 25\n"
                                    "threads = 1\ntrain = 400\ntest = 100\nlabel_noise = 0.1\n"
                                    "pair = Male, Wearing_Earrings, -0.9\n";
  std::ostringstream sink;
  bool ran = true;
  for (const char* sub : {"a", "b"})
    ran = ran && cli::run({"train", "--synthetic", (dir / "run.cfg").string(), "--seed", "7", "--out", (dir / sub).string()},
                          sink, sink) == 0;
  const bool same = ran && slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin") &&
                    slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv");

  // Save/load of the trained checkpoint, then save again.
  bool round_trip = false, exports = false;
  if (ran) {
    const auto ckpt = load_checkpoint<float>(dir / "a" / "checkpoint.bin");
    std::stringstream again;
    save_checkpoint(again, ckpt);
    const auto back = load_checkpoint<float>(again);
    round_trip = again.str() == slurp(dir / "a" / "checkpoint.bin");
    for (const auto& p : ckpt.topology.parameters())
      round_trip = round_trip && same_bits(ckpt.params.at(ckpt.topology, p.name), back.params.at(back.topology, p.name));

    const auto& w = ckpt.params.at(ckpt.topology, "aux.weight");
    std::ifstream csv(dir / "a" / "heatmap.csv");
    const auto read = read_heatmap_csv<float>(csv);
    std::ifstream pgm_in(dir / "a" / "heatmap.pgm", std::ios::binary);
    const GrayImage img = read_pgm(pgm_in);
    double scale = 0;
    for (Index i = 0; i < w.size(); ++i) scale = std::max(scale, std::abs(static_cast<double>(w[i])));
    bool grey = img.width == 40 * 8 && img.height == 40 * 8;
    for (Index y = 0; grey && y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x)
        grey = grey && img.pixels[static_cast<size_t>(y * img.width + x)] ==
                           heatmap_gray(w[(y / 8) * 40 + x / 8], scale);
    exports = same_bits(read.weights, w) && read.names == ckpt.topology.output_names() && grey;
  }
  fs::remove_all(dir);
  return {same && round_trip && exports,
          fmt("repeat run %s, checkpoint round-trip %s, heatmap CSV/PGM %s", same ? "bit-identical" : "DIFFERS",
              round_trip ? "bit-exact" : "NOT exact", exports ? "exact" : "NOT exact")};
}

Verdict data_pipeline() {
  // Label fixture.
  const AttributeVocab v = AttributeVocab::celeba();
  std::string text = "3\n";
  for (const auto& name : v.names()) text += name + " ";
  text += "\n";
  const std::vector<std::vector<int>> rows{{0, 39}, {}, {5, 6, 7, 20}};
  for (size_t r = 0; r < rows.size(); ++r) {
    text += fmt("%06zu.jpg", r + 1);
    for (Index a = 0; a < 40; ++a)
      text += std::count(rows[r].begin(), rows[r].end(), a) ? "  1" : " -1";
    text += "\n";
  }
  std::istringstream in(text);
  const LabelFile f = parse_label_file(in, "fixture");
  bool exact = f.records.size() == 3 && f.vocab == v;
  for (size_t r = 0; exact && r < 3; ++r) {
    exact = f.records[r].id == fmt("%06zu.jpg", r + 1);
    for (Index a = 0; a < 40; ++a)
      exact = exact && f.records[r].labels[static_cast<size_t>(a)] ==
                           (std::count(rows[r].begin(), rows[r].end(), a) ? 1 : 0);
  }
  std::stringstream rewritten;
  write_label_file(rewritten, f);
  const LabelFile again = parse_label_file(rewritten, "rewritten");
  for (size_t r = 0; exact && r < 3; ++r) exact = again.records[r].labels == f.records[r].labels;

  // Jitter.
  SyntheticSpec s;
  s.train = 30;
  s.test = 10;
  const Dataset small = synth_generate(s);
  const auto grid = JitterGrid::square(1);
  const Dataset j = jitter_dataset(small, grid);
  std::set<std::string> distinct;
  for (const auto& copy : jitter_augment(small.images[0], grid))
    distinct.insert(std::string(reinterpret_cast<const char*>(copy.data()), sizeof(float) * static_cast<size_t>(copy.size())));
  bool labels_kept = j.size() == 9 * 30 + 10;
  for (Index r = 0; labels_kept && r < j.size(); ++r) {
    const std::string& id = j.ids[static_cast<size_t>(r)];
    const auto src = std::find(small.ids.begin(), small.ids.end(), id.substr(0, id.find('#'))) - small.ids.begin();
    labels_kept = (j.labels.values.row(r) == small.labels.values.row(src)).all();
  }
  const bool jitter_ok = grid.offsets.size() == 9 && distinct.size() == 9 && labels_kept;

  // Mean subtraction on the criterion-6 training split.
  Demo& d = demo();
  const auto train_rows = d.data.rows(Split::Train);
  const Index pixels = 3 * 16 * 16;
  std::vector<double> sums(static_cast<size_t>(pixels), 0.0);
  for (size_t start = 0; start < train_rows.size(); start += 500) {
    const std::vector<Index> chunk(train_rows.begin() + static_cast<std::ptrdiff_t>(start),
                                   train_rows.begin() + static_cast<std::ptrdiff_t>(std::min(start + 500, train_rows.size())));
    const Tensord x = d.source->images<double>(chunk, Mode::Eval, nullptr);
    for (Index i = 0; i < static_cast<Index>(chunk.size()); ++i)
      for (Index p = 0; p < pixels; ++p) sums[static_cast<size_t>(p)] += x[i * pixels + p];
  }
  double worst_mean = 0;
  for (double v2 : sums) worst_mean = std::max(worst_mean, std::abs(v2 / static_cast<double>(train_rows.size())));

  // Crop uniformity: 25 offsets, chi-square critical value for 24 dof at p = 0.01.
  Rng rng(2718);
  std::map<std::pair<Index, Index>, int> counts;
  const int draws = 25000;
  for (int i = 0; i < draws; ++i) {
    const auto o = crop_offset(20, 20, 16, 16, Mode::Train, &rng);
    ++counts[{o.y, o.x}];
  }
  double chi2 = 0;
  for (const auto& [k, c] : counts) chi2 += (c - draws / 25.0) * (c - draws / 25.0) / (draws / 25.0);
  const bool crop_ok = counts.size() == 25 && chi2 < 42.980;

  return {exact && jitter_ok && worst_mean < 1e-5 && crop_ok,
          fmt("label fixture %s, jitter %zu distinct variants with labels %s, max |train mean| %.2e, crop chi2 %.1f "
              "(critical 42.98)",
              exact ? "exact" : "MISMATCH", distinct.size(), labels_kept ? "kept" : "CHANGED", worst_mean, chi2)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},
      {"parameter counts", parameter_counts},
      {"loss oracle", loss_oracle},
      {"memorization", memorization},
      {"two-stage fidelity", two_stage},
      {"planted-correlation recovery", planted_recovery},
      {"multi-task benefit direction", multitask_direction},
      {"determinism and serialization", determinism},
      {"data pipeline", data_pipeline},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << number << " (" << criteria[i].first << "): " << (v.pass ? "PASS" : "FAIL") << "  "
              << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
