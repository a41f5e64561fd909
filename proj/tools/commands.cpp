#include "commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "mcnn/checkpoint.hpp"
#include "mcnn/config.hpp"
#include "mcnn/exporters.hpp"
#include "mcnn/synthetic.hpp"
#include "mcnn/trainer.hpp"

namespace mcnn::cli {
namespace fs = std::filesystem;

namespace {

// Flag values as given; unset flags leave the config file's value alone.
struct Flags {
  std::optional<std::string> variant, attribute, data, synthetic, groups, scale, out, config, seed, epochs,
      batch, lr, threads;
  std::string checkpoint;
  std::string split = "test";
  double tau = 0.5;
  long cell = 8;
  std::string format = "mtt";
};

RunConfig resolve(const Flags& f) {
  RunConfig rc;
  if (f.synthetic) rc.apply(KeyValueFile::load(*f.synthetic));
  if (f.config) rc.apply(KeyValueFile::load(*f.config));
  const std::pair<const char*, const std::optional<std::string>*> flags[] = {
      {"variant", &f.variant}, {"attribute", &f.attribute}, {"data", &f.data},   {"groups", &f.groups},
      {"scale", &f.scale},     {"out", &f.out},             {"seed", &f.seed},   {"epochs", &f.epochs},
      {"batch", &f.batch},     {"lr", &f.lr},               {"threads", &f.threads}};
  for (const auto& [key, value] : flags)
    if (*value) rc.set(key, **value);
  rc.hyper.validate();
  return rc;
}

Dataset load_data(const Flags& f, const RunConfig& rc) {
  if (f.synthetic && !rc.data.empty()) throw ConfigError("give either --data or --synthetic, not both");
  Dataset d;
  if (f.synthetic) {
    d = synth_generate(synthetic_spec(KeyValueFile::load(*f.synthetic)));
  } else if (!rc.data.empty()) {
    d = load_dataset(DatasetManifest::load(rc.data));
  } else {
    throw ConfigError("no dataset: pass --data DIR or --synthetic CFG");
  }
  return rc.jitter ? jitter_dataset(d, *rc.jitter) : d;
}

GroupSpec load_groups(const RunConfig& rc, const AttributeVocab& vocab) {
  return rc.groups.empty() ? GroupSpec::celeba_default(vocab) : GroupSpec::load(rc.groups, vocab);
}

NetworkTopology build(const RunConfig& rc, const AttributeVocab& vocab) {
  const TopologyConfig config = [&] {
    TopologyConfig c = TopologyConfig::by_name(rc.scale);
    c.aux_input = rc.aux_input;
    return c;
  }();
  if (rc.variant == Variant::Independent) {
    if (rc.attribute.empty()) throw ConfigError("--variant independent needs --attribute NAME");
    return build_independent(vocab, rc.attribute, config);
  }
  NetworkTopology mcnn = build_mcnn(vocab, load_groups(rc, vocab), config);
  return rc.variant == Variant::McnnAux ? attach_aux(mcnn).topology : mcnn;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_loss_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  auto out = open_out(path);
  out << "stage,epoch,lr,loss\n";
  out.precision(17);
  for (const auto& r : history) out << r.stage << ',' << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
}

template <typename Scalar>
const Tensor<Scalar>& aux_weight(const Checkpoint<Scalar>& c) {
  if (c.topology.variant != Variant::McnnAux)
    throw ConfigError("checkpoint holds a " + to_string(c.topology.variant) +
                      " network; heatmaps and relationships need mcnn-aux");
  return c.params.at(c.topology, c.topology.nodes[static_cast<size_t>(c.topology.aux_node)].name + ".weight");
}

template <typename Scalar>
void write_heatmaps(const Checkpoint<Scalar>& c, const fs::path& dir, Index cell) {
  const auto& w = aux_weight(c);
  const auto names = c.topology.output_names();
  {
    auto out = open_out(dir / "heatmap.csv");
    write_heatmap_csv(out, names, w);
  }
  {
    auto out = open_out(dir / "heatmap.pgm", true);
    write_heatmap_pgm(out, w, cell);
  }
  auto pos = open_out(dir / "heatmap_pos.pgm", true);
  auto neg = open_out(dir / "heatmap_neg.pgm", true);
  write_signed_pgm(pos, neg, w, cell);
}

template <typename Scalar>
RelationshipTable relationships(const Checkpoint<Scalar>& c, double tau) {
  return extract_relationships(c.topology.output_names(), aux_weight(c), tau);
}

void print_metrics(std::ostream& out, const std::string& label, const MetricsReport& m) {
  out << label << ": mean accuracy ";
  if (m.mean_accuracy) {
    out << *m.mean_accuracy;
  } else {
    out << "NA";
  }
  out << ", loss " << m.loss << '\n';
}

Split report_split(const Dataset& d) {
  for (Split s : {Split::Test, Split::Val})
    if (!d.rows(s).empty()) return s;
  return Split::Train;
}

template <typename Scalar>
int train_as(const Flags& f, const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Dataset data = load_data(f, rc);
  const NetworkTopology topology = build(rc, data.vocab);
  const BatchSource src(data, compute_mean(data, rc.mean), topology.config.height, topology.config.width);
  auto progress = [&err](const EpochRecord& r) {
    err << r.stage << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss << '\n';
  };

  Checkpoint<Scalar> ckpt;
  ckpt.hyper = rc.hyper;
  if (rc.variant == Variant::McnnAux) {
    const NetworkTopology mcnn = build_mcnn(data.vocab, load_groups(rc, data.vocab), topology.config);
    auto r = train_two_stage<Scalar>(mcnn, src, rc.hyper, progress);
    err << "stage 1: " << r.stage1_seconds << " s, final loss " << r.stage1_final_loss << '\n'
        << "stage 2: " << r.stage2_seconds << " s, loss " << r.stage2_initial_loss << " -> "
        << r.stage2_final_loss << '\n';
    ckpt.topology = std::move(r.aux);
    ckpt.params = std::move(r.aux_params);
    ckpt.freeze = std::move(r.freeze);
    ckpt.history = std::move(r.history);
  } else {
    auto r = train<Scalar>(topology, init_network<Scalar>(topology, rc.hyper.seed), src, rc.hyper,
                           FreezeMask::all_trainable(topology), to_string(rc.variant), progress);
    ckpt.topology = topology;
    ckpt.params = std::move(r.params);
    ckpt.freeze = FreezeMask::all_trainable(topology);
    ckpt.history = std::move(r.history);
  }

  fs::create_directories(rc.out);
  save_checkpoint(rc.out / "checkpoint.bin", ckpt);
  write_loss_csv(rc.out / "loss.csv", ckpt.history);
  const Split split = report_split(data);
  const MetricsReport m =
      evaluate(ckpt.topology, ckpt.params, src, split, rc.hyper.batch_size, rc.hyper.threads);
  {
    auto csv = open_out(rc.out / "metrics.csv");
    m.write_csv(csv);
  }
  print_metrics(out, to_string(split), m);
  if (rc.variant == Variant::McnnAux) {
    write_heatmaps(ckpt, rc.out, 8);
    auto txt = open_out(rc.out / "relationships.txt");
    txt << relationships(ckpt, 0.5).text();
  }
  out << "wrote " << rc.out.string() << '\n';
  return kOk;
}

template <typename Scalar>
int evaluate_as(const Flags& f, const RunConfig& rc, std::ostream& out) {
  const auto ckpt = load_checkpoint<Scalar>(f.checkpoint);
  const Dataset data = load_data(f, rc);
  const auto& c = ckpt.topology.config;
  const BatchSource src(data, compute_mean(data, rc.mean), c.height, c.width);
  const Split split = parse_split(f.split);
  const MetricsReport m = evaluate(ckpt.topology, ckpt.params, src, split, rc.hyper.batch_size, rc.hyper.threads);
  if (f.out) {
    fs::create_directories(rc.out);
    auto csv = open_out(rc.out / ("metrics_" + f.split + ".csv"));
    m.write_csv(csv);
  } else {
    m.write_csv(out);
  }
  print_metrics(out, f.split, m);
  return kOk;
}

template <typename Scalar>
int heatmap_as(const Flags& f, const RunConfig& rc, std::ostream& out) {
  if (f.cell < 1) throw ConfigError("--cell must be >= 1");
  const auto ckpt = load_checkpoint<Scalar>(f.checkpoint);
  aux_weight(ckpt);  // variant check before touching the output directory
  fs::create_directories(rc.out);
  write_heatmaps(ckpt, rc.out, f.cell);
  out << "wrote " << (rc.out / "heatmap.csv").string() << " and PGM images\n";
  return kOk;
}

template <typename Scalar>
int relationships_as(const Flags& f, const RunConfig& rc, std::ostream& out) {
  const auto ckpt = load_checkpoint<Scalar>(f.checkpoint);
  const std::string text = relationships(ckpt, f.tau).text();
  if (f.out) {
    fs::create_directories(rc.out);
    auto txt = open_out(rc.out / "relationships.txt");
    txt << text;
  } else {
    out << text;
  }
  return kOk;
}

template <template <typename> class Fn, typename... Args>
int dispatch(Precision p, Args&&... args) {
  return p == Precision::F64 ? Fn<double>::call(std::forward<Args>(args)...)
                             : Fn<float>::call(std::forward<Args>(args)...);
}

template <typename S>
struct Train {
  static int call(const Flags& f, const RunConfig& rc, std::ostream& o, std::ostream& e) {
    return train_as<S>(f, rc, o, e);
  }
};
template <typename S>
struct Evaluate {
  static int call(const Flags& f, const RunConfig& rc, std::ostream& o) { return evaluate_as<S>(f, rc, o); }
};
template <typename S>
struct Heatmap {
  static int call(const Flags& f, const RunConfig& rc, std::ostream& o) { return heatmap_as<S>(f, rc, o); }
};
template <typename S>
struct Relationships {
  static int call(const Flags& f, const RunConfig& rc, std::ostream& o) { return relationships_as<S>(f, rc, o); }
};

int params_cmd(const RunConfig& rc, std::ostream& out) {
  const AttributeVocab vocab = AttributeVocab::celeba();
  RunConfig c = rc;
  if (c.variant == Variant::Independent && c.attribute.empty()) c.attribute = vocab.name(0);
  const NetworkTopology t = build(c, vocab);
  const ParamCount count = count_params(t);
  Index allocated = 0;
  for (const auto& p : t.parameters()) allocated += shape_size(p.shape);
  for (const auto& [layer, n] : count.per_layer) out << layer << ' ' << n << '\n';
  out << "total " << count.total << '\n';
  if (allocated != count.total) {
    out << "allocated " << allocated << " (mismatch)\n";
    return kDataError;
  }
  return kOk;
}

int synth_cmd(const Flags& f, const RunConfig& rc, std::ostream& out) {
  if (!f.synthetic) throw ConfigError("synth needs --synthetic CFG");
  const Dataset d = synth_generate(synthetic_spec(KeyValueFile::load(*f.synthetic)));
  ImageFormat format;
  if (f.format == "ppm") {
    format = ImageFormat::Ppm;
  } else if (f.format == "mtt") {
    format = ImageFormat::RawTensor;
  } else {
    throw ConfigError("--format must be ppm or mtt");
  }
  write_dataset(d, rc.out, format);
  out << "wrote " << d.size() << " samples to " << rc.out.string() << '\n';
  return kOk;
}

void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value settings file");
  app->add_option("--variant", f.variant, "independent, mcnn or mcnn-aux");
  app->add_option("--attribute", f.attribute, "attribute of an independent network");
  app->add_option("--groups", f.groups, "group and branch definition file");
  app->add_option("--scale", f.scale, "paper or tiny");
  app->add_option("--seed", f.seed);
  app->add_option("--out", f.out, "output directory");
  app->add_option("--epochs", f.epochs);
  app->add_option("--batch", f.batch);
  app->add_option("--lr", f.lr);
  app->add_option("--threads", f.threads, "evaluation workers");
}

void add_data_flags(CLI::App* app, Flags& f) {
  auto* data = app->add_option("--data", f.data, "CelebA-layout dataset directory");
  app->add_option("--synthetic", f.synthetic, "synthetic dataset config")->excludes(data);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task attribute CNN with an auxiliary relationship layer", "mcnn"};
  app.require_subcommand(1);
  Flags f;

  auto* train_cmd = app.add_subcommand("train", "train a network and write checkpoint, metrics and loss CSVs");
  add_run_flags(train_cmd, f);
  add_data_flags(train_cmd, f);

  auto* params = app.add_subcommand("params", "print parameter counts");
  add_run_flags(params, f);

  auto* heatmap = app.add_subcommand("heatmap", "export the AUX weights as CSV and PGM");
  heatmap->add_option("--checkpoint", f.checkpoint)->required();
  heatmap->add_option("--out", f.out, "output directory");
  heatmap->add_option("--cell", f.cell, "pixels per weight");

  auto* rel = app.add_subcommand("relationships", "list positive and negative attribute influences");
  rel->add_option("--checkpoint", f.checkpoint)->required();
  rel->add_option("--tau", f.tau, "fraction of the largest off-diagonal weight");
  rel->add_option("--out", f.out, "write relationships.txt here instead of stdout");

  auto* eval = app.add_subcommand("evaluate", "accuracy of a checkpoint on one split");
  eval->add_option("--checkpoint", f.checkpoint)->required();
  eval->add_option("--split", f.split, "train, val or test");
  eval->add_option("--config", f.config);
  eval->add_option("--batch", f.batch);
  eval->add_option("--threads", f.threads);
  eval->add_option("--out", f.out, "write metrics_<split>.csv here instead of stdout");
  add_data_flags(eval, f);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset in the CelebA layout");
  synth->add_option("--synthetic", f.synthetic, "synthetic dataset config")->required();
  synth->add_option("--out", f.out, "dataset directory");
  synth->add_option("--format", f.format, "image format: mtt or ppm");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig rc = resolve(f);
    if (train_cmd->parsed()) return dispatch<Train>(rc.hyper.precision, f, rc, out, err);
    if (params->parsed()) return params_cmd(rc, out);
    if (synth->parsed()) return synth_cmd(f, rc, out);
    const Precision p = checkpoint_precision(f.checkpoint);
    if (heatmap->parsed()) return dispatch<Heatmap>(p, f, rc, out);
    if (rel->parsed()) return dispatch<Relationships>(p, f, rc, out);
    return dispatch<Evaluate>(p, f, rc, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace mcnn::cli
