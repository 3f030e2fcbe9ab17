#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ndm/analysis.hpp"
#include "ndm/corpus.hpp"
#include "ndm/metrics.hpp"
#include "ndm/model.hpp"
#include "ndm/numerics.hpp"
#include "ndm/rng.hpp"
#include "ndm/simulator.hpp"
#include "ndm/trainer.hpp"

namespace ndm::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ';');
  return msg;
}

// Tracks everything a command writes under --out so a failed run leaves no
// partial outputs behind, and owns the resolved-config dump.
class RunWriter {
 public:
  explicit RunWriter(const std::string& out_dir) : dir_(out_dir) {
    fs::create_directories(dir_);
  }
  ~RunWriter() {
    if (committed_) return;
    std::error_code ec;
    for (const fs::path& p : written_) fs::remove(p, ec);
  }

  fs::path path(const std::string& name) {
    const fs::path p = dir_ / name;
    written_.push_back(p);
    return p;
  }

  void write_text(const std::string& name, const std::string& content) {
    const fs::path p = path(name);
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
  }

  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool committed_ = false;
};

// --config <json> supplies defaults for any option not given on the command
// line; explicit flags always win. The resolved values are dumped next to
// the outputs so every run is self-describing.
class ConfigOverlay {
 public:
  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T* target) {
    appliers_.emplace_back([opt, key, target](const json& cfg) {
      if (opt->count() == 0 && cfg.contains(key)) *target = cfg.at(key).get<T>();
    });
    dumpers_.emplace_back([key, target](json& out) { out[key] = *target; });
  }

  void apply(const std::string& config_path) {
    json cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config " + config_path);
      cfg = json::parse(in);
    }
    for (const auto& f : appliers_) f(cfg);
  }

  json resolved(const std::string& command) const {
    json out;
    out["command"] = command;
    for (const auto& f : dumpers_) f(out);
    return out;
  }

 private:
  std::vector<std::function<void(const json&)>> appliers_;
  std::vector<std::function<void(json&)>> dumpers_;
};

// ---------------------------------------------------------------------------
// Shared option bundles

struct ModelFlags {
  int dim = 64;
  int heads = 8;
  int window = 3;
  int f_init = 0;
  double dropout = 0.1;

  void add(CLI::App* cmd, ConfigOverlay* overlay) {
    overlay->bind(cmd->add_option("--dim", dim, "embedding dimension"), "dim", &dim);
    overlay->bind(cmd->add_option("--heads", heads, "attention heads"), "heads", &heads);
    overlay->bind(cmd->add_option("--window", window, "convolution window"), "window", &window);
    overlay->bind(cmd->add_option("--f-init", f_init, "initial-user term flag (0/1)"),
                  "f_init", &f_init);
    overlay->bind(cmd->add_option("--dropout", dropout, "attention dropout rate"), "dropout",
                  &dropout);
  }

  ModelConfig to_config(int vocab_size) const {
    ModelConfig config;
    config.vocab_size = vocab_size;
    config.dim = dim;
    config.heads = heads;
    config.window = window;
    config.use_init_term = f_init != 0;
    config.dropout_rate = dropout;
    return config;
  }
};

struct TrainFlags {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 50;
  int batch = 16;
  double val_fraction = 0.1;
  int patience = 10;

  void add(CLI::App* cmd, ConfigOverlay* overlay) {
    overlay->bind(cmd->add_option("--lr", lr, "Adam learning rate"), "lr", &lr);
    overlay->bind(cmd->add_option("--beta1", beta1, "Adam beta1"), "beta1", &beta1);
    overlay->bind(cmd->add_option("--beta2", beta2, "Adam beta2"), "beta2", &beta2);
    overlay->bind(cmd->add_option("--adam-eps", adam_eps, "Adam epsilon"), "adam_eps",
                  &adam_eps);
    overlay->bind(cmd->add_option("--epochs", epochs, "training epochs"), "epochs", &epochs);
    overlay->bind(cmd->add_option("--batch", batch, "cascades per gradient step"), "batch",
                  &batch);
    overlay->bind(cmd->add_option("--val-fraction", val_fraction,
                                  "fraction of training cascades held out for validation"),
                  "val_fraction", &val_fraction);
    overlay->bind(cmd->add_option("--patience", patience, "early-stopping patience (epochs)"),
                  "patience", &patience);
  }

  TrainConfig to_config(std::uint64_t seed) const {
    TrainConfig config;
    config.learning_rate = lr;
    config.beta1 = beta1;
    config.beta2 = beta2;
    config.adam_epsilon = adam_eps;
    config.epochs = epochs;
    config.batch_size = batch;
    config.validation_fraction = val_fraction;
    config.seed = seed;
    config.early_stop_patience = patience;
    return config;
  }
};

// ---------------------------------------------------------------------------
// Command state

struct SynthArgs {
  int users = 100;
  int cascades = 1000;
  double edge_prob = 0.05;
  double infect_prob = 0.3;
  std::uint64_t seed = 0;
  std::string name = "synthetic-ic";
  std::string out;
  std::string config_path;
  ConfigOverlay overlay;
};

struct StatsArgs {
  std::string corpus;
  int min_activity = 1;
  double top_fraction = 0.05;
  std::string out;
  std::string config_path;
  ConfigOverlay overlay;
};

struct TrainArgs {
  std::string corpus;
  int min_activity = 1;
  double ratio = 0.9;
  std::uint64_t seed = 0;
  std::string external_emb;
  std::string out;
  std::string config_path;
  ModelFlags model;
  TrainFlags trainer;
  ConfigOverlay overlay;
};

struct EvalArgs {
  std::string corpus;
  int min_activity = 1;
  std::string checkpoint;
  std::string split;
  int n_runs = 1000;
  int early_cap = 5;
  std::uint64_t seed = 0;
  std::string out;
  std::string config_path;
  ConfigOverlay overlay;
};

struct LinkpredArgs {
  std::string corpus;
  int min_activity = 1;
  std::string checkpoint;
  std::string graph;
  std::string mode = "both";
  std::string out;
  std::string config_path;
  ConfigOverlay overlay;
};

struct GradcheckArgs {
  int users = 12;
  int dim = 8;
  int heads = 2;
  int window = 2;
  double step = 1e-5;
  std::uint64_t seed = 0;
  std::string out;
  std::string config_path;
  ConfigOverlay overlay;
};

struct SweepArgs {
  std::string corpus;
  int min_activity = 1;
  double ratio = 0.9;
  std::uint64_t seed = 0;
  int n_runs = 200;
  std::string out;
  std::string config_path;
  ModelFlags model;
  TrainFlags trainer;
  ConfigOverlay overlay;
};

// ---------------------------------------------------------------------------
// Helpers shared by eval and sweep

struct EvalOutcome {
  std::vector<std::pair<std::string, MetricReport>> reports;
  std::vector<InfectionEstimate> ndm_estimates;
  std::vector<InfectionEstimate> frequency_estimates;
  std::vector<InfectionEstimate> markov_estimates;
};

// The diffusion-prediction protocol: for each test cascade only the seed
// user is given, the model rolls out up to the ground-truth size (capped
// for the early-stage setting), and soft infection probabilities come from
// n_runs Monte Carlo repetitions.
EvalOutcome run_protocol(const Corpus& corpus, const Split& split, const NdmModel& ndm,
                         int n_runs, int early_cap, std::uint64_t seed) {
  const FrequencyBaseline frequency(corpus, split.train);
  const MarkovBaseline markov(corpus, split.train);
  const Rng root = Rng(seed).substream("simulate");

  struct ModelEntry {
    std::string name;
    const SequentialModel* model;
    std::vector<InfectionEstimate>* sink_full;
  };
  EvalOutcome outcome;
  const std::vector<ModelEntry> models = {
      {"ndm", &ndm, &outcome.ndm_estimates},
      {"frequency", &frequency, &outcome.frequency_estimates},
      {"markov", &markov, &outcome.markov_estimates},
  };

  std::vector<std::vector<UserId>> truth_full, truth_early;
  for (int id : split.test) {
    const auto& users = corpus.cascades.at(id).users;
    std::vector<UserId> g(users.begin() + 1, users.end());
    truth_early.emplace_back(g.begin(),
                             g.begin() + std::min<std::size_t>(early_cap, g.size()));
    truth_full.push_back(std::move(g));
  }

  for (const ModelEntry& entry : models) {
    const Rng model_root = root.substream(entry.name);
    std::vector<InfectionEstimate> full, early;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const int id = split.test[i];
      const UserId u0 = corpus.cascades.at(id).users.front();
      SimulationSpec spec;
      spec.n_runs = n_runs;
      spec.max_infections = static_cast<int>(truth_full[i].size());
      spec.seed = model_root.substream("full").substream(static_cast<std::uint64_t>(id)).seed();
      InfectionEstimate est = simulate(*entry.model, u0, spec);
      est.cascade_id = id;
      full.push_back(std::move(est));

      spec.max_infections = static_cast<int>(truth_early[i].size());
      spec.seed = model_root.substream("early").substream(static_cast<std::uint64_t>(id)).seed();
      InfectionEstimate est_early = simulate(*entry.model, u0, spec);
      est_early.cascade_id = id;
      early.push_back(std::move(est_early));
    }
    outcome.reports.emplace_back(entry.name, evaluate_f1(full, truth_full, "full"));
    outcome.reports.emplace_back(entry.name, evaluate_f1(early, truth_early, "early"));
    *entry.sink_full = std::move(full);
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(SynthArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  Corpus corpus = synthesize_ic_corpus(a.users, a.cascades, a.edge_prob, a.infect_prob, a.seed);
  corpus.name = a.name;
  const fs::path cascade_path = writer.path("cascades.txt");
  writer.path("cascades.txt.meta.json");  // save_corpus writes the sidecar
  save_corpus(corpus, cascade_path.string());
  writer.write_text("config.json", a.overlay.resolved("synth").dump(2) + "\n");
  writer.commit();
  std::cout << "synth: " << corpus.cascades.size() << " cascades over " << corpus.vocab_size
            << " users -> " << cascade_path.string() << "\n";
  return 0;
}

int cmd_stats(StatsArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  const Corpus corpus = load_corpus(a.corpus, a.min_activity);
  const std::vector<CooccurrenceTable> tables = {
      cooccurrence_stats(corpus, 1.0),
      cooccurrence_stats(corpus, a.top_fraction),
  };
  writer.write_text("stats.csv", cooccurrence_csv(tables));
  writer.write_text("stats.json", cooccurrence_json(tables) + "\n");
  writer.write_text("config.json", a.overlay.resolved("stats").dump(2) + "\n");
  writer.commit();
  std::cout << "stats: lt10=" << tables[0].lt10 << " ge10=" << tables[0].ge10 << "\n";
  return 0;
}

int cmd_train(TrainArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  const Corpus corpus = load_corpus(a.corpus, a.min_activity);
  const Rng root(a.seed);
  const Split split = split_corpus(corpus, a.ratio, root.substream("split").seed());

  const ModelConfig model_config = a.model.to_config(corpus.vocab_size);
  const TrainConfig train_config = a.trainer.to_config(a.seed);

  Matrix external;
  const Matrix* external_ptr = nullptr;
  if (!a.external_emb.empty()) {
    external = load_external_embeddings(a.external_emb, corpus);
    external_ptr = &external;
  }

  const TrainResult result = train(corpus, split, model_config, train_config, external_ptr);

  save_split(split, writer.path("split.json").string());
  save_checkpoint(result.checkpoint, writer.path("checkpoint.bin").string());
  std::ostringstream trace;
  trace << "phase,epoch,train_loss,validation_loss\n";
  trace.precision(17);
  for (const EpochStats& s : result.trace) {
    trace << s.phase << ',' << s.epoch << ',' << s.train_loss << ',';
    if (!std::isnan(s.validation_loss)) trace << s.validation_loss;
    trace << '\n';
  }
  writer.write_text("loss_trace.csv", trace.str());
  writer.write_text("config.json", a.overlay.resolved("train").dump(2) + "\n");
  writer.commit();
  std::cout << "train: epoch=" << result.checkpoint.epoch
            << " train_loss=" << result.checkpoint.train_loss
            << " validation_loss=" << result.checkpoint.validation_loss << "\n";
  return 0;
}

int cmd_eval(EvalArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  const Corpus corpus = load_corpus(a.corpus, a.min_activity);
  const Checkpoint checkpoint = load_checkpoint(a.checkpoint);
  if (checkpoint.model_config.vocab_size != corpus.vocab_size)
    throw std::runtime_error("eval: checkpoint vocabulary " +
                             std::to_string(checkpoint.model_config.vocab_size) +
                             " does not match corpus " + std::to_string(corpus.vocab_size));
  const Split split = load_split(a.split);
  const NdmModel ndm(checkpoint.params, checkpoint.model_config);

  EvalOutcome outcome = run_protocol(corpus, split, ndm, a.n_runs, a.early_cap, a.seed);

  writer.write_text("metrics.json", metric_reports_json(outcome.reports) + "\n");
  writer.write_text("metrics.csv", metric_reports_csv(outcome.reports));
  writer.write_text("estimates.json", estimates_json(outcome.ndm_estimates, corpus) + "\n");
  writer.write_text("estimates_frequency.json",
                    estimates_json(outcome.frequency_estimates, corpus) + "\n");
  writer.write_text("estimates_markov.json",
                    estimates_json(outcome.markov_estimates, corpus) + "\n");
  writer.write_text("config.json", a.overlay.resolved("eval").dump(2) + "\n");
  writer.commit();
  for (const auto& [name, report] : outcome.reports) {
    std::cout << "eval: " << name << " " << report.setting << " macro=" << report.macro_f1
              << " micro=" << report.micro_f1 << "\n";
  }
  return 0;
}

int cmd_linkpred(LinkpredArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  const Corpus corpus = load_corpus(a.corpus, a.min_activity);
  const Checkpoint checkpoint = load_checkpoint(a.checkpoint);
  if (checkpoint.model_config.vocab_size != corpus.vocab_size)
    throw std::runtime_error("linkpred: checkpoint vocabulary does not match corpus");
  const FollowerGraph graph = load_follower_graph(a.graph, corpus);

  json j;
  std::ostringstream csv;
  csv << "mode,accuracy\n";
  csv.precision(17);
  if (a.mode != "inner" && a.mode != "attention" && a.mode != "both")
    throw std::runtime_error("linkpred: mode must be inner, attention or both");
  if (a.mode == "inner" || a.mode == "both") {
    const double acc = social_link_accuracy(checkpoint.params, checkpoint.model_config, graph,
                                            LinkScoreMode::kInnerProduct);
    j["inner"] = acc;
    csv << "inner," << acc << '\n';
  }
  if (a.mode == "attention" || a.mode == "both") {
    const double acc = social_link_accuracy(checkpoint.params, checkpoint.model_config, graph,
                                            LinkScoreMode::kAttentionWeight);
    j["attention"] = acc;
    csv << "attention," << acc << '\n';
  }
  j["skipped_unknown"] = graph.skipped_unknown;
  j["skipped_self_loops"] = graph.skipped_self_loops;
  writer.write_text("linkpred.json", j.dump(2) + "\n");
  writer.write_text("linkpred.csv", csv.str());
  writer.write_text("config.json", a.overlay.resolved("linkpred").dump(2) + "\n");
  writer.commit();
  std::cout << "linkpred: " << j.dump() << "\n";
  return 0;
}

// Flattens params into the checker's matrix list and evaluates the full
// sequence loss (dropout off) over a few short synthetic cascades.
FdCheckReport gradcheck_report(const ModelConfig& config, std::uint64_t seed, double step) {
  Rng rng = Rng(seed).substream("gradcheck");
  std::vector<Cascade> cascades;
  for (int c = 0; c < 3; ++c) {
    Cascade cascade;
    std::vector<UserId> pool(config.vocab_size);
    for (int u = 0; u < config.vocab_size; ++u) pool[u] = u;
    rng.shuffle(pool);
    const int length = 3 + static_cast<int>(rng.next_below(3));
    cascade.users.assign(pool.begin(), pool.begin() + length);
    cascades.push_back(std::move(cascade));
  }

  const ModelParams params = init_params(config, rng.substream("init").seed());
  ModelGrads grads = ModelParams::zeros(config);
  grads.frozen_cols = params.frozen_cols;
  double loss = 0.0;
  for (const Cascade& c : cascades) loss += sequence_loss(params, config, c, nullptr, grads);

  std::vector<Matrix> flat;
  for (const Matrix* m : params.matrices()) flat.push_back(*m);
  std::vector<Matrix> flat_grads;
  for (const Matrix* m : grads.matrices()) flat_grads.push_back(*m);

  const auto f = [&](const std::vector<Matrix>& values) {
    ModelParams p = ModelParams::zeros(config);
    auto targets = p.matrices();
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = values[i];
    ModelGrads scratch = ModelParams::zeros(config);
    double total = 0.0;
    for (const Cascade& c : cascades) total += sequence_loss(p, config, c, nullptr, scratch);
    return total;
  };
  return finite_difference_check(f, flat, flat_grads, step);
}

int cmd_gradcheck(GradcheckArgs& a) {
  a.overlay.apply(a.config_path);
  json results;
  double worst = 0.0;
  for (int f_init = 0; f_init <= 1; ++f_init) {
    ModelConfig config;
    config.vocab_size = a.users;
    config.dim = a.dim;
    config.heads = a.heads;
    config.window = a.window;
    config.use_init_term = f_init != 0;
    config.dropout_rate = 0.0;
    const FdCheckReport report = gradcheck_report(config, a.seed, a.step);
    std::cout << "gradcheck: f_init=" << f_init << " max_rel_error=" << report.max_rel_error
              << " (param " << report.param << ", " << report.row << "," << report.col << ")\n";
    results["f_init_" + std::to_string(f_init)] = report.max_rel_error;
    worst = std::max(worst, report.max_rel_error);
  }
  std::cout << "gradcheck: max_rel_error=" << worst << "\n";
  if (!a.out.empty()) {
    RunWriter writer(a.out);
    writer.write_text("gradcheck.json", results.dump(2) + "\n");
    writer.write_text("config.json", a.overlay.resolved("gradcheck").dump(2) + "\n");
    writer.commit();
  }
  return worst < 1e-4 ? 0 : 1;
}

int cmd_sweep(SweepArgs& a) {
  a.overlay.apply(a.config_path);
  RunWriter writer(a.out);
  const Corpus corpus = load_corpus(a.corpus, a.min_activity);
  const Rng root(a.seed);
  const Split split = split_corpus(corpus, a.ratio, root.substream("split").seed());

  // One-at-a-time axes around the base configuration.
  struct Variant {
    std::string axis;
    ModelFlags flags;
  };
  std::vector<Variant> variants;
  auto push_variant = [&](const std::string& axis, const ModelFlags& flags) {
    for (const Variant& v : variants) {
      if (v.flags.dim == flags.dim && v.flags.heads == flags.heads &&
          v.flags.window == flags.window && v.flags.f_init == flags.f_init)
        return;
    }
    variants.push_back({axis, flags});
  };
  push_variant("base", a.model);
  for (int h : {1, 2, 4, 8}) {
    ModelFlags f = a.model;
    f.heads = h;
    push_variant("heads", f);
  }
  for (int d : {16, 32, 64, 128}) {
    ModelFlags f = a.model;
    f.dim = d;
    push_variant("dim", f);
  }
  for (int w : {2, 3, 4, 5}) {
    ModelFlags f = a.model;
    f.window = w;
    push_variant("window", f);
  }
  for (int fi : {0, 1}) {
    ModelFlags f = a.model;
    f.f_init = fi;
    push_variant("f_init", f);
  }

  std::ostringstream csv;
  csv << "axis,heads,dim,window,f_init,macro_f1,micro_f1,macro_f1_early,micro_f1_early,"
         "validation_loss,seconds\n";
  csv.precision(10);
  for (const Variant& v : variants) {
    const auto started = std::chrono::steady_clock::now();
    const ModelConfig model_config = v.flags.to_config(corpus.vocab_size);
    const TrainConfig train_config = a.trainer.to_config(a.seed);
    const TrainResult result = train(corpus, split, model_config, train_config);
    const NdmModel ndm(result.checkpoint.params, model_config);
    const EvalOutcome outcome = run_protocol(corpus, split, ndm, a.n_runs, 5, a.seed);
    double macro = 0, micro = 0, macro_early = 0, micro_early = 0;
    for (const auto& [name, report] : outcome.reports) {
      if (name != "ndm") continue;
      if (report.setting == "full") {
        macro = report.macro_f1;
        micro = report.micro_f1;
      } else {
        macro_early = report.macro_f1;
        micro_early = report.micro_f1;
      }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    csv << v.axis << ',' << v.flags.heads << ',' << v.flags.dim << ',' << v.flags.window << ','
        << v.flags.f_init << ',' << macro << ',' << micro << ',' << macro_early << ','
        << micro_early << ',' << result.checkpoint.validation_loss << ',' << seconds << '\n';
    std::cout << "sweep: axis=" << v.axis << " h=" << v.flags.heads << " d=" << v.flags.dim
              << " win=" << v.flags.window << " f_init=" << v.flags.f_init
              << " micro=" << micro << "\n";
  }
  writer.write_text("sweep.csv", csv.str());
  writer.write_text("config.json", a.overlay.resolved("sweep").dump(2) + "\n");
  writer.commit();
  return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"Neural diffusion model for microscopic cascade prediction"};
  app.require_subcommand(1);

  SynthArgs synth;
  StatsArgs stats;
  TrainArgs train_args;
  EvalArgs eval_args;
  LinkpredArgs linkpred;
  GradcheckArgs gradcheck;
  SweepArgs sweep;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic IC cascade corpus");
  synth.overlay.bind(synth_cmd->add_option("--users", synth.users, "graph size"), "users",
                     &synth.users);
  synth.overlay.bind(synth_cmd->add_option("--cascades", synth.cascades, "cascades to emit"),
                     "cascades", &synth.cascades);
  synth.overlay.bind(synth_cmd->add_option("--edge-prob", synth.edge_prob, "edge probability"),
                     "edge_prob", &synth.edge_prob);
  synth.overlay.bind(
      synth_cmd->add_option("--infect-prob", synth.infect_prob, "per-edge infection chance"),
      "infect_prob", &synth.infect_prob);
  synth.overlay.bind(synth_cmd->add_option("--seed", synth.seed, "root seed"), "seed",
                     &synth.seed);
  synth.overlay.bind(synth_cmd->add_option("--name", synth.name, "corpus label"), "name",
                     &synth.name);
  synth.overlay.bind(synth_cmd->add_option("--out", synth.out, "output directory")->required(),
                     "out", &synth.out);
  synth_cmd->add_option("--config", synth.config_path, "JSON config with flag defaults");

  auto* stats_cmd = app.add_subcommand("stats", "Co-occurrence statistics of a corpus");
  stats.overlay.bind(stats_cmd->add_option("--corpus", stats.corpus, "cascade file")->required(),
                     "corpus", &stats.corpus);
  stats.overlay.bind(
      stats_cmd->add_option("--min-activity", stats.min_activity, "user activity filter"),
      "min_activity", &stats.min_activity);
  stats.overlay.bind(
      stats_cmd->add_option("--top-fraction", stats.top_fraction, "top-pair variant fraction"),
      "top_fraction", &stats.top_fraction);
  stats.overlay.bind(stats_cmd->add_option("--out", stats.out, "output directory")->required(),
                     "out", &stats.out);
  stats_cmd->add_option("--config", stats.config_path, "JSON config with flag defaults");

  auto* train_cmd = app.add_subcommand("train", "Train NDM on a cascade corpus");
  train_args.overlay.bind(
      train_cmd->add_option("--corpus", train_args.corpus, "cascade file")->required(), "corpus",
      &train_args.corpus);
  train_args.overlay.bind(
      train_cmd->add_option("--min-activity", train_args.min_activity, "user activity filter"),
      "min_activity", &train_args.min_activity);
  train_args.overlay.bind(
      train_cmd->add_option("--ratio", train_args.ratio, "train fraction of the corpus"),
      "ratio", &train_args.ratio);
  train_args.overlay.bind(train_cmd->add_option("--seed", train_args.seed, "root seed"), "seed",
                          &train_args.seed);
  train_args.overlay.bind(
      train_cmd->add_option("--external-emb", train_args.external_emb,
                            "external embedding file for the frozen leading slice"),
      "external_emb", &train_args.external_emb);
  train_args.overlay.bind(
      train_cmd->add_option("--out", train_args.out, "output directory")->required(), "out",
      &train_args.out);
  train_args.model.add(train_cmd, &train_args.overlay);
  train_args.trainer.add(train_cmd, &train_args.overlay);
  train_cmd->add_option("--config", train_args.config_path, "JSON config with flag defaults");

  auto* eval_cmd = app.add_subcommand("eval", "Monte Carlo diffusion prediction metrics");
  eval_args.overlay.bind(
      eval_cmd->add_option("--corpus", eval_args.corpus, "cascade file")->required(), "corpus",
      &eval_args.corpus);
  eval_args.overlay.bind(
      eval_cmd->add_option("--min-activity", eval_args.min_activity, "user activity filter"),
      "min_activity", &eval_args.min_activity);
  eval_args.overlay.bind(
      eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained model")->required(),
      "checkpoint", &eval_args.checkpoint);
  eval_args.overlay.bind(
      eval_cmd->add_option("--split", eval_args.split, "split.json from training")->required(),
      "split", &eval_args.split);
  eval_args.overlay.bind(
      eval_cmd->add_option("--n-runs", eval_args.n_runs, "Monte Carlo repetitions"), "n_runs",
      &eval_args.n_runs);
  eval_args.overlay.bind(
      eval_cmd->add_option("--early-cap", eval_args.early_cap, "early-stage prediction budget"),
      "early_cap", &eval_args.early_cap);
  eval_args.overlay.bind(eval_cmd->add_option("--seed", eval_args.seed, "root seed"), "seed",
                         &eval_args.seed);
  eval_args.overlay.bind(
      eval_cmd->add_option("--out", eval_args.out, "output directory")->required(), "out",
      &eval_args.out);
  eval_cmd->add_option("--config", eval_args.config_path, "JSON config with flag defaults");

  auto* link_cmd = app.add_subcommand("linkpred", "Social link prediction probe");
  linkpred.overlay.bind(
      link_cmd->add_option("--corpus", linkpred.corpus, "cascade file")->required(), "corpus",
      &linkpred.corpus);
  linkpred.overlay.bind(
      link_cmd->add_option("--min-activity", linkpred.min_activity, "user activity filter"),
      "min_activity", &linkpred.min_activity);
  linkpred.overlay.bind(
      link_cmd->add_option("--checkpoint", linkpred.checkpoint, "trained model")->required(),
      "checkpoint", &linkpred.checkpoint);
  linkpred.overlay.bind(
      link_cmd->add_option("--graph", linkpred.graph, "follower graph file")->required(),
      "graph", &linkpred.graph);
  linkpred.overlay.bind(
      link_cmd->add_option("--mode", linkpred.mode, "inner | attention | both"), "mode",
      &linkpred.mode);
  linkpred.overlay.bind(
      link_cmd->add_option("--out", linkpred.out, "output directory")->required(), "out",
      &linkpred.out);
  link_cmd->add_option("--config", linkpred.config_path, "JSON config with flag defaults");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck.overlay.bind(grad_cmd->add_option("--users", gradcheck.users, "vocabulary size"),
                         "users", &gradcheck.users);
  gradcheck.overlay.bind(grad_cmd->add_option("--dim", gradcheck.dim, "embedding dimension"),
                         "dim", &gradcheck.dim);
  gradcheck.overlay.bind(grad_cmd->add_option("--heads", gradcheck.heads, "attention heads"),
                         "heads", &gradcheck.heads);
  gradcheck.overlay.bind(grad_cmd->add_option("--window", gradcheck.window, "conv window"),
                         "window", &gradcheck.window);
  gradcheck.overlay.bind(grad_cmd->add_option("--step", gradcheck.step, "central-diff step"),
                         "step", &gradcheck.step);
  gradcheck.overlay.bind(grad_cmd->add_option("--seed", gradcheck.seed, "root seed"), "seed",
                         &gradcheck.seed);
  gradcheck.overlay.bind(grad_cmd->add_option("--out", gradcheck.out, "output directory"), "out",
                         &gradcheck.out);
  grad_cmd->add_option("--config", gradcheck.config_path, "JSON config with flag defaults");

  auto* sweep_cmd = app.add_subcommand("sweep", "One-at-a-time hyperparameter sensitivity");
  sweep.overlay.bind(
      sweep_cmd->add_option("--corpus", sweep.corpus, "cascade file")->required(), "corpus",
      &sweep.corpus);
  sweep.overlay.bind(
      sweep_cmd->add_option("--min-activity", sweep.min_activity, "user activity filter"),
      "min_activity", &sweep.min_activity);
  sweep.overlay.bind(sweep_cmd->add_option("--ratio", sweep.ratio, "train fraction"), "ratio",
                     &sweep.ratio);
  sweep.overlay.bind(sweep_cmd->add_option("--seed", sweep.seed, "root seed"), "seed",
                     &sweep.seed);
  sweep.overlay.bind(
      sweep_cmd->add_option("--n-runs", sweep.n_runs, "Monte Carlo repetitions per eval"),
      "n_runs", &sweep.n_runs);
  sweep.overlay.bind(sweep_cmd->add_option("--out", sweep.out, "output directory")->required(),
                     "out", &sweep.out);
  sweep.model.add(sweep_cmd, &sweep.overlay);
  sweep.trainer.add(sweep_cmd, &sweep.overlay);
  sweep_cmd->add_option("--config", sweep.config_path, "JSON config with flag defaults");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (stats_cmd->parsed()) return cmd_stats(stats);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (link_cmd->parsed()) return cmd_linkpred(linkpred);
    if (grad_cmd->parsed()) return cmd_gradcheck(gradcheck);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep);
    throw std::runtime_error("no subcommand selected");
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) {
      std::cerr << "error: " << one_line(e.what()) << "\n";
      return e.get_exit_code();
    }
    return app.exit(e);  // --help and friends
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace ndm::cli
