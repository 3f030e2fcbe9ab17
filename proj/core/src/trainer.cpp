#include "ndm/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "ndm/rng.hpp"

namespace ndm {

namespace {

using nlohmann::json;

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f64_block_le(std::ostream& out, const Matrix& m) {
  for (double d : m.data) write_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

void read_f64_block_le(std::istream& in, Matrix& m) {
  for (double& d : m.data) d = std::bit_cast<double>(read_u64_le(in));
}

json model_config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"dim", c.dim},       {"heads", c.heads},
          {"window", c.window},         {"f_init", c.use_init_term},
          {"dropout_rate", c.dropout_rate}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.window = j.at("window").get<int>();
  c.use_init_term = j.at("f_init").get<bool>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  return c;
}

json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed},
          {"early_stop_patience", c.early_stop_patience}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  return c;
}

// One training pass: seeded per-epoch shuffles, batch-averaged gradients,
// one Adam step per batch. Returns final params; appends per-epoch stats.
ModelParams run_epochs(const Corpus& corpus, const std::vector<int>& fit_ids,
                       const std::vector<int>& validation_ids, int n_epochs, int phase,
                       const ModelConfig& mc, const TrainConfig& tc,
                       const Matrix* external_emb, std::vector<EpochStats>& trace,
                       int* best_epoch_out) {
  const Rng root(tc.seed);
  ModelParams params = init_params(mc, root.substream("init").seed(), external_emb);
  AdamState moments = AdamState::zeros(params);
  ModelGrads grads = ModelParams::zeros(mc);
  grads.frozen_cols = params.frozen_cols;

  const Rng shuffle_root = root.substream("shuffle").substream(phase);
  const Rng dropout_root = root.substream("dropout").substream(phase);

  long step = 0;
  double best_validation = std::numeric_limits<double>::infinity();
  int best_epoch = n_epochs;
  int epochs_since_improvement = 0;

  std::vector<int> order = fit_ids;
  for (int epoch = 1; epoch <= n_epochs; ++epoch) {
    shuffle_root.substream(epoch).shuffle(order);
    const Rng dropout_epoch = dropout_root.substream(epoch);

    double epoch_loss = 0.0;
    long epoch_positions = 0;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch_end = std::min(at + tc.batch_size, order.size());
      grads.fill(0.0);
      for (std::size_t b = at; b < batch_end; ++b) {
        const int cascade_id = order[b];
        Rng dropout_rng = dropout_epoch.substream(static_cast<std::uint64_t>(cascade_id));
        const Cascade& cascade = corpus.cascades[cascade_id];
        const double loss =
            sequence_loss(params, mc, cascade,
                          mc.dropout_rate > 0.0 ? &dropout_rng : nullptr, grads);
        if (!std::isfinite(loss))
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", cascade " + std::to_string(cascade_id));
        epoch_loss += loss;
        epoch_positions += static_cast<long>(cascade.users.size());  // includes Terminate step
      }
      grads.scale(1.0 / static_cast<double>(batch_end - at));
      ++step;
      adam_step(params, grads, moments, step, tc);
      at = batch_end;
    }

    EpochStats stats;
    stats.phase = phase;
    stats.epoch = epoch;
    stats.train_loss = epoch_positions > 0 ? epoch_loss / static_cast<double>(epoch_positions)
                                           : 0.0;
    if (!validation_ids.empty()) {
      double val_loss = 0.0;
      long val_positions = 0;
      for (int cascade_id : validation_ids) {
        const Cascade& cascade = corpus.cascades[cascade_id];
        val_loss += sequence_nll(params, mc, cascade);
        val_positions += static_cast<long>(cascade.users.size());
      }
      stats.validation_loss = val_loss / static_cast<double>(val_positions);
      if (stats.validation_loss < best_validation) {
        best_validation = stats.validation_loss;
        best_epoch = epoch;
        epochs_since_improvement = 0;
      } else {
        ++epochs_since_improvement;
      }
    }
    trace.push_back(stats);
    if (!validation_ids.empty() && tc.early_stop_patience > 0 &&
        epochs_since_improvement >= tc.early_stop_patience) {
      break;
    }
  }
  if (best_epoch_out != nullptr) *best_epoch_out = best_epoch;
  return params;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate < 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
  if (adam_epsilon <= 0.0) throw std::invalid_argument("TrainConfig: adam_epsilon <= 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: validation_fraction must be in [0,1)");
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                        const Matrix* external_emb) {
  config.validate();
  ModelParams params = ModelParams::zeros(config);
  Rng rng(seed);
  for (Matrix* m : params.matrices()) {
    const double a = std::sqrt(6.0 / static_cast<double>(m->rows + m->cols));
    for (double& v : m->data) v = rng.uniform(-a, a);
  }
  if (external_emb != nullptr) {
    if (external_emb->rows != config.vocab_size)
      throw std::invalid_argument("init_params: external embeddings have " +
                                  std::to_string(external_emb->rows) + " rows, expected " +
                                  std::to_string(config.vocab_size));
    if (external_emb->cols > config.dim || external_emb->cols < 1)
      throw std::invalid_argument("init_params: external embedding width " +
                                  std::to_string(external_emb->cols) + " exceeds dim " +
                                  std::to_string(config.dim));
    for (int u = 0; u < config.vocab_size; ++u) {
      for (int c = 0; c < external_emb->cols; ++c) params.emb(u, c) = (*external_emb)(u, c);
    }
    params.frozen_cols = external_emb->cols;
  }
  return params;
}

AdamState AdamState::zeros(const ModelParams& params) {
  AdamState state;
  for (const Matrix* m : params.matrices()) {
    state.first_moment.emplace_back(m->rows, m->cols);
    state.second_moment.emplace_back(m->rows, m->cols);
  }
  return state;
}

void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& moments,
               long t, const TrainConfig& config) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (!params.same_shape(grads)) throw std::invalid_argument("adam_step: shape mismatch");
  auto param_list = params.matrices();
  auto grad_list = grads.matrices();
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param_list.size(); ++i) {
    Matrix& p = *param_list[i];
    const Matrix& g = *grad_list[i];
    Matrix& m1 = moments.first_moment[i];
    Matrix& m2 = moments.second_moment[i];
    const bool is_emb = (i == 0);
    for (std::size_t idx = 0; idx < p.size(); ++idx) {
      if (is_emb && params.frozen_cols > 0 &&
          static_cast<int>(idx % p.cols) < params.frozen_cols) {
        continue;  // frozen slice never moves
      }
      const double grad = g.data[idx];
      m1.data[idx] = config.beta1 * m1.data[idx] + (1.0 - config.beta1) * grad;
      m2.data[idx] = config.beta2 * m2.data[idx] + (1.0 - config.beta2) * grad * grad;
      const double m_hat = m1.data[idx] / bias1;
      const double v_hat = m2.data[idx] / bias2;
      p.data[idx] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
    }
  }
}

TrainResult train(const Corpus& corpus, const Split& split, const ModelConfig& model_config,
                  const TrainConfig& train_config, const Matrix* external_emb) {
  model_config.validate();
  train_config.validate();
  if (split.train.empty()) throw std::invalid_argument("train: empty training split");
  for (int id : split.train) {
    if (id < 0 || id >= static_cast<int>(corpus.cascades.size()))
      throw std::invalid_argument("train: split refers to cascade " + std::to_string(id));
  }

  TrainResult result;
  result.checkpoint.model_config = model_config;
  result.checkpoint.train_config = train_config;
  result.checkpoint.rng_seed = train_config.seed;

  const Rng root(train_config.seed);
  std::vector<int> all_train = split.train;

  if (train_config.validation_fraction > 0.0 && all_train.size() >= 2) {
    std::vector<int> shuffled = all_train;
    root.substream("valsplit").shuffle(shuffled);
    const int n_val = std::max(
        1, static_cast<int>(std::floor(train_config.validation_fraction *
                                       static_cast<double>(shuffled.size()))));
    std::vector<int> validation(shuffled.begin(), shuffled.begin() + n_val);
    std::vector<int> fit(shuffled.begin() + n_val, shuffled.end());
    if (fit.empty()) throw std::invalid_argument("train: validation fraction leaves no data");

    // Pass 1 selects the epoch count by validation loss; pass 2 retrains on
    // all training cascades (validation included) for that many epochs.
    int best_epoch = 0;
    run_epochs(corpus, fit, validation, train_config.epochs, 0, model_config, train_config,
               external_emb, result.trace, &best_epoch);
    double best_validation = std::numeric_limits<double>::infinity();
    for (const EpochStats& s : result.trace) {
      if (s.phase == 0 && s.validation_loss < best_validation)
        best_validation = s.validation_loss;
    }

    result.checkpoint.params =
        run_epochs(corpus, all_train, {}, best_epoch, 1, model_config, train_config,
                   external_emb, result.trace, nullptr);
    result.checkpoint.epoch = best_epoch;
    result.checkpoint.validation_loss = best_validation;
  } else {
    result.checkpoint.params =
        run_epochs(corpus, all_train, {}, train_config.epochs, 0, model_config, train_config,
                   external_emb, result.trace, nullptr);
    result.checkpoint.epoch = train_config.epochs;
  }
  for (auto it = result.trace.rbegin(); it != result.trace.rend(); ++it) {
    if (it->phase == (train_config.validation_fraction > 0.0 ? 1 : 0)) {
      result.checkpoint.train_loss = it->train_loss;
      break;
    }
  }
  return result;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  json header;
  header["format"] = "ndm-checkpoint-v1";
  header["model_config"] = model_config_json(checkpoint.model_config);
  header["train_config"] = train_config_json(checkpoint.train_config);
  header["epoch"] = checkpoint.epoch;
  header["train_loss"] = checkpoint.train_loss;
  header["validation_loss"] = checkpoint.validation_loss;
  header["frozen_cols"] = checkpoint.params.frozen_cols;
  header["rng_state"] = {{"root_seed", checkpoint.rng_seed}};
  json shapes = json::array();
  auto mats = checkpoint.params.matrices();
  for (const Matrix* m : mats) shapes.push_back({m->rows, m->cols});
  header["shapes"] = shapes;
  header["names"] = checkpoint.params.matrix_names();

  // NaN losses are legal (no validation pass); JSON has no NaN literal.
  if (std::isnan(checkpoint.train_loss)) header["train_loss"] = nullptr;
  if (std::isnan(checkpoint.validation_loss)) header["validation_loss"] = nullptr;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  const std::string header_text = header.dump();
  write_u64_le(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const Matrix* m : mats) write_f64_block_le(out, *m);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  const std::uint64_t header_size = read_u64_le(in);
  std::string header_text(header_size, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  const json header = json::parse(header_text);
  if (header.at("format").get<std::string>() != "ndm-checkpoint-v1")
    throw std::runtime_error("load_checkpoint: unknown format in " + path);

  Checkpoint checkpoint;
  checkpoint.model_config = model_config_from_json(header.at("model_config"));
  checkpoint.train_config = train_config_from_json(header.at("train_config"));
  checkpoint.epoch = header.at("epoch").get<int>();
  checkpoint.train_loss = header.at("train_loss").is_null()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : header.at("train_loss").get<double>();
  checkpoint.validation_loss = header.at("validation_loss").is_null()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : header.at("validation_loss").get<double>();
  checkpoint.rng_seed = header.at("rng_state").at("root_seed").get<std::uint64_t>();
  checkpoint.params = ModelParams::zeros(checkpoint.model_config);
  checkpoint.params.frozen_cols = header.at("frozen_cols").get<int>();

  auto mats = checkpoint.params.matrices();
  const json& shapes = header.at("shapes");
  if (shapes.size() != mats.size())
    throw std::runtime_error("load_checkpoint: shape list does not match config");
  for (std::size_t i = 0; i < mats.size(); ++i) {
    if (shapes[i][0].get<int>() != mats[i]->rows || shapes[i][1].get<int>() != mats[i]->cols)
      throw std::runtime_error("load_checkpoint: block " + std::to_string(i) +
                               " shape mismatch");
    read_f64_block_le(in, *mats[i]);
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated blocks in " + path);
  return checkpoint;
}

Matrix load_external_embeddings(const std::string& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_external_embeddings: cannot open " + path);
  std::unordered_map<std::string, int> index_of;
  for (std::size_t i = 0; i < corpus.labels.size(); ++i)
    index_of.emplace(corpus.labels[i], static_cast<int>(i));

  Matrix emb;
  std::vector<bool> covered(corpus.vocab_size, false);
  std::string line;
  long line_no = 0;
  int width = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::string label;
    iss >> label;
    std::vector<double> values;
    double v = 0.0;
    while (iss >> v) values.push_back(v);
    if (values.empty())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": no values");
    if (width < 0) {
      width = static_cast<int>(values.size());
      emb = Matrix(corpus.vocab_size, width);
    } else if (static_cast<int>(values.size()) != width) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": inconsistent embedding width");
    }
    const auto it = index_of.find(label);
    if (it == index_of.end()) continue;  // ids outside the corpus are ignored
    covered[it->second] = true;
    for (int c = 0; c < width; ++c) emb(it->second, c) = values[c];
  }
  long missing = 0;
  for (bool c : covered) {
    if (!c) ++missing;
  }
  if (missing > 0)
    throw std::runtime_error("load_external_embeddings: " + std::to_string(missing) +
                             " corpus users missing from " + path);
  return emb;
}

}  // namespace ndm
