#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ndm/corpus.hpp"
#include "ndm/model.hpp"
#include "ndm/numerics.hpp"

namespace ndm {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 50;
  int batch_size = 16;                // cascades per gradient step, batch-averaged
  double validation_fraction = 0.1;   // carved from the training cascades
  std::uint64_t seed = 0;
  int early_stop_patience = 10;       // epochs without validation improvement

  void validate() const;
};

// Uniform fan-based initialization: every matrix i.i.d. uniform in [-a, a]
// with a = sqrt(6 / (rows + cols)), filled row-major in the canonical
// parameter order from a single stream, so reimplementations can match
// given the same generator. When external_emb (vocab_size x k, k <= dim)
// is given, the first k embedding columns are overwritten with it and
// frozen; the Terminate row stays randomly initialized.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                        const Matrix* external_emb = nullptr);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  static AdamState zeros(const ModelParams& params);
};

// One bias-corrected Adam update, elementwise; t is the 1-based step index.
// Frozen embedding columns are skipped.
void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& moments,
               long t, const TrainConfig& config);

struct EpochStats {
  int phase = 0;     // 0: validation-tracked pass, 1: final pass on train+validation
  int epoch = 0;     // 1-based
  double train_loss = 0.0;       // mean per-position NLL over the epoch's cascades
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  ModelParams params;
  int epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t rng_seed = 0;  // root seed; streams are derived statelessly
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> trace;
};

// Trains on split.train. With a validation fraction, a first pass tracks
// validation loss with early stopping, selects the best epoch count, and a
// final pass retrains from the same initialization on all training
// cascades (including validation) for that many epochs. With
// validation_fraction == 0 a single pass over all epochs is used.
TrainResult train(const Corpus& corpus, const Split& split, const ModelConfig& model_config,
                  const TrainConfig& train_config, const Matrix* external_emb = nullptr);

// Checkpoint container: 8-byte little-endian header length, JSON header
// (configs, epoch, losses, shapes, frozen_cols, rng seed), then raw
// little-endian 64-bit float blocks in canonical parameter order.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// External embedding file for the frozen-slice variant: one line per user,
// `user_id v1 v2 ... vk` with ids from the corpus namespace. Every corpus
// user must be covered; unknown ids are skipped. Returns vocab_size x k.
Matrix load_external_embeddings(const std::string& path, const Corpus& corpus);

}  // namespace ndm
