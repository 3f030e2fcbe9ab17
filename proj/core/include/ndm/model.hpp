#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ndm/corpus.hpp"
#include "ndm/numerics.hpp"
#include "ndm/rng.hpp"

namespace ndm {

struct ModelConfig {
  int vocab_size = 0;       // |U| real users; outcome vocab_size is Terminate
  int dim = 64;             // embedding dimension d
  int heads = 8;            // attention heads h
  int window = 3;           // convolution window size
  bool use_init_term = false;  // F_init: add the initial-user projection term
  double dropout_rate = 0.1;

  int num_outcomes() const { return vocab_size + 1; }
  UserId terminate_id() const { return vocab_size; }
  void validate() const;
};

// All learnable matrices. Canonical order (used by initialization, Adam
// moments, checkpoints and gradient flattening):
//   emb, (attn_q[i], attn_k[i], attn_v[i]) for i = 0..h-1, attn_out,
//   conv[0..win-1], conv_init
struct ModelParams {
  Matrix emb;                   // (|U|+1) x d, Terminate embedded like a user
  std::vector<Matrix> attn_q;   // h matrices, d x d
  std::vector<Matrix> attn_k;   // h matrices, d x d
  std::vector<Matrix> attn_v;   // h matrices, d x d
  Matrix attn_out;              // (h*d) x d
  std::vector<Matrix> conv;     // win matrices, d x (|U|+1)
  Matrix conv_init;             // d x (|U|+1)
  // Leading embedding columns excluded from updates (externally initialized
  // slice); their gradients are forced to zero.
  int frozen_cols = 0;

  static ModelParams zeros(const ModelConfig& config);

  std::vector<Matrix*> matrices();
  std::vector<const Matrix*> matrices() const;
  std::vector<std::string> matrix_names() const;

  void fill(double v);
  void scale(double s);
  void accumulate(const ModelParams& other);
  bool same_shape(const ModelParams& other) const;
};

// Gradients share the parameter layout; they add across uses of a parameter
// and are zeroed between optimizer steps.
using ModelGrads = ModelParams;

long long parameter_count(const ModelConfig& config);

// Next-user distribution for prefix position j: probabilities over the
// |U|+1 outcomes with exactly zero mass on every already-infected prefix
// user; Terminate is never masked.
struct PredictionDistribution {
  std::vector<double> probs;
  int position = 0;
  std::vector<UserId> masked;  // the infected prefix users
};

// LayerNorm(emb(u_j) + act(u_j)) where act is the multi-head attention
// summary of prefix positions 0..j projected through attn_out. Providing a
// dropout rng switches on training-mode dropout over the attention weight
// vectors (inverted scaling, no renormalization).
std::vector<double> active_embedding(const ModelParams& params, const ModelConfig& config,
                                     std::span<const UserId> prefix, int j,
                                     Rng* dropout_rng = nullptr);

// Attention weights of one head for query position j over prefix positions
// 0..j, evaluation mode. They are positive and sum to 1.
std::vector<double> attention_weights(const ModelParams& params, const ModelConfig& config,
                                      std::span<const UserId> prefix, int j, int head);

PredictionDistribution predict_next(const ModelParams& params, const ModelConfig& config,
                                    std::span<const UserId> prefix, int j,
                                    Rng* dropout_rng = nullptr);

// Appends Terminate to the cascade and accumulates gradients of
//   loss = -sum_j log pre_j[u_{j+1}]
// into grads (which must be zero-initialized with the parameter shapes).
// Dropout is active iff dropout_rng is non-null. Gradients of frozen
// embedding columns are forced to zero.
double sequence_loss(const ModelParams& params, const ModelConfig& config,
                     const Cascade& cascade, Rng* dropout_rng, ModelGrads& grads);

// Forward-only loss (evaluation mode, no dropout).
double sequence_nll(const ModelParams& params, const ModelConfig& config,
                    const Cascade& cascade);

// Positions in the appended sequence where the highest-probability outcome
// equals the true next user, over the given cascades.
double top1_next_user_accuracy(const ModelParams& params, const ModelConfig& config,
                               const Corpus& corpus, std::span<const int> cascade_ids);

}  // namespace ndm
