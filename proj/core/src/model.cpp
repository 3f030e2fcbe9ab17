#include "ndm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace ndm {

namespace {

// Cached forward state for one sequence: active embeddings for every
// position 0..P-1 plus everything the backward pass reuses.
struct SequenceForward {
  std::vector<int> ids;          // embedded user ids, length P
  Matrix e;                      // P x d gathered embeddings
  std::vector<Matrix> q, k, v;   // per head, P x d projections
  Matrix concat;                 // P x (h*d), heads side by side
  Matrix act;                    // P x d, after attn_out
  Matrix a;                      // P x d, LayerNorm(e + act)
  std::vector<double> sigma;     // per-position LayerNorm denominator
  std::vector<std::vector<std::vector<double>>> w_raw;  // [head][m][k<=m] softmax weights
  std::vector<std::vector<std::vector<std::uint8_t>>> keep;  // dropout keep masks
  bool dropout = false;
  double keep_scale = 1.0;       // 1/(1-p)
};

void run_forward(const ModelParams& params, const ModelConfig& config,
                 std::span<const UserId> positions, Rng* dropout_rng,
                 SequenceForward& f) {
  const int p_count = static_cast<int>(positions.size());
  const int d = config.dim;
  const int h = config.heads;

  f.ids.assign(positions.begin(), positions.end());
  f.e = gather_rows(params.emb, f.ids);
  f.q.resize(h);
  f.k.resize(h);
  f.v.resize(h);
  f.w_raw.assign(h, {});
  f.dropout = dropout_rng != nullptr && config.dropout_rate > 0.0;
  f.keep_scale = f.dropout ? 1.0 / (1.0 - config.dropout_rate) : 1.0;
  if (f.dropout) f.keep.assign(h, {});

  f.concat = Matrix(p_count, h * d);
  for (int i = 0; i < h; ++i) {
    f.q[i] = matmul(f.e, params.attn_q[i]);
    f.k[i] = matmul(f.e, params.attn_k[i]);
    f.v[i] = matmul(f.e, params.attn_v[i]);
    f.w_raw[i].resize(p_count);
    if (f.dropout) f.keep[i].resize(p_count);
    for (int m = 0; m < p_count; ++m) {
      std::vector<double> scores(m + 1);
      for (int kk = 0; kk <= m; ++kk)
        scores[kk] = dot(f.q[i].row_span(m), f.k[i].row_span(kk));
      f.w_raw[i][m] = softmax(scores);
      double* out = f.concat.row(m) + static_cast<std::size_t>(i) * d;
      std::span<double> out_span{out, static_cast<std::size_t>(d)};
      if (f.dropout) {
        auto& keep = f.keep[i][m];
        keep.resize(m + 1);
        for (int kk = 0; kk <= m; ++kk)
          keep[kk] = dropout_rng->bernoulli(config.dropout_rate) ? 0 : 1;
        for (int kk = 0; kk <= m; ++kk) {
          if (keep[kk])
            axpy(f.w_raw[i][m][kk] * f.keep_scale, f.v[i].row_span(kk), out_span);
        }
      } else {
        for (int kk = 0; kk <= m; ++kk)
          axpy(f.w_raw[i][m][kk], f.v[i].row_span(kk), out_span);
      }
    }
  }

  f.act = matmul(f.concat, params.attn_out);
  f.a = Matrix(p_count, d);
  f.sigma.resize(p_count);
  std::vector<double> x(d);
  for (int m = 0; m < p_count; ++m) {
    for (int c = 0; c < d; ++c) x[c] = f.e(m, c) + f.act(m, c);
    const std::vector<double> y = layer_norm_fwd(x, kLayerNormEpsilon, &f.sigma[m]);
    std::copy(y.begin(), y.end(), f.a.row(m));
  }
}

// Eq.-style prediction logits for position j: the last `window` active
// embeddings each go through their position-specific projection, plus the
// initial-user term when enabled. Terms with j-n < 0 are dropped.
std::vector<double> position_logits(const ModelParams& params, const ModelConfig& config,
                                    const SequenceForward& f, int j) {
  const int n_out = config.num_outcomes();
  const int d = config.dim;
  std::vector<double> z(n_out, 0.0);
  std::span<double> z_span{z};
  for (int n = 0; n < config.window && n <= j; ++n) {
    const double* arow = f.a.row(j - n);
    for (int c = 0; c < d; ++c) {
      if (arow[c] != 0.0) axpy(arow[c], params.conv[n].row_span(c), z_span);
    }
  }
  if (config.use_init_term) {
    const double* arow = f.a.row(0);
    for (int c = 0; c < d; ++c) {
      if (arow[c] != 0.0) axpy(arow[c], params.conv_init.row_span(c), z_span);
    }
  }
  return z;
}

void position_logits_backward(const ModelParams& params, const ModelConfig& config,
                              const SequenceForward& f, int j,
                              std::span<const double> dz, Matrix& da,
                              ModelGrads& grads) {
  const int d = config.dim;
  for (int n = 0; n < config.window && n <= j; ++n) {
    const double* arow = f.a.row(j - n);
    double* darow = da.row(j - n);
    for (int c = 0; c < d; ++c) {
      axpy(arow[c], dz, grads.conv[n].row_span(c));
      darow[c] += dot(params.conv[n].row_span(c), dz);
    }
  }
  if (config.use_init_term) {
    const double* arow = f.a.row(0);
    double* darow = da.row(0);
    for (int c = 0; c < d; ++c) {
      axpy(arow[c], dz, grads.conv_init.row_span(c));
      darow[c] += dot(params.conv_init.row_span(c), dz);
    }
  }
}

// Everything after the per-position logit gradients: LayerNorm, residual,
// output projection, per-head attention and the embedding scatter.
void backward_through_attention(const ModelParams& params, const ModelConfig& config,
                                const SequenceForward& f, const Matrix& da_in,
                                ModelGrads& grads) {
  const int p_count = static_cast<int>(f.ids.size());
  const int d = config.dim;
  const int h = config.heads;

  Matrix dx(p_count, d);
  for (int m = 0; m < p_count; ++m)
    layer_norm_backward(f.a.row_span(m), f.sigma[m], da_in.row_span(m), dx.row_span(m));

  // residual: x = e + act
  Matrix de = dx;
  Matrix dconcat(p_count, h * d);
  matmul_backward(f.concat, params.attn_out, dx, &dconcat, &grads.attn_out);

  std::vector<double> dw;
  std::vector<double> ds;
  for (int i = 0; i < h; ++i) {
    Matrix dq(p_count, d), dk(p_count, d), dv(p_count, d);
    for (int m = 0; m < p_count; ++m) {
      const std::span<const double> dhead{dconcat.row(m) + static_cast<std::size_t>(i) * d,
                                          static_cast<std::size_t>(d)};
      const auto& w_raw = f.w_raw[i][m];
      dw.assign(m + 1, 0.0);
      for (int kk = 0; kk <= m; ++kk) {
        double w_eff = w_raw[kk];
        if (f.dropout) w_eff = f.keep[i][m][kk] ? w_eff * f.keep_scale : 0.0;
        if (w_eff != 0.0) axpy(w_eff, dhead, dv.row_span(kk));
        double dw_eff = dot(dhead, f.v[i].row_span(kk));
        dw[kk] = f.dropout ? (f.keep[i][m][kk] ? dw_eff * f.keep_scale : 0.0) : dw_eff;
      }
      ds.assign(m + 1, 0.0);
      softmax_backward(w_raw, dw, ds);
      for (int kk = 0; kk <= m; ++kk) {
        if (ds[kk] == 0.0) continue;
        axpy(ds[kk], f.k[i].row_span(kk), dq.row_span(m));
        axpy(ds[kk], f.q[i].row_span(m), dk.row_span(kk));
      }
    }
    matmul_backward(f.e, params.attn_q[i], dq, &de, &grads.attn_q[i]);
    matmul_backward(f.e, params.attn_k[i], dk, &de, &grads.attn_k[i]);
    matmul_backward(f.e, params.attn_v[i], dv, &de, &grads.attn_v[i]);
  }

  gather_rows_backward(de, f.ids, grads.emb);

  if (params.frozen_cols > 0) {
    for (int r = 0; r < grads.emb.rows; ++r) {
      double* row = grads.emb.row(r);
      std::fill(row, row + params.frozen_cols, 0.0);
    }
  }
}

std::vector<UserId> appended_sequence(const ModelConfig& config, const Cascade& cascade) {
  std::vector<UserId> seq = cascade.users;
  seq.push_back(config.terminate_id());
  return seq;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size must be >= 1");
  if (dim < 2) throw std::invalid_argument("ModelConfig: dim must be >= 2");
  if (heads < 1) throw std::invalid_argument("ModelConfig: heads must be >= 1");
  if (window < 1) throw std::invalid_argument("ModelConfig: window must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw std::invalid_argument("ModelConfig: dropout_rate must be in [0,1)");
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const int n_rows = config.num_outcomes();
  ModelParams p;
  p.emb = Matrix(n_rows, config.dim);
  p.attn_q.assign(config.heads, Matrix(config.dim, config.dim));
  p.attn_k.assign(config.heads, Matrix(config.dim, config.dim));
  p.attn_v.assign(config.heads, Matrix(config.dim, config.dim));
  p.attn_out = Matrix(config.heads * config.dim, config.dim);
  p.conv.assign(config.window, Matrix(config.dim, n_rows));
  p.conv_init = Matrix(config.dim, n_rows);
  return p;
}

std::vector<Matrix*> ModelParams::matrices() {
  std::vector<Matrix*> out;
  out.push_back(&emb);
  for (std::size_t i = 0; i < attn_q.size(); ++i) {
    out.push_back(&attn_q[i]);
    out.push_back(&attn_k[i]);
    out.push_back(&attn_v[i]);
  }
  out.push_back(&attn_out);
  for (Matrix& m : conv) out.push_back(&m);
  out.push_back(&conv_init);
  return out;
}

std::vector<const Matrix*> ModelParams::matrices() const {
  auto mutable_list = const_cast<ModelParams*>(this)->matrices();
  return {mutable_list.begin(), mutable_list.end()};
}

std::vector<std::string> ModelParams::matrix_names() const {
  std::vector<std::string> names;
  names.push_back("emb");
  for (std::size_t i = 0; i < attn_q.size(); ++i) {
    names.push_back("attn_q[" + std::to_string(i) + "]");
    names.push_back("attn_k[" + std::to_string(i) + "]");
    names.push_back("attn_v[" + std::to_string(i) + "]");
  }
  names.push_back("attn_out");
  for (std::size_t n = 0; n < conv.size(); ++n) names.push_back("conv[" + std::to_string(n) + "]");
  names.push_back("conv_init");
  return names;
}

void ModelParams::fill(double v) {
  for (Matrix* m : matrices()) m->fill(v);
}

void ModelParams::scale(double s) {
  for (Matrix* m : matrices()) scale_inplace(*m, s);
}

void ModelParams::accumulate(const ModelParams& other) {
  auto mine = matrices();
  auto theirs = other.matrices();
  if (mine.size() != theirs.size())
    throw std::invalid_argument("ModelParams::accumulate: layout mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) add_inplace(*mine[i], *theirs[i]);
}

bool ModelParams::same_shape(const ModelParams& other) const {
  auto mine = matrices();
  auto theirs = other.matrices();
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!mine[i]->same_shape(*theirs[i])) return false;
  }
  return true;
}

long long parameter_count(const ModelConfig& config) {
  const long long n = config.num_outcomes();
  const long long d = config.dim;
  const long long h = config.heads;
  return n * d + 3 * h * d * d + h * d * d + (config.window + 1) * d * n;
}

std::vector<double> active_embedding(const ModelParams& params, const ModelConfig& config,
                                     std::span<const UserId> prefix, int j,
                                     Rng* dropout_rng) {
  if (j < 0 || j >= static_cast<int>(prefix.size()))
    throw std::out_of_range("active_embedding: position out of range");
  SequenceForward f;
  run_forward(params, config, prefix.subspan(0, j + 1), dropout_rng, f);
  return {f.a.row(j), f.a.row(j) + config.dim};
}

std::vector<double> attention_weights(const ModelParams& params, const ModelConfig& config,
                                      std::span<const UserId> prefix, int j, int head) {
  if (j < 0 || j >= static_cast<int>(prefix.size()))
    throw std::out_of_range("attention_weights: position out of range");
  if (head < 0 || head >= config.heads)
    throw std::out_of_range("attention_weights: head out of range");
  std::vector<int> ids(prefix.begin(), prefix.begin() + j + 1);
  const Matrix e = gather_rows(params.emb, ids);
  const Matrix q = matmul(e, params.attn_q[head]);
  const Matrix k = matmul(e, params.attn_k[head]);
  std::vector<double> scores(j + 1);
  for (int kk = 0; kk <= j; ++kk) scores[kk] = dot(q.row_span(j), k.row_span(kk));
  return softmax(scores);
}

PredictionDistribution predict_next(const ModelParams& params, const ModelConfig& config,
                                    std::span<const UserId> prefix, int j,
                                    Rng* dropout_rng) {
  if (j < 0 || j >= static_cast<int>(prefix.size()))
    throw std::out_of_range("predict_next: position out of range");
  SequenceForward f;
  run_forward(params, config, prefix.subspan(0, j + 1), dropout_rng, f);
  const std::vector<double> z = position_logits(params, config, f, j);

  PredictionDistribution dist;
  dist.position = j;
  std::vector<bool> mask(config.num_outcomes(), false);
  for (int m = 0; m <= j; ++m) {
    mask[prefix[m]] = true;  // Terminate is never in a prefix, hence never masked
    dist.masked.push_back(prefix[m]);
  }
  dist.probs = softmax(z, &mask);
  return dist;
}

double sequence_loss(const ModelParams& params, const ModelConfig& config,
                     const Cascade& cascade, Rng* dropout_rng, ModelGrads& grads) {
  if (cascade.users.size() < 2)
    throw std::invalid_argument("sequence_loss: cascade length must be >= 2");
  const std::vector<UserId> seq = appended_sequence(config, cascade);
  const int p_count = static_cast<int>(seq.size()) - 1;

  SequenceForward f;
  run_forward(params, config, {seq.data(), static_cast<std::size_t>(p_count)}, dropout_rng, f);

  double loss = 0.0;
  Matrix da(p_count, config.dim);
  std::vector<bool> mask(config.num_outcomes(), false);
  std::vector<double> dz;
  for (int j = 0; j < p_count; ++j) {
    mask[seq[j]] = true;
    const std::vector<double> z = position_logits(params, config, f, j);
    const std::vector<double> probs = softmax(z, &mask);
    const double p_target = probs[seq[j + 1]];
    if (p_target <= 0.0)
      throw std::runtime_error("sequence_loss: target probability underflowed at position " +
                               std::to_string(j));
    loss -= std::log(p_target);

    // softmax cross-entropy: dz = probs - onehot(target); masked entries
    // carry zero probability and zero gradient
    dz = probs;
    dz[seq[j + 1]] -= 1.0;
    position_logits_backward(params, config, f, j, dz, da, grads);
  }
  backward_through_attention(params, config, f, da, grads);
  return loss;
}

double sequence_nll(const ModelParams& params, const ModelConfig& config,
                    const Cascade& cascade) {
  if (cascade.users.size() < 2)
    throw std::invalid_argument("sequence_nll: cascade length must be >= 2");
  const std::vector<UserId> seq = appended_sequence(config, cascade);
  const int p_count = static_cast<int>(seq.size()) - 1;

  SequenceForward f;
  run_forward(params, config, {seq.data(), static_cast<std::size_t>(p_count)}, nullptr, f);

  double loss = 0.0;
  std::vector<bool> mask(config.num_outcomes(), false);
  for (int j = 0; j < p_count; ++j) {
    mask[seq[j]] = true;
    const std::vector<double> z = position_logits(params, config, f, j);
    const std::vector<double> probs = softmax(z, &mask);
    const double p_target = probs[seq[j + 1]];
    if (p_target <= 0.0)
      throw std::runtime_error("sequence_nll: target probability underflowed at position " +
                               std::to_string(j));
    loss -= std::log(p_target);
  }
  return loss;
}

double top1_next_user_accuracy(const ModelParams& params, const ModelConfig& config,
                               const Corpus& corpus, std::span<const int> cascade_ids) {
  long long hits = 0;
  long long total = 0;
  for (int id : cascade_ids) {
    const std::vector<UserId> seq = appended_sequence(config, corpus.cascades.at(id));
    const int p_count = static_cast<int>(seq.size()) - 1;
    SequenceForward f;
    run_forward(params, config, {seq.data(), static_cast<std::size_t>(p_count)}, nullptr, f);
    std::vector<bool> mask(config.num_outcomes(), false);
    for (int j = 0; j < p_count; ++j) {
      mask[seq[j]] = true;
      const std::vector<double> z = position_logits(params, config, f, j);
      int best = -1;
      double best_z = 0.0;
      for (int u = 0; u < config.num_outcomes(); ++u) {
        if (mask[u]) continue;
        if (best < 0 || z[u] > best_z) {
          best = u;
          best_z = z[u];
        }
      }
      hits += (best == seq[j + 1]) ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace ndm
