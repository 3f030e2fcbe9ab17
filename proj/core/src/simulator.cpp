#include "ndm/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "ndm/numerics.hpp"
#include "ndm/rng.hpp"

namespace ndm {

namespace {

// Inverse-CDF draw; the walk lands on the last positive entry if rounding
// pushes u past the accumulated total.
int sample_categorical(Rng& rng, const std::vector<double>& probs) {
  const double u = rng.next_double();
  double cum = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  if (last_positive < 0) throw std::runtime_error("sample_categorical: empty distribution");
  return last_positive;
}

}  // namespace

// ---------------------------------------------------------------------------
// NDM rollout

class NdmRolloutState final : public RolloutState {
 public:
  NdmRolloutState(const NdmModel* model, UserId u0) : model_(model) {
    const ModelConfig& config = model_->config_;
    if (u0 < 0 || u0 >= config.vocab_size)
      throw std::invalid_argument("NdmModel: invalid seed user " + std::to_string(u0));
    infected_.assign(config.num_outcomes(), false);
    append(u0);
  }

  const std::vector<double>& distribution() const override { return dist_; }

  void push(UserId next) override {
    if (next < 0 || next >= model_->config_.vocab_size)
      throw std::invalid_argument("NdmRolloutState: cannot push user " + std::to_string(next));
    if (infected_[next])
      throw std::invalid_argument("NdmRolloutState: user already infected");
    append(next);
  }

  std::unique_ptr<RolloutState> clone() const override {
    return std::make_unique<NdmRolloutState>(*this);
  }

 private:
  // Extends the prefix by one user and refreshes the distribution: compute
  // the new position's attention summary against cached projections, then
  // re-run the window-sum logits with the updated mask.
  void append(UserId u) {
    const ModelConfig& config = model_->config_;
    const ModelParams& params = model_->params_;
    const int d = config.dim;
    const int h = config.heads;
    const int m = static_cast<int>(prefix_.size());

    prefix_.push_back(u);
    infected_[u] = true;

    std::vector<double> x(model_->params_.emb.row(u), model_->params_.emb.row(u) + d);
    std::vector<double> concat(static_cast<std::size_t>(h) * d, 0.0);
    std::vector<double> scores(m + 1);
    for (int i = 0; i < h; ++i) {
      const Matrix& pq = model_->proj_q_[i];
      const Matrix& pk = model_->proj_k_[i];
      const Matrix& pv = model_->proj_v_[i];
      const std::span<const double> q = pq.row_span(u);
      for (int kk = 0; kk <= m; ++kk) scores[kk] = dot(q, pk.row_span(prefix_[kk]));
      const std::vector<double> w = softmax(scores);
      std::span<double> head{concat.data() + static_cast<std::size_t>(i) * d,
                             static_cast<std::size_t>(d)};
      for (int kk = 0; kk <= m; ++kk) axpy(w[kk], pv.row_span(prefix_[kk]), head);
    }
    // act = concat . attn_out, then the LayerNorm residual
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int r = 0; r < h * d; ++r) acc += concat[r] * params.attn_out(r, c);
      x[c] += acc;
    }
    active_.push_back(layer_norm(x, kLayerNormEpsilon));

    const int j = m;
    const int n_out = config.num_outcomes();
    std::vector<double> z(n_out, 0.0);
    std::span<double> z_span{z};
    for (int n = 0; n < config.window && n <= j; ++n) {
      const std::vector<double>& a = active_[j - n];
      for (int c = 0; c < d; ++c) axpy(a[c], params.conv[n].row_span(c), z_span);
    }
    if (config.use_init_term) {
      const std::vector<double>& a = active_[0];
      for (int c = 0; c < d; ++c) axpy(a[c], params.conv_init.row_span(c), z_span);
    }
    dist_ = softmax(z, &infected_);
  }

  const NdmModel* model_;
  std::vector<UserId> prefix_;
  std::vector<bool> infected_;                     // includes the Terminate slot, never set
  std::vector<std::vector<double>> active_;        // active embedding per position
  std::vector<double> dist_;
};

NdmModel::NdmModel(ModelParams params, ModelConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (int i = 0; i < config_.heads; ++i) {
    proj_q_.push_back(matmul(params_.emb, params_.attn_q[i]));
    proj_k_.push_back(matmul(params_.emb, params_.attn_k[i]));
    proj_v_.push_back(matmul(params_.emb, params_.attn_v[i]));
  }
}

std::unique_ptr<RolloutState> NdmModel::start(UserId u0) const {
  return std::make_unique<NdmRolloutState>(this, u0);
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

// Stop probability after m infections: fraction of training cascades of
// length exactly m among those of length >= m; 1 beyond the longest.
std::vector<double> empirical_stop_profile(const Corpus& corpus, std::span<const int> ids) {
  std::size_t max_len = 0;
  for (int id : ids) max_len = std::max(max_len, corpus.cascades.at(id).users.size());
  std::vector<long> len_count(max_len + 2, 0);
  for (int id : ids) ++len_count[corpus.cascades[id].users.size()];
  std::vector<double> stop(max_len + 2, 1.0);
  long at_least = 0;  // cascades of length >= m, filled from the top
  for (std::size_t m = max_len + 1; m >= 1; --m) {
    at_least += m <= max_len ? len_count[m] : 0;
    stop[m] = at_least > 0 ? static_cast<double>(len_count[m]) / static_cast<double>(at_least)
                           : 1.0;
    if (m == 1) break;
  }
  return stop;
}

std::vector<double> membership_counts(const Corpus& corpus, std::span<const int> ids) {
  std::vector<double> counts(corpus.vocab_size, 0.0);
  for (int id : ids) {
    for (UserId u : corpus.cascades.at(id).users) counts[u] += 1.0;
  }
  return counts;
}

}  // namespace

// Shared rollout for both baselines: Terminate mass from the stop profile,
// the rest split over uninfected users by the weight chain
// transition-row -> frequency-counts -> uniform.
class BaselineRolloutState final : public RolloutState {
 public:
  BaselineRolloutState(int vocab_size, const std::vector<double>* counts,
                       const std::vector<double>* stop_prob,
                       const std::vector<std::vector<double>>* transition, UserId u0)
      : vocab_size_(vocab_size),
        counts_(counts),
        stop_prob_(stop_prob),
        transition_(transition) {
    if (u0 < 0 || u0 >= vocab_size_)
      throw std::invalid_argument("baseline: invalid seed user " + std::to_string(u0));
    infected_.assign(vocab_size_, false);
    infected_[u0] = true;
    last_ = u0;
    n_infected_ = 1;
    refresh();
  }

  const std::vector<double>& distribution() const override { return dist_; }

  void push(UserId next) override {
    if (next < 0 || next >= vocab_size_ || infected_[next])
      throw std::invalid_argument("baseline: cannot push user " + std::to_string(next));
    infected_[next] = true;
    last_ = next;
    ++n_infected_;
    refresh();
  }

  std::unique_ptr<RolloutState> clone() const override {
    return std::make_unique<BaselineRolloutState>(*this);
  }

 private:
  void refresh() {
    dist_.assign(vocab_size_ + 1, 0.0);
    const std::size_t m = static_cast<std::size_t>(n_infected_);
    double p_stop = m < stop_prob_->size() ? (*stop_prob_)[m] : 1.0;
    if (n_infected_ == vocab_size_) p_stop = 1.0;  // nobody left to infect
    dist_[vocab_size_] = p_stop;
    if (p_stop >= 1.0) {
      dist_[vocab_size_] = 1.0;
      return;
    }

    double total = fill_weights(transition_ != nullptr ? &(*transition_)[last_] : nullptr);
    if (total <= 0.0) total = fill_weights(counts_);
    if (total <= 0.0) {
      for (int u = 0; u < vocab_size_; ++u) {
        if (!infected_[u]) {
          dist_[u] = 1.0;
          total += 1.0;
        }
      }
    }
    const double scale = (1.0 - p_stop) / total;
    for (int u = 0; u < vocab_size_; ++u) dist_[u] *= scale;
  }

  double fill_weights(const std::vector<double>* weights) {
    if (weights == nullptr) return 0.0;
    double total = 0.0;
    for (int u = 0; u < vocab_size_; ++u) {
      const double w = infected_[u] ? 0.0 : (*weights)[u];
      dist_[u] = w;
      total += w;
    }
    return total;
  }

  int vocab_size_;
  const std::vector<double>* counts_;
  const std::vector<double>* stop_prob_;
  const std::vector<std::vector<double>>* transition_;
  std::vector<bool> infected_;
  UserId last_ = 0;
  int n_infected_ = 0;
  std::vector<double> dist_;
};

FrequencyBaseline::FrequencyBaseline(const Corpus& corpus, std::span<const int> train_ids)
    : vocab_size_(corpus.vocab_size),
      counts_(membership_counts(corpus, train_ids)),
      stop_prob_(empirical_stop_profile(corpus, train_ids)) {}

std::unique_ptr<RolloutState> FrequencyBaseline::start(UserId u0) const {
  return std::make_unique<BaselineRolloutState>(vocab_size_, &counts_, &stop_prob_, nullptr, u0);
}

MarkovBaseline::MarkovBaseline(const Corpus& corpus, std::span<const int> train_ids)
    : vocab_size_(corpus.vocab_size),
      counts_(membership_counts(corpus, train_ids)),
      stop_prob_(empirical_stop_profile(corpus, train_ids)),
      transition_(corpus.vocab_size, std::vector<double>(corpus.vocab_size, 0.0)) {
  for (int id : train_ids) {
    const auto& users = corpus.cascades.at(id).users;
    for (std::size_t i = 0; i + 1 < users.size(); ++i)
      transition_[users[i]][users[i + 1]] += 1.0;
  }
}

std::unique_ptr<RolloutState> MarkovBaseline::start(UserId u0) const {
  return std::make_unique<BaselineRolloutState>(vocab_size_, &counts_, &stop_prob_,
                                                &transition_, u0);
}

// ---------------------------------------------------------------------------
// Monte Carlo protocol

InfectionEstimate simulate(const SequentialModel& model, UserId u0, const SimulationSpec& spec) {
  if (spec.n_runs < 1) throw std::invalid_argument("simulate: n_runs must be >= 1");
  if (spec.max_infections < 1)
    throw std::invalid_argument("simulate: max_infections must be >= 1");

  const int n_users = model.vocab_size();
  const UserId terminate = model.terminate_id();
  InfectionEstimate estimate;
  estimate.p.assign(n_users, 0.0);

  const Rng run_root = Rng(spec.seed).substream("run");
  const std::unique_ptr<RolloutState> base = model.start(u0);
  std::vector<int> counts(n_users, 0);
  for (int run = 0; run < spec.n_runs; ++run) {
    Rng rng = run_root.substream(static_cast<std::uint64_t>(run));
    std::unique_ptr<RolloutState> state = base->clone();
    for (int step = 0; step < spec.max_infections; ++step) {
      const UserId next = sample_categorical(rng, state->distribution());
      if (next == terminate) {
        ++estimate.runs_terminated_early;
        break;
      }
      ++counts[next];
      if (step + 1 < spec.max_infections) state->push(next);
    }
  }
  for (int u = 0; u < n_users; ++u)
    estimate.p[u] = static_cast<double>(counts[u]) / static_cast<double>(spec.n_runs);
  return estimate;
}

namespace {

void exhaustive_dfs(const RolloutState& state, std::vector<UserId>& infected, double path_p,
                    int depth, int max_infections, double prob_floor, UserId terminate,
                    long node_budget, long* nodes, double* pruned, std::vector<double>* p) {
  if (++*nodes > node_budget)
    throw std::runtime_error("exhaustive_rollout: node budget exceeded");
  const std::vector<double>& dist = state.distribution();
  for (UserId o = 0; o < static_cast<UserId>(dist.size()); ++o) {
    const double q = dist[o];
    if (q <= 0.0) continue;
    const double mass = path_p * q;
    if (mass < prob_floor) {
      *pruned += mass;
      continue;
    }
    if (o == terminate) {
      for (UserId u : infected) (*p)[u] += mass;
      continue;
    }
    infected.push_back(o);
    if (depth + 1 >= max_infections) {
      for (UserId u : infected) (*p)[u] += mass;
    } else {
      const std::unique_ptr<RolloutState> next = state.clone();
      next->push(o);
      exhaustive_dfs(*next, infected, mass, depth + 1, max_infections, prob_floor, terminate,
                     node_budget, nodes, pruned, p);
    }
    infected.pop_back();
  }
}

}  // namespace

ExhaustiveResult exhaustive_rollout(const SequentialModel& model, UserId u0, int max_infections,
                                    double prob_floor, long node_budget) {
  if (max_infections < 1)
    throw std::invalid_argument("exhaustive_rollout: max_infections must be >= 1");
  ExhaustiveResult result;
  result.p.assign(model.vocab_size(), 0.0);
  const std::unique_ptr<RolloutState> base = model.start(u0);
  std::vector<UserId> infected;
  exhaustive_dfs(*base, infected, 1.0, 0, max_infections, prob_floor, model.terminate_id(),
                 node_budget, &result.nodes, &result.pruned_mass, &result.p);
  return result;
}

std::string estimates_json(std::span<const InfectionEstimate> estimates, const Corpus& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const InfectionEstimate& e : estimates) {
    nlohmann::json probs = nlohmann::json::object();
    for (std::size_t u = 0; u < e.p.size(); ++u) {
      if (e.p[u] > 0.0) probs[corpus.labels.at(u)] = e.p[u];
    }
    arr.push_back({{"cascade_id", e.cascade_id},
                   {"runs_terminated_early", e.runs_terminated_early},
                   {"probabilities", probs}});
  }
  return arr.dump(2);
}

}  // namespace ndm
