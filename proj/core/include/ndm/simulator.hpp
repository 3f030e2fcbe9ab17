#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ndm/corpus.hpp"
#include "ndm/model.hpp"

namespace ndm {

// One growing rollout prefix of an evaluation-mode model. distribution()
// is over vocab_size + 1 outcomes (last index = Terminate) with exactly
// zero mass on every infected user, so a run can never repeat a user.
class RolloutState {
 public:
  virtual ~RolloutState() = default;
  virtual const std::vector<double>& distribution() const = 0;
  virtual void push(UserId next) = 0;
  virtual std::unique_ptr<RolloutState> clone() const = 0;
};

// Next-user process abstraction shared by NDM and the sanity baselines so
// the Monte Carlo protocol and the metrics treat them identically.
class SequentialModel {
 public:
  virtual ~SequentialModel() = default;
  virtual int vocab_size() const = 0;
  UserId terminate_id() const { return vocab_size(); }
  virtual std::unique_ptr<RolloutState> start(UserId u0) const = 0;
};

// Trained NDM behind the rollout interface. Query/key/value projections of
// all users are precomputed once; each push costs O(m·h·d + h·d^2 + win·d·|U|).
class NdmModel final : public SequentialModel {
 public:
  NdmModel(ModelParams params, ModelConfig config);

  int vocab_size() const override { return config_.vocab_size; }
  std::unique_ptr<RolloutState> start(UserId u0) const override;

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }

 private:
  friend class NdmRolloutState;
  ModelParams params_;
  ModelConfig config_;
  std::vector<Matrix> proj_q_, proj_k_, proj_v_;  // per head, (|U|+1) x d
};

// Samples next users proportionally to global infection counts among the
// uninfected; stops with the empirical per-position stop frequency of the
// training cascades.
class FrequencyBaseline final : public SequentialModel {
 public:
  FrequencyBaseline(const Corpus& corpus, std::span<const int> train_ids);
  int vocab_size() const override { return vocab_size_; }
  std::unique_ptr<RolloutState> start(UserId u0) const override;

 private:
  friend class BaselineRolloutState;
  int vocab_size_ = 0;
  std::vector<double> counts_;     // per-user cascade membership counts
  std::vector<double> stop_prob_;  // stop_prob_[m]: terminate given m infected
};

// First-order Markov chain over consecutive infections; same stop model as
// the frequency baseline, falling back to frequency weights (then uniform)
// when the last user's row has no mass on uninfected users.
class MarkovBaseline final : public SequentialModel {
 public:
  MarkovBaseline(const Corpus& corpus, std::span<const int> train_ids);
  int vocab_size() const override { return vocab_size_; }
  std::unique_ptr<RolloutState> start(UserId u0) const override;

 private:
  friend class BaselineRolloutState;
  int vocab_size_ = 0;
  std::vector<double> counts_;
  std::vector<double> stop_prob_;
  std::vector<std::vector<double>> transition_;  // consecutive-pair counts
};

struct SimulationSpec {
  int n_runs = 1000;       // Monte Carlo repetitions
  int max_infections = 1;  // per-run budget beyond the seed user
  std::uint64_t seed = 0;
};

struct InfectionEstimate {
  std::vector<double> p;  // per real user; the seed user scores 0
  int cascade_id = -1;
  int runs_terminated_early = 0;
};

// Monte Carlo rollout: each run starts from (u0), samples until Terminate
// or the budget, and P_u is the fraction of runs infecting u. Per-run rng
// streams are derived from (seed, run), so aggregation is independent of
// execution order.
InfectionEstimate simulate(const SequentialModel& model, UserId u0, const SimulationSpec& spec);

// Brute-force oracle: enumerates rollout branches, pruning path mass below
// prob_floor, and sums exact path probabilities per user. Only sensible for
// small vocabularies and max_infections <= 3.
struct ExhaustiveResult {
  std::vector<double> p;
  double pruned_mass = 0.0;
  long nodes = 0;
};
ExhaustiveResult exhaustive_rollout(const SequentialModel& model, UserId u0, int max_infections,
                                    double prob_floor, long node_budget = 2000000);

// JSON array of {cascade_id, probabilities as a sparse {user label: p} map}.
std::string estimates_json(std::span<const InfectionEstimate> estimates, const Corpus& corpus);

}  // namespace ndm
