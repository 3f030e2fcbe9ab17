#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ndm {

// Dense user index. Within a model, index vocab_size is the virtual
// Terminate user; ingestion never produces it.
using UserId = std::int32_t;

struct Cascade {
  std::vector<UserId> users;  // infection order, no user twice, length >= 2 post load

  bool operator==(const Cascade&) const = default;
};

// Warnings and side information produced by loading or synthesis.
struct CorpusMeta {
  long duplicates_dropped = 0;       // later occurrences of a user within one raw cascade
  long cascades_dropped_short = 0;   // cascades below length 2 after filtering
  long users_removed_inactive = 0;   // users below the activity threshold
  // Synthetic corpora record the generating graph for recovery checks.
  std::vector<std::pair<UserId, UserId>> ground_truth_edges;

  bool operator==(const CorpusMeta&) const = default;
};

struct Corpus {
  int vocab_size = 0;                // |U|, excludes Terminate
  std::vector<Cascade> cascades;
  std::string name;
  std::vector<std::string> labels;   // dense index -> external id
  CorpusMeta meta;

  bool operator==(const Corpus&) const = default;
};

// Reads a cascade file: one cascade per line, tokens separated by single
// spaces, each token `user_id` or `user_id:timestamp`. Timestamps are used
// only to sort a line (stable, so ties keep file order) and then discarded.
// Within a cascade only the first occurrence of a user is kept. Users
// appearing in fewer than min_user_activity cascades are removed, cascades
// shorter than 2 are dropped, and indices are re-packed densely.
// A `<path>.meta.json` sidecar written by save_corpus, when present, pins
// the label -> index mapping so a save/load round trip is exact.
Corpus load_corpus(const std::string& path, int min_user_activity = 1);

// Writes the cascade file plus the metadata sidecar `<path>.meta.json`
// (name, vocab in index order, warnings, ground-truth edges).
void save_corpus(const Corpus& corpus, const std::string& path);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

// Seeded shuffle then floor(ratio * n) prefix as train. Deterministic for
// fixed (corpus size, ratio, seed).
Split split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed);

void save_split(const Split& split, const std::string& path);
Split load_split(const std::string& path);

// Ground-truth generator: random directed graph with i.i.d. edges, then
// independent-cascade spreading (each newly infected node gets one chance
// per uninfected out-neighbor, breadth-first by rounds) from a uniformly
// random seed node per cascade. Cascades shorter than 2 are discarded; the
// generator attempts up to 10x n_cascades simulations and fails if none
// are usable. Users that never appear are dropped and the remaining ones
// re-indexed densely; meta.ground_truth_edges holds the surviving edges.
Corpus synthesize_ic_corpus(int n_users, int n_cascades, double edge_prob,
                            double infect_prob, std::uint64_t seed);

}  // namespace ndm
