#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ndm/corpus.hpp"
#include "ndm/model.hpp"

namespace ndm {

// Expected number of cascades two users share, conditioned on having been
// co-infected with K users strictly between them. Every co-occurring pair
// observation counts once (instance averaging); unique-pair averaging is an
// alternative switch. top_fraction < 1 keeps only the top share of
// instances per gap by co-occurrence count before averaging.
struct CooccurrenceTable {
  std::map<int, double> expectation_by_gap;  // gap K -> mean co-occurrence count
  std::map<int, long> instances_by_gap;
  double lt10 = 0.0;  // aggregate over K < 10
  double ge10 = 0.0;  // aggregate over K >= 10
  long lt10_instances = 0;
  long ge10_instances = 0;
  double top_fraction = 1.0;  // 1.0 = all pairs
  bool unique_pairs = false;
};

CooccurrenceTable cooccurrence_stats(const Corpus& corpus, double top_fraction = 1.0,
                                     bool unique_pairs = false);

// CSV rows for K = 0..3 plus the two aggregate buckets, one table per call.
std::string cooccurrence_csv(std::span<const CooccurrenceTable> tables);
std::string cooccurrence_json(std::span<const CooccurrenceTable> tables);

// Directed follower -> followee edges over corpus user ids.
struct FollowerGraph {
  int vocab_size = 0;
  std::vector<std::pair<UserId, UserId>> edges;
  long skipped_unknown = 0;  // lines naming users outside the corpus
  long skipped_self_loops = 0;

  bool has_edge(UserId follower, UserId followee) const;
};

// One `follower followee` pair per line, labels from the cascade file's
// namespace. Unknown labels and self-loops are skipped with counts.
FollowerGraph load_follower_graph(const std::string& path, const Corpus& corpus);

enum class LinkScoreMode { kInnerProduct, kAttentionWeight };

// For every user u, ranks all v != u by embedding inner product or by the
// attention logit averaged over heads (u as query), and scores a hit when
// the top-1 v follows u. Ties break toward the lower index; Terminate is
// excluded.
double social_link_accuracy(const ModelParams& params, const ModelConfig& config,
                            const FollowerGraph& graph, LinkScoreMode mode);

// Squared Frobenius norms of the convolutional projections.
struct ConvNormProbe {
  double init_sq = 0.0;
  std::vector<double> position_sq;  // per window position
};

ConvNormProbe conv_norm_probe(const ModelParams& params);
std::string conv_norm_probe_csv(const ConvNormProbe& probe, const std::string& dataset);

}  // namespace ndm
