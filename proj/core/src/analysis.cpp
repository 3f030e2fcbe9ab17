#include "ndm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "ndm/numerics.hpp"

namespace ndm {

namespace {

std::uint64_t pair_key(UserId a, UserId b, int vocab_size) {
  const UserId lo = std::min(a, b);
  const UserId hi = std::max(a, b);
  return static_cast<std::uint64_t>(lo) * static_cast<std::uint64_t>(vocab_size) +
         static_cast<std::uint64_t>(hi);
}

}  // namespace

CooccurrenceTable cooccurrence_stats(const Corpus& corpus, double top_fraction,
                                     bool unique_pairs) {
  if (corpus.cascades.empty())
    throw std::invalid_argument("cooccurrence_stats: empty corpus");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw std::invalid_argument("cooccurrence_stats: top_fraction must be in (0,1]");

  // Pass 1: cascades shared by each co-infected unordered pair. Users are
  // distinct within a cascade, so each pair contributes once per cascade.
  std::unordered_map<std::uint64_t, int> shared;
  for (const Cascade& c : corpus.cascades) {
    const auto& users = c.users;
    for (std::size_t i = 0; i < users.size(); ++i) {
      for (std::size_t j = i + 1; j < users.size(); ++j) {
        ++shared[pair_key(users[i], users[j], corpus.vocab_size)];
      }
    }
  }

  // Pass 2: record one instance per (cascade, pair) under its gap.
  std::map<int, std::vector<int>> values_by_gap;
  std::map<int, std::unordered_set<std::uint64_t>> seen_by_gap;
  for (const Cascade& c : corpus.cascades) {
    const auto& users = c.users;
    for (std::size_t i = 0; i < users.size(); ++i) {
      for (std::size_t j = i + 1; j < users.size(); ++j) {
        const int gap = static_cast<int>(j - i) - 1;
        const std::uint64_t key = pair_key(users[i], users[j], corpus.vocab_size);
        if (unique_pairs && !seen_by_gap[gap].insert(key).second) continue;
        values_by_gap[gap].push_back(shared.at(key));
      }
    }
  }

  CooccurrenceTable table;
  table.top_fraction = top_fraction;
  table.unique_pairs = unique_pairs;
  double lt10_sum = 0.0, ge10_sum = 0.0;
  for (auto& [gap, values] : values_by_gap) {
    std::size_t keep = values.size();
    if (top_fraction < 1.0) {
      std::sort(values.begin(), values.end(), std::greater<int>());
      keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::ceil(top_fraction * static_cast<double>(values.size()))));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += values[i];
    table.expectation_by_gap[gap] = sum / static_cast<double>(keep);
    table.instances_by_gap[gap] = static_cast<long>(keep);
    if (gap < 10) {
      lt10_sum += sum;
      table.lt10_instances += static_cast<long>(keep);
    } else {
      ge10_sum += sum;
      table.ge10_instances += static_cast<long>(keep);
    }
  }
  table.lt10 = table.lt10_instances > 0 ? lt10_sum / table.lt10_instances : 0.0;
  table.ge10 = table.ge10_instances > 0 ? ge10_sum / table.ge10_instances : 0.0;
  return table;
}

std::string cooccurrence_csv(std::span<const CooccurrenceTable> tables) {
  std::ostringstream out;
  out << "variant,gap,expectation,instances\n";
  out.precision(17);
  for (const CooccurrenceTable& t : tables) {
    std::string variant = t.top_fraction < 1.0 ? "top" : "all";
    if (t.unique_pairs) variant += "-unique";
    for (int gap = 0; gap <= 3; ++gap) {
      const auto it = t.expectation_by_gap.find(gap);
      if (it == t.expectation_by_gap.end()) continue;
      out << variant << ',' << gap << ',' << it->second << ',' << t.instances_by_gap.at(gap)
          << '\n';
    }
    out << variant << ",lt10," << t.lt10 << ',' << t.lt10_instances << '\n';
    out << variant << ",ge10," << t.ge10 << ',' << t.ge10_instances << '\n';
  }
  return out.str();
}

std::string cooccurrence_json(std::span<const CooccurrenceTable> tables) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CooccurrenceTable& t : tables) {
    nlohmann::json by_gap = nlohmann::json::object();
    for (const auto& [gap, v] : t.expectation_by_gap) by_gap[std::to_string(gap)] = v;
    arr.push_back({{"top_fraction", t.top_fraction},
                   {"unique_pairs", t.unique_pairs},
                   {"expectation_by_gap", by_gap},
                   {"lt10", t.lt10},
                   {"ge10", t.ge10},
                   {"lt10_instances", t.lt10_instances},
                   {"ge10_instances", t.ge10_instances}});
  }
  return arr.dump(2);
}

bool FollowerGraph::has_edge(UserId follower, UserId followee) const {
  for (const auto& [s, d] : edges) {
    if (s == follower && d == followee) return true;
  }
  return false;
}

FollowerGraph load_follower_graph(const std::string& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_follower_graph: cannot open " + path);
  std::unordered_map<std::string, int> index_of;
  for (std::size_t i = 0; i < corpus.labels.size(); ++i)
    index_of.emplace(corpus.labels[i], static_cast<int>(i));

  FollowerGraph graph;
  graph.vocab_size = corpus.vocab_size;
  std::string follower, followee;
  while (in >> follower >> followee) {
    const auto a = index_of.find(follower);
    const auto b = index_of.find(followee);
    if (a == index_of.end() || b == index_of.end()) {
      ++graph.skipped_unknown;
      continue;
    }
    if (a->second == b->second) {
      ++graph.skipped_self_loops;
      continue;
    }
    graph.edges.emplace_back(a->second, b->second);
  }
  return graph;
}

double social_link_accuracy(const ModelParams& params, const ModelConfig& config,
                            const FollowerGraph& graph, LinkScoreMode mode) {
  if (graph.edges.empty()) throw std::invalid_argument("social_link_accuracy: empty graph");
  const int n = config.vocab_size;
  if (graph.vocab_size != n)
    throw std::invalid_argument("social_link_accuracy: graph vocabulary mismatch");

  std::unordered_set<std::uint64_t> edge_set;
  for (const auto& [s, d] : graph.edges)
    edge_set.insert(static_cast<std::uint64_t>(s) * n + static_cast<std::uint64_t>(d));

  // Attention mode scores with the Eq.-style logit q(u).k(v) averaged over
  // heads; inner-product mode with emb(u).emb(v).
  std::vector<Matrix> q_proj, k_proj;
  if (mode == LinkScoreMode::kAttentionWeight) {
    for (int i = 0; i < config.heads; ++i) {
      q_proj.push_back(matmul(params.emb, params.attn_q[i]));
      k_proj.push_back(matmul(params.emb, params.attn_k[i]));
    }
  }

  long hits = 0;
  for (int u = 0; u < n; ++u) {
    int best = -1;
    double best_score = 0.0;
    for (int v = 0; v < n; ++v) {
      if (v == u) continue;
      double score = 0.0;
      if (mode == LinkScoreMode::kInnerProduct) {
        score = dot(params.emb.row_span(u), params.emb.row_span(v));
      } else {
        for (int i = 0; i < config.heads; ++i)
          score += dot(q_proj[i].row_span(u), k_proj[i].row_span(v));
        score /= static_cast<double>(config.heads);
      }
      if (best < 0 || score > best_score) {
        best = v;
        best_score = score;
      }
    }
    // hit when the closest user is a follower of u
    if (best >= 0 &&
        edge_set.count(static_cast<std::uint64_t>(best) * n + static_cast<std::uint64_t>(u)) > 0)
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

ConvNormProbe conv_norm_probe(const ModelParams& params) {
  ConvNormProbe probe;
  for (double v : params.conv_init.data) probe.init_sq += v * v;
  for (const Matrix& m : params.conv) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    probe.position_sq.push_back(s);
  }
  return probe;
}

std::string conv_norm_probe_csv(const ConvNormProbe& probe, const std::string& dataset) {
  std::ostringstream out;
  out << "dataset,w_init";
  for (std::size_t n = 0; n < probe.position_sq.size(); ++n) out << ",w_" << n;
  out << '\n';
  out.precision(17);
  out << dataset << ',' << probe.init_sq;
  for (double v : probe.position_sq) out << ',' << v;
  out << '\n';
  return out.str();
}

}  // namespace ndm
