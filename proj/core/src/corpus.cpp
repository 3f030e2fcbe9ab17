#include "ndm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "ndm/rng.hpp"

namespace ndm {

namespace {

using nlohmann::json;

struct RawCascade {
  std::vector<int> users;  // provisional indices
};

// `user_id:timestamp` splits at the last colon when the suffix parses as a
// non-negative number; otherwise the whole token is a user id (colons are
// legal inside ids).
bool split_token(const std::string& token, std::string* label, double* timestamp) {
  const std::size_t pos = token.rfind(':');
  if (pos == std::string::npos || pos + 1 == token.size()) {
    *label = token;
    return false;
  }
  const std::string suffix = token.substr(pos + 1);
  bool seen_dot = false;
  for (char c : suffix) {
    if (c == '.') {
      if (seen_dot) {
        *label = token;
        return false;
      }
      seen_dot = true;
    } else if (c < '0' || c > '9') {
      *label = token;
      return false;
    }
  }
  *label = token.substr(0, pos);
  *timestamp = std::stod(suffix);
  return true;
}

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

}  // namespace

Corpus load_corpus(const std::string& path, int min_user_activity) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path);

  Corpus corpus;
  corpus.name = std::filesystem::path(path).stem().string();

  std::unordered_map<std::string, int> index_of;
  std::vector<std::string> labels;

  // A sidecar written by save_corpus pins the label -> index mapping.
  if (std::ifstream meta_in(meta_path(path)); meta_in) {
    json meta = json::parse(meta_in);
    if (meta.contains("vocab")) {
      for (const auto& label : meta.at("vocab")) {
        index_of.emplace(label.get<std::string>(), static_cast<int>(labels.size()));
        labels.push_back(label.get<std::string>());
      }
    }
    if (meta.contains("name")) corpus.name = meta.at("name").get<std::string>();
    if (meta.contains("ground_truth_edges")) {
      for (const auto& e : meta.at("ground_truth_edges")) {
        corpus.meta.ground_truth_edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
      }
    }
  }

  std::vector<RawCascade> raw;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;

    std::vector<std::pair<std::string, double>> entries;
    int with_ts = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t end = std::min(line.find(' ', start), line.size());
      const std::string token = line.substr(start, end - start);
      if (token.empty())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty token");
      std::string label;
      double ts = 0.0;
      if (split_token(token, &label, &ts)) ++with_ts;
      entries.emplace_back(label, ts);
      start = end + 1;
    }
    if (with_ts != 0 && with_ts != static_cast<int>(entries.size()))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": mixed timestamped and plain tokens");
    if (with_ts != 0) {
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.second < b.second; });
    }

    RawCascade cascade;
    std::unordered_set<int> seen;
    for (const auto& [label, ts] : entries) {
      auto [it, inserted] = index_of.emplace(label, static_cast<int>(labels.size()));
      if (inserted) labels.push_back(label);
      if (!seen.insert(it->second).second) {
        ++corpus.meta.duplicates_dropped;  // a user is infected at most once
        continue;
      }
      cascade.users.push_back(it->second);
    }
    raw.push_back(std::move(cascade));
  }

  // One-pass activity filter: count cascades per user, remove inactive
  // users from every cascade, then drop cascades below length 2.
  std::vector<int> activity(labels.size(), 0);
  for (const RawCascade& c : raw) {
    for (int u : c.users) ++activity[u];
  }
  std::vector<bool> keep_user(labels.size(), true);
  if (min_user_activity > 1) {
    for (std::size_t u = 0; u < labels.size(); ++u) {
      if (activity[u] < min_user_activity) {
        keep_user[u] = false;
        ++corpus.meta.users_removed_inactive;
      }
    }
  }

  std::vector<RawCascade> filtered;
  for (RawCascade& c : raw) {
    RawCascade f;
    for (int u : c.users) {
      if (keep_user[u]) f.users.push_back(u);
    }
    if (f.users.size() >= 2) {
      filtered.push_back(std::move(f));
    } else {
      ++corpus.meta.cascades_dropped_short;
    }
  }

  // Re-pack indices densely over users present in surviving cascades,
  // preserving relative order so an unfiltered reload is the identity.
  std::vector<bool> present(labels.size(), false);
  for (const RawCascade& c : filtered) {
    for (int u : c.users) present[u] = true;
  }
  std::vector<int> remap(labels.size(), -1);
  for (std::size_t u = 0; u < labels.size(); ++u) {
    if (present[u]) {
      remap[u] = corpus.vocab_size++;
      corpus.labels.push_back(labels[u]);
    }
  }
  for (RawCascade& c : filtered) {
    Cascade out;
    out.users.reserve(c.users.size());
    for (int u : c.users) out.users.push_back(remap[u]);
    corpus.cascades.push_back(std::move(out));
  }

  // Ground-truth edges from a sidecar refer to sidecar vocab indices.
  if (!corpus.meta.ground_truth_edges.empty()) {
    std::vector<std::pair<UserId, UserId>> remapped;
    for (auto [s, d] : corpus.meta.ground_truth_edges) {
      if (s >= 0 && s < static_cast<int>(remap.size()) && d >= 0 &&
          d < static_cast<int>(remap.size()) && remap[s] >= 0 && remap[d] >= 0) {
        remapped.emplace_back(remap[s], remap[d]);
      }
    }
    corpus.meta.ground_truth_edges = std::move(remapped);
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus: cannot write " + path);
  for (const Cascade& c : corpus.cascades) {
    for (std::size_t i = 0; i < c.users.size(); ++i) {
      if (i > 0) out << ' ';
      out << corpus.labels.at(c.users[i]);
    }
    out << '\n';
  }
  out.close();

  json meta;
  meta["name"] = corpus.name;
  meta["vocab"] = corpus.labels;
  meta["warnings"] = {{"duplicates_dropped", corpus.meta.duplicates_dropped},
                      {"cascades_dropped_short", corpus.meta.cascades_dropped_short},
                      {"users_removed_inactive", corpus.meta.users_removed_inactive}};
  json edges = json::array();
  for (auto [s, d] : corpus.meta.ground_truth_edges) edges.push_back({s, d});
  meta["ground_truth_edges"] = edges;

  std::ofstream meta_out(meta_path(path));
  if (!meta_out) throw std::runtime_error("save_corpus: cannot write " + meta_path(path));
  meta_out << meta.dump(2) << '\n';
}

Split split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed) {
  if (corpus.cascades.size() < 2)
    throw std::invalid_argument("split_corpus: need at least 2 cascades");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("split_corpus: ratio must be in (0,1)");

  const int n = static_cast<int>(corpus.cascades.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).substream("split");
  rng.shuffle(order);

  const int n_train = static_cast<int>(std::floor(ratio * n));
  if (n_train == 0 || n_train == n)
    throw std::invalid_argument("split_corpus: ratio " + std::to_string(ratio) +
                                " leaves an empty side for n=" + std::to_string(n));
  Split split;
  split.seed = seed;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.test.assign(order.begin() + n_train, order.end());
  return split;
}

void save_split(const Split& split, const std::string& path) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["test"] = split.test;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_split: cannot write " + path);
  out << j.dump(2) << '\n';
}

Split load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_split: cannot open " + path);
  json j = json::parse(in);
  Split split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.train = j.at("train").get<std::vector<int>>();
  split.test = j.at("test").get<std::vector<int>>();
  return split;
}

Corpus synthesize_ic_corpus(int n_users, int n_cascades, double edge_prob,
                            double infect_prob, std::uint64_t seed) {
  if (n_users < 2) throw std::invalid_argument("synthesize_ic_corpus: n_users must be >= 2");
  if (n_cascades < 1) throw std::invalid_argument("synthesize_ic_corpus: n_cascades must be >= 1");
  if (!(edge_prob > 0.0 && edge_prob <= 1.0) || !(infect_prob > 0.0 && infect_prob <= 1.0))
    throw std::invalid_argument("synthesize_ic_corpus: probabilities must be in (0,1]");

  Rng root(seed);
  Rng graph_rng = root.substream("graph");
  std::vector<std::vector<int>> out_edges(n_users);
  for (int u = 0; u < n_users; ++u) {
    for (int v = 0; v < n_users; ++v) {
      if (u != v && graph_rng.bernoulli(edge_prob)) out_edges[u].push_back(v);
    }
  }

  std::vector<std::vector<UserId>> cascades;
  const long max_attempts = 10L * n_cascades;
  Rng cascade_root = root.substream("cascade");
  std::vector<char> infected(n_users, 0);
  for (long attempt = 0; attempt < max_attempts &&
                         static_cast<int>(cascades.size()) < n_cascades;
       ++attempt) {
    Rng rng = cascade_root.substream(static_cast<std::uint64_t>(attempt));
    std::fill(infected.begin(), infected.end(), 0);
    const int seed_node = static_cast<int>(rng.next_below(n_users));
    std::vector<UserId> order = {seed_node};
    infected[seed_node] = 1;
    std::size_t round_begin = 0;
    while (round_begin < order.size()) {
      const std::size_t round_end = order.size();
      for (std::size_t i = round_begin; i < round_end; ++i) {
        for (int v : out_edges[order[i]]) {
          if (!infected[v] && rng.bernoulli(infect_prob)) {
            infected[v] = 1;
            order.push_back(v);
          }
        }
      }
      round_begin = round_end;
    }
    if (order.size() >= 2) cascades.push_back(std::move(order));
  }
  if (cascades.empty())
    throw std::runtime_error("synthesize_ic_corpus: no usable cascades after 10x oversampling");

  // Drop never-infected users and re-pack densely in ascending node order.
  std::vector<bool> present(n_users, false);
  for (const auto& c : cascades) {
    for (UserId u : c) present[u] = true;
  }
  std::vector<int> remap(n_users, -1);
  Corpus corpus;
  corpus.name = "synthetic-ic";
  for (int u = 0; u < n_users; ++u) {
    if (present[u]) {
      remap[u] = corpus.vocab_size++;
      corpus.labels.push_back("u" + std::to_string(u));
    }
  }
  for (auto& c : cascades) {
    Cascade out;
    out.users.reserve(c.size());
    for (UserId u : c) out.users.push_back(remap[u]);
    corpus.cascades.push_back(std::move(out));
  }
  for (int u = 0; u < n_users; ++u) {
    if (remap[u] < 0) continue;
    for (int v : out_edges[u]) {
      if (remap[v] >= 0) corpus.meta.ground_truth_edges.emplace_back(remap[u], remap[v]);
    }
  }
  return corpus;
}

}  // namespace ndm
