#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ndm/corpus.hpp"
#include "ndm/simulator.hpp"

namespace ndm {

struct CascadeScore {
  int cascade_id = -1;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<CascadeScore> per_cascade;
  std::string setting = "full";  // "full" | "early"
  int skipped_empty_ground_truth = 0;
};

// Per-cascade soft precision/recall over infection probabilities:
//   pre_c = sum_{u in G} P_u / sum_{u in U} P_u,  rec_c = sum_{u in G} P_u / |G|
// f_c is their harmonic mean (0 when pre+rec == 0); macro averages f_c over
// cascades. Cascades with empty ground truth are skipped and counted.
double macro_f1(std::span<const InfectionEstimate> estimates,
                std::span<const std::vector<UserId>> ground_truth,
                MetricReport* report = nullptr);

// Globally pooled sums over all cascades, then the harmonic mean.
double micro_f1(std::span<const InfectionEstimate> estimates,
                std::span<const std::vector<UserId>> ground_truth);

// Convenience wrapper computing both plus the per-cascade table.
MetricReport evaluate_f1(std::span<const InfectionEstimate> estimates,
                         std::span<const std::vector<UserId>> ground_truth,
                         std::string setting);

// Independent straight-line re-implementation of the two formulas used to
// cross-check macro_f1/micro_f1. Returns {macro, micro}.
std::pair<double, double> brute_force_f1_oracle(
    std::span<const InfectionEstimate> estimates,
    std::span<const std::vector<UserId>> ground_truth);

// One CSV row per cascade plus a summary row per (model, setting) report.
std::string metric_reports_csv(
    std::span<const std::pair<std::string, MetricReport>> named_reports);
std::string metric_reports_json(
    std::span<const std::pair<std::string, MetricReport>> named_reports);

}  // namespace ndm
