#include "ndm/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ndm {

namespace {

void check_aligned(std::span<const InfectionEstimate> estimates,
                   std::span<const std::vector<UserId>> ground_truth) {
  if (estimates.size() != ground_truth.size())
    throw std::invalid_argument("metrics: " + std::to_string(estimates.size()) +
                                " estimates vs " + std::to_string(ground_truth.size()) +
                                " ground-truth sets");
}

}  // namespace

double macro_f1(std::span<const InfectionEstimate> estimates,
                std::span<const std::vector<UserId>> ground_truth, MetricReport* report) {
  check_aligned(estimates, ground_truth);
  double f_sum = 0.0;
  long scored = 0;
  int skipped = 0;
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    const auto& truth = ground_truth[c];
    if (truth.empty()) {
      ++skipped;
      continue;
    }
    const auto& p = estimates[c].p;
    double hit_mass = 0.0;
    for (UserId u : truth) hit_mass += p.at(u);
    double total_mass = 0.0;
    for (double v : p) total_mass += v;

    CascadeScore score;
    score.cascade_id = estimates[c].cascade_id;
    score.precision = total_mass > 0.0 ? hit_mass / total_mass : 0.0;
    score.recall = hit_mass / static_cast<double>(truth.size());
    score.f1 = (score.precision + score.recall) > 0.0
                   ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                   : 0.0;
    f_sum += score.f1;
    ++scored;
    if (report != nullptr) report->per_cascade.push_back(score);
  }
  if (report != nullptr) report->skipped_empty_ground_truth = skipped;
  return scored > 0 ? f_sum / static_cast<double>(scored) : 0.0;
}

double micro_f1(std::span<const InfectionEstimate> estimates,
                std::span<const std::vector<UserId>> ground_truth) {
  check_aligned(estimates, ground_truth);
  double hit_mass = 0.0;
  double total_mass = 0.0;
  double truth_size = 0.0;
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    const auto& truth = ground_truth[c];
    if (truth.empty()) continue;
    const auto& p = estimates[c].p;
    for (UserId u : truth) hit_mass += p.at(u);
    for (double v : p) total_mass += v;
    truth_size += static_cast<double>(truth.size());
  }
  const double precision = total_mass > 0.0 ? hit_mass / total_mass : 0.0;
  const double recall = truth_size > 0.0 ? hit_mass / truth_size : 0.0;
  return (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricReport evaluate_f1(std::span<const InfectionEstimate> estimates,
                         std::span<const std::vector<UserId>> ground_truth,
                         std::string setting) {
  MetricReport report;
  report.setting = std::move(setting);
  report.macro_f1 = macro_f1(estimates, ground_truth, &report);
  report.micro_f1 = micro_f1(estimates, ground_truth);
  return report;
}

std::pair<double, double> brute_force_f1_oracle(
    std::span<const InfectionEstimate> estimates,
    std::span<const std::vector<UserId>> ground_truth) {
  check_aligned(estimates, ground_truth);
  // Deliberately separate arithmetic path from macro_f1/micro_f1.
  double macro_sum = 0.0;
  int macro_n = 0;
  double g_hit = 0.0, g_all = 0.0, g_truth = 0.0;
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    if (ground_truth[c].empty()) continue;
    double hit = 0.0;
    for (std::size_t u = 0; u < estimates[c].p.size(); ++u) {
      bool in_truth = false;
      for (UserId t : ground_truth[c]) {
        if (t == static_cast<UserId>(u)) in_truth = true;
      }
      if (in_truth) hit += estimates[c].p[u];
    }
    double all = 0.0;
    for (std::size_t u = 0; u < estimates[c].p.size(); ++u) all += estimates[c].p[u];
    const double pre = all > 0.0 ? hit / all : 0.0;
    const double rec = hit / static_cast<double>(ground_truth[c].size());
    macro_sum += (pre + rec) > 0.0 ? 2.0 * pre * rec / (pre + rec) : 0.0;
    ++macro_n;
    g_hit += hit;
    g_all += all;
    g_truth += static_cast<double>(ground_truth[c].size());
  }
  const double macro = macro_n > 0 ? macro_sum / macro_n : 0.0;
  const double g_pre = g_all > 0.0 ? g_hit / g_all : 0.0;
  const double g_rec = g_truth > 0.0 ? g_hit / g_truth : 0.0;
  const double micro = (g_pre + g_rec) > 0.0 ? 2.0 * g_pre * g_rec / (g_pre + g_rec) : 0.0;
  return {macro, micro};
}

std::string metric_reports_csv(
    std::span<const std::pair<std::string, MetricReport>> named_reports) {
  std::ostringstream out;
  out << "model,setting,cascade_id,precision,recall,f1\n";
  out.precision(17);
  for (const auto& [name, report] : named_reports) {
    for (const CascadeScore& s : report.per_cascade) {
      out << name << ',' << report.setting << ',' << s.cascade_id << ',' << s.precision << ','
          << s.recall << ',' << s.f1 << '\n';
    }
    out << name << ',' << report.setting << ",MACRO,,," << report.macro_f1 << '\n';
    out << name << ',' << report.setting << ",MICRO,,," << report.micro_f1 << '\n';
  }
  return out.str();
}

std::string metric_reports_json(
    std::span<const std::pair<std::string, MetricReport>> named_reports) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, report] : named_reports) {
    nlohmann::json per_cascade = nlohmann::json::array();
    for (const CascadeScore& s : report.per_cascade) {
      per_cascade.push_back({{"cascade_id", s.cascade_id},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1}});
    }
    j[name][report.setting] = {{"macro_f1", report.macro_f1},
                               {"micro_f1", report.micro_f1},
                               {"skipped_empty_ground_truth", report.skipped_empty_ground_truth},
                               {"per_cascade", per_cascade}};
  }
  return j.dump(2);
}

}  // namespace ndm
