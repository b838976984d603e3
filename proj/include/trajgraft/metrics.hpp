#pragma once

// ADE_k / FDE_k / MR_k over the k most probable modes of each prediction.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trajgraft/error.hpp"
#include "trajgraft/scene.hpp"
#include "trajgraft/trajectory_decoder.hpp"

namespace trajgraft {

inline constexpr double kMissThreshold = 2.0;  // meters

struct MetricRow {
  std::size_t k = 0;
  double ade = 0.0;
  double fde = 0.0;
  double mr = 0.0;
  std::size_t n_agents = 0;
};

struct MetricReport {
  std::vector<MetricRow> overall;                          // one row per k
  std::map<AgentType, std::vector<MetricRow>> per_type;    // types present only
  std::size_t n_agents = 0;

  const MetricRow& at_k(std::size_t k) const {
    for (const auto& r : overall)
      if (r.k == k) return r;
    throw LookupError("no metrics for k=" + std::to_string(k));
  }
};

// Mode indices ordered by rho descending, lower index first on ties.
inline std::vector<std::size_t> top_modes(std::span<const double> rho, std::size_t k) {
  std::vector<std::size_t> idx(rho.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rho[a] > rho[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

struct AgentErrors {
  double ade = 0.0;
  double fde = 0.0;
};

// min over the top-k modes of mean pointwise / final-point L2 error.
inline AgentErrors best_of_k(const GmmPrediction& pred, std::span<const Vec2> truth, std::size_t k) {
  if (truth.size() != pred.T_f) throw DimensionError("ground truth length does not match prediction");
  AgentErrors e{INFINITY, INFINITY};
  for (auto m : top_modes(pred.rho, k)) {
    double total = 0.0;
    for (std::size_t t = 0; t < pred.T_f; ++t) total += norm(pred.mean(m, t) - truth[t]);
    e.ade = std::min(e.ade, total / static_cast<double>(pred.T_f));
    e.fde = std::min(e.fde, norm(pred.mean(m, pred.T_f - 1) - truth.back()));
  }
  return e;
}

struct EvalSample {
  GmmPrediction prediction;
  std::vector<Vec2> truth;
  AgentType type = AgentType::car;
};

inline MetricReport evaluate_predictions(std::span<const EvalSample> samples, std::span<const std::size_t> ks) {
  MetricReport report;
  report.n_agents = samples.size();
  for (auto k : ks) {
    if (k == 0) throw ConfigError("k must be >= 1");
    for (const auto& s : samples)
      if (k > s.prediction.M) throw ConfigError("k=" + std::to_string(k) + " exceeds mode count " + std::to_string(s.prediction.M));
  }
  for (auto k : ks) {
    MetricRow all{k, 0, 0, 0, 0};
    std::map<AgentType, MetricRow> typed;
    for (const auto& s : samples) {
      const auto e = best_of_k(s.prediction, s.truth, k);
      const double miss = e.fde > kMissThreshold ? 1.0 : 0.0;
      for (MetricRow* row : {&all, &typed.try_emplace(s.type, MetricRow{k, 0, 0, 0, 0}).first->second}) {
        row->ade += e.ade;
        row->fde += e.fde;
        row->mr += miss;
        row->n_agents += 1;
      }
    }
    auto finish = [](MetricRow& r) {
      if (r.n_agents == 0) return;
      const double n = static_cast<double>(r.n_agents);
      r.ade /= n;
      r.fde /= n;
      r.mr /= n;
    };
    finish(all);
    report.overall.push_back(all);
    for (auto& [type, row] : typed) {
      finish(row);
      report.per_type[type].push_back(row);
    }
  }
  return report;
}

// `k,ade,fde,mr,n_agents`; per-type rows carry `k:type` in the first column.
inline std::string metrics_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "k,ade,fde,mr,n_agents\n";
  for (const auto& row : r.overall) os << row.k << ',' << row.ade << ',' << row.fde << ',' << row.mr << ',' << row.n_agents << '\n';
  for (const auto& [type, rows] : r.per_type)
    for (const auto& row : rows)
      os << row.k << ':' << to_string(type) << ',' << row.ade << ',' << row.fde << ',' << row.mr << ',' << row.n_agents << '\n';
  return os.str();
}

}  // namespace trajgraft
