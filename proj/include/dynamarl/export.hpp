#pragma once

// Post-run exports: softmaxed selector tables read from checkpoints, and
// reward curves smoothed per seed then aggregated across seeds with a 95%
// normal-approximation confidence band.

#include "dynamarl/metrics.hpp"
#include "dynamarl/nets.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace dynamarl {

struct SelectorRow {
  std::uint64_t seed = 0;
  int agent = 0;
  std::string color;
  bool joined = false;            // joined after episode 0 vs. original roster
  std::string selector;           // "policy", "critic1", "critic2"
  std::vector<double> weights;    // softmaxed mixture weights, length K
};

inline std::vector<double> softmax_weights(const Tensor& logits) {
  double mx = logits[0];
  for (std::int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
  double den = 0.0;
  std::vector<double> out(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t i = 0; i < logits.numel(); ++i) den += std::exp(logits[i] - mx);
  for (std::int64_t i = 0; i < logits.numel(); ++i) out[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx) / den;
  return out;
}

inline std::vector<SelectorRow> selector_rows(const NetworkBundle& bundle, std::uint64_t seed) {
  static const std::pair<const char*, const char*> kinds[] = {
      {"zeta", "policy"}, {"psi1", "critic1"}, {"psi2", "critic2"}};
  std::vector<SelectorRow> out;
  for (int id : bundle.live_ids()) {
    const AgentInfo* info = bundle.find(id);
    for (const auto& [suffix, label] : kinds) {
      SelectorRow row;
      row.seed = seed;
      row.agent = id;
      row.color = info->color;
      row.joined = info->joined_episode > 0;
      row.selector = label;
      row.weights = softmax_weights(
          bundle.online().at("agent" + std::to_string(id) + "." + suffix).value);
      out.push_back(std::move(row));
    }
  }
  return out;
}

inline void write_selectors_csv(const std::vector<SelectorRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export: cannot open " + path);
  os << "seed,agent,color,joined,selector,weights\n";
  for (const SelectorRow& r : rows) {
    os << r.seed << ',' << r.agent << ',' << r.color << ',' << (r.joined ? 1 : 0) << ',' << r.selector << ','
       << detail::join_semis(r.weights) << '\n';
  }
}

// (episode, mean_reward) pairs from an evaluation CSV produced by MetricsWriter.
inline std::vector<std::pair<int, double>> read_eval_curve(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("export: cannot open " + path);
  std::vector<std::pair<int, double>> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < 5) throw std::runtime_error("export: malformed eval row in " + path);
    out.emplace_back(std::stoi(fields[0]), std::stod(fields[4]));
  }
  return out;
}

// Trailing moving average over up to `window` probes.
inline std::vector<std::pair<int, double>> smooth_curve(const std::vector<std::pair<int, double>>& curve,
                                                        int window) {
  if (window <= 0) throw std::invalid_argument("export: smoothing window must be positive");
  std::vector<std::pair<int, double>> out;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
    double acc = 0.0;
    for (std::size_t k = lo; k <= i; ++k) acc += curve[k].second;
    out.emplace_back(curve[i].first, acc / static_cast<double>(i - lo + 1));
  }
  return out;
}

struct CurvePoint {
  int episode = 0;
  int n_seeds = 0;
  double mean = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // mean ± 1.96·sd/√n
};

inline std::vector<CurvePoint> aggregate_curves(const std::vector<std::vector<std::pair<int, double>>>& per_seed,
                                                int window = 5) {
  std::map<int, std::vector<double>> by_episode;
  for (const auto& curve : per_seed)
    for (const auto& [ep, v] : smooth_curve(curve, window)) by_episode[ep].push_back(v);
  std::vector<CurvePoint> out;
  for (const auto& [ep, vals] : by_episode) {
    CurvePoint p;
    p.episode = ep;
    p.n_seeds = static_cast<int>(vals.size());
    double acc = 0.0;
    for (double v : vals) acc += v;
    p.mean = acc / static_cast<double>(vals.size());
    double var = 0.0;
    if (vals.size() > 1) {
      for (double v : vals) var += (v - p.mean) * (v - p.mean);
      var /= static_cast<double>(vals.size() - 1);
    }
    const double half = 1.96 * std::sqrt(var / static_cast<double>(vals.size()));
    p.ci_lo = p.mean - half;
    p.ci_hi = p.mean + half;
    out.push_back(p);
  }
  return out;
}

inline void write_curves_csv(const std::vector<CurvePoint>& points, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export: cannot open " + path);
  os << "episode,n_seeds,mean_reward,ci_lo,ci_hi\n";
  for (const CurvePoint& p : points)
    os << p.episode << ',' << p.n_seeds << ',' << fmt_g17(p.mean) << ',' << fmt_g17(p.ci_lo) << ','
       << fmt_g17(p.ci_hi) << '\n';
}

}  // namespace dynamarl
