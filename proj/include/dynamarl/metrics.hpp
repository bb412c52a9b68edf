#pragma once

// Append-only run metrics: one CSV row per training episode, one per
// evaluation probe, plus an end-of-run JSON summary. Numbers are printed with
// %.17g so equal runs produce byte-identical files; nothing time-dependent
// goes into the CSVs.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace dynamarl {

inline std::string fmt_g17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct EpisodeRecord {
  int episode = 0;
  std::string roster_tag;
  std::uint64_t seed = 0;
  std::vector<double> per_agent_reward;
  double mean_reward = 0.0;
  int touches = 0;
  double critic_loss = std::nan("");  // last update round this episode
  double actor_loss = std::nan("");
};

struct EvalRecord {
  int episode = 0;  // training episode after which the probe ran
  std::string roster_tag;
  std::uint64_t seed = 0;
  std::vector<double> per_agent_reward;
  double mean_reward = 0.0;
  double mean_touches = 0.0;
};

namespace detail {

// roster tags are comma-joined ids; commas would break the column structure
inline std::string csv_tag(std::string tag) {
  for (char& c : tag)
    if (c == ',') c = '-';
  return tag;
}

inline std::string join_semis(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += fmt_g17(v[i]);
  }
  return s;
}

}  // namespace detail

class MetricsWriter {
 public:
  MetricsWriter() = default;

  void open_train(const std::string& path) {
    train_.open(path, std::ios::trunc);
    if (!train_) throw std::runtime_error("metrics: cannot open " + path);
    train_ << "episode,roster,seed,per_agent_rewards,mean_reward,touches,critic_loss,actor_loss\n";
  }

  void open_eval(const std::string& path) {
    eval_.open(path, std::ios::trunc);
    if (!eval_) throw std::runtime_error("metrics: cannot open " + path);
    eval_ << "episode,roster,seed,per_agent_rewards,mean_reward,mean_touches\n";
  }

  void append(const EpisodeRecord& r) {
    if (!train_.is_open()) return;
    train_ << r.episode << ',' << detail::csv_tag(r.roster_tag) << ',' << r.seed << ',' << detail::join_semis(r.per_agent_reward)
           << ',' << fmt_g17(r.mean_reward) << ',' << r.touches << ',' << fmt_g17(r.critic_loss) << ','
           << fmt_g17(r.actor_loss) << '\n';
    train_.flush();
  }

  void append(const EvalRecord& r) {
    if (!eval_.is_open()) return;
    eval_ << r.episode << ',' << detail::csv_tag(r.roster_tag) << ',' << r.seed << ',' << detail::join_semis(r.per_agent_reward)
          << ',' << fmt_g17(r.mean_reward) << ',' << fmt_g17(r.mean_touches) << '\n';
    eval_.flush();
  }

 private:
  std::ofstream train_, eval_;
};

struct RunSummary {
  std::string task;
  std::uint64_t seed = 0;
  int episodes = 0;
  std::optional<int> episodes_to_threshold;  // vs. the spec's threshold, if set
  std::optional<double> threshold;
  double final_plateau = std::nan("");  // mean eval reward over the last probes
  std::int64_t total_parameters = 0;
  std::int64_t shared_parameters = 0;
  std::int64_t per_agent_parameters = 0;
  double wall_clock_seconds = 0.0;  // informational; never in the CSVs
};

}  // namespace dynamarl
