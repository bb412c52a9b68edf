#pragma once

// Experiment specs and the run driver. A spec is a line-oriented key-value
// text file (schema-versioned, '#' comments) describing the task, roster
// schedule, and config overrides; the driver executes it: episodes, timed
// join/drop events with phase switching, eval probes, checkpoints, CSV
// metrics, and a JSON summary.

#include "dynamarl/checkpoint.hpp"
#include "dynamarl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dynamarl {

enum class Mode { FewShot, FewShotFineTune, FromScratch };

inline Mode parse_mode(const std::string& s) {
  if (s == "few_shot") return Mode::FewShot;
  if (s == "few_shot_fine_tune") return Mode::FewShotFineTune;
  if (s == "from_scratch") return Mode::FromScratch;
  throw std::invalid_argument("unknown mode: " + s);
}

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::FewShot: return "few_shot";
    case Mode::FewShotFineTune: return "few_shot_fine_tune";
    default: return "from_scratch";
  }
}

struct RosterEvent {
  int episode = 0;
  bool join = false;           // join: adds green+red agents; else drops ids
  int green = 0, red = 0;
  std::vector<int> drop_ids;
};

struct ExperimentSpec {
  int schema_version = 1;
  Task task = Task::FindingHome;
  std::uint64_t seed = 1;
  std::string out = "runs/out";
  int episodes = 0;
  Mode mode = Mode::FewShot;
  std::string init_checkpoint;  // optional
  int roster_green = 2, roster_red = 2;
  int fine_tune_after = 1000;   // FewShotFineTune: episodes before resuming Regular
  std::optional<double> threshold;  // for episodes-to-threshold in the summary
  int checkpoint_every = 0;     // extra periodic checkpoints; 0 = events+final only
  TrainConfig train;
  std::vector<RosterEvent> events;
};

struct SpecError : std::invalid_argument {
  SpecError(int line, const std::string& msg)
      : std::invalid_argument("spec line " + std::to_string(line) + ": " + msg), line_no(line) {}
  int line_no;
};

namespace detail {

inline std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

inline double to_double(const std::string& s, int line) {
  std::size_t idx = 0;
  double v = 0;
  try {
    v = std::stod(s, &idx);
  } catch (const std::exception&) {
    throw SpecError(line, "expected a number, got '" + s + "'");
  }
  if (idx != s.size()) throw SpecError(line, "trailing characters in number '" + s + "'");
  return v;
}

inline long long to_int(const std::string& s, int line) {
  std::size_t idx = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &idx);
  } catch (const std::exception&) {
    throw SpecError(line, "expected an integer, got '" + s + "'");
  }
  if (idx != s.size()) throw SpecError(line, "trailing characters in integer '" + s + "'");
  return v;
}

// "key=value" pair splitter for roster/event arguments.
inline std::pair<std::string, std::string> kv_of(const std::string& s, int line) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= s.size())
    throw SpecError(line, "expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

}  // namespace detail

// Initial agent IDs: greens 0..G-1, reds G..G+R-1; joiners take the next
// unused IDs (greens before reds within one event).
inline void validate_spec(const ExperimentSpec& spec) {
  if (spec.schema_version != 1) throw std::invalid_argument("spec: unsupported schema_version");
  if (spec.episodes < 0) throw std::invalid_argument("spec: episodes must be non-negative");
  if (spec.roster_green + spec.roster_red <= 0) throw std::invalid_argument("spec: initial roster is empty");
  if (spec.roster_green < 0 || spec.roster_red < 0) throw std::invalid_argument("spec: negative roster count");
  if (spec.fine_tune_after <= 0) throw std::invalid_argument("spec: fine_tune_after must be positive");
  if (spec.checkpoint_every < 0) throw std::invalid_argument("spec: checkpoint_every must be non-negative");
  spec.train.validate();

  std::set<int> live;
  int next_id = 0;
  for (int i = 0; i < spec.roster_green + spec.roster_red; ++i) live.insert(next_id++);
  int prev = -1;
  for (const RosterEvent& e : spec.events) {
    if (e.episode <= prev)
      throw std::invalid_argument("spec: event episodes must be strictly increasing (episode " +
                                  std::to_string(e.episode) + ")");
    prev = e.episode;
    if (e.episode < 0 || e.episode >= std::max(spec.episodes, 1))
      throw std::invalid_argument("spec: event at episode " + std::to_string(e.episode) +
                                  " is outside the run");
    if (e.join) {
      if (e.green < 0 || e.red < 0 || e.green + e.red == 0)
        throw std::invalid_argument("spec: join event must add at least one agent");
      for (int i = 0; i < e.green + e.red; ++i) live.insert(next_id++);
    } else {
      if (e.drop_ids.empty()) throw std::invalid_argument("spec: drop event names no ids");
      for (int id : e.drop_ids) {
        if (!live.count(id))
          throw std::invalid_argument("spec: drop of id " + std::to_string(id) + " which is not live");
        live.erase(id);
      }
      if (live.empty()) throw std::invalid_argument("spec: roster becomes empty");
    }
  }
}

inline ExperimentSpec parse_spec(const std::string& text) {
  ExperimentSpec spec;
  bool saw_version = false;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const auto toks = detail::tokens_of(raw);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    auto need = [&](std::size_t n) {
      if (toks.size() != n + 1)
        throw SpecError(line_no, "'" + key + "' expects " + std::to_string(n) + " argument(s)");
    };

    if (key == "schema_version") {
      need(1);
      spec.schema_version = static_cast<int>(detail::to_int(toks[1], line_no));
      saw_version = true;
    } else if (key == "task") {
      need(1);
      try {
        spec.task = parse_task(toks[1]);
      } catch (const std::invalid_argument& e) {
        throw SpecError(line_no, e.what());
      }
    } else if (key == "seed") {
      need(1);
      spec.seed = static_cast<std::uint64_t>(detail::to_int(toks[1], line_no));
    } else if (key == "out") {
      need(1);
      spec.out = toks[1];
    } else if (key == "episodes") {
      need(1);
      spec.episodes = static_cast<int>(detail::to_int(toks[1], line_no));
    } else if (key == "mode") {
      need(1);
      try {
        spec.mode = parse_mode(toks[1]);
      } catch (const std::invalid_argument& e) {
        throw SpecError(line_no, e.what());
      }
    } else if (key == "init_checkpoint") {
      need(1);
      spec.init_checkpoint = toks[1];
    } else if (key == "roster") {
      if (toks.size() < 2) throw SpecError(line_no, "'roster' expects green=<n> red=<n>");
      for (std::size_t i = 1; i < toks.size(); ++i) {
        auto [k, v] = detail::kv_of(toks[i], line_no);
        if (k == "green")
          spec.roster_green = static_cast<int>(detail::to_int(v, line_no));
        else if (k == "red")
          spec.roster_red = static_cast<int>(detail::to_int(v, line_no));
        else
          throw SpecError(line_no, "unknown roster color '" + k + "'");
      }
    } else if (key == "fine_tune_after") {
      need(1);
      spec.fine_tune_after = static_cast<int>(detail::to_int(toks[1], line_no));
    } else if (key == "threshold") {
      need(1);
      spec.threshold = detail::to_double(toks[1], line_no);
    } else if (key == "checkpoint_every") {
      need(1);
      spec.checkpoint_every = static_cast<int>(detail::to_int(toks[1], line_no));
    } else if (key == "event") {
      if (toks.size() < 3) throw SpecError(line_no, "'event' expects <episode> join|drop ...");
      RosterEvent e;
      e.episode = static_cast<int>(detail::to_int(toks[1], line_no));
      if (toks[2] == "join") {
        e.join = true;
        for (std::size_t i = 3; i < toks.size(); ++i) {
          auto [k, v] = detail::kv_of(toks[i], line_no);
          if (k == "green")
            e.green = static_cast<int>(detail::to_int(v, line_no));
          else if (k == "red")
            e.red = static_cast<int>(detail::to_int(v, line_no));
          else
            throw SpecError(line_no, "unknown join argument '" + k + "'");
        }
      } else if (toks[2] == "drop") {
        if (toks.size() != 4) throw SpecError(line_no, "'drop' expects id=<i>[,<j>...]");
        auto [k, v] = detail::kv_of(toks[3], line_no);
        if (k != "id") throw SpecError(line_no, "drop expects id=...");
        std::istringstream ids(v);
        std::string part;
        while (std::getline(ids, part, ','))
          e.drop_ids.push_back(static_cast<int>(detail::to_int(part, line_no)));
      } else {
        throw SpecError(line_no, "event kind must be join or drop, got '" + toks[2] + "'");
      }
      spec.events.push_back(std::move(e));
    }
    // --- TrainConfig / EnvConfig / ModelConfig overrides ---
    else if (key == "gamma") { need(1); spec.train.gamma = detail::to_double(toks[1], line_no); }
    else if (key == "tau") { need(1); spec.train.tau = detail::to_double(toks[1], line_no); }
    else if (key == "batch") { need(1); spec.train.batch = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "window_steps") { need(1); spec.train.window_steps = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "critic_rounds_per_window") { need(1); spec.train.critic_rounds_per_window = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "actor_every") { need(1); spec.train.actor_every = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "lr_critic") { need(1); spec.train.lr_critic = detail::to_double(toks[1], line_no); }
    else if (key == "lr_actor") { need(1); spec.train.lr_actor = detail::to_double(toks[1], line_no); }
    else if (key == "gumbel_temp") { need(1); spec.train.gumbel_temp = detail::to_double(toks[1], line_no); }
    else if (key == "smooth_sigma") { need(1); spec.train.smooth_sigma = detail::to_double(toks[1], line_no); }
    else if (key == "smooth_clip") { need(1); spec.train.smooth_clip = detail::to_double(toks[1], line_no); }
    else if (key == "replay_capacity") { need(1); spec.train.replay_capacity = static_cast<std::size_t>(detail::to_int(toks[1], line_no)); }
    else if (key == "eval_every") { need(1); spec.train.eval_every = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "eval_episodes") { need(1); spec.train.eval_episodes = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "spawn_extent") { need(1); spec.train.env.spawn_extent = detail::to_double(toks[1], line_no); }
    else if (key == "max_steps") { need(1); spec.train.env.max_steps = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "c_coll") { need(1); spec.train.env.c_coll = detail::to_double(toks[1], line_no); }
    else if (key == "r_touch") { need(1); spec.train.env.r_touch = detail::to_double(toks[1], line_no); }
    else if (key == "n_obstacles") { need(1); spec.train.env.n_obstacles = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "d_e") { need(1); spec.train.model.d_e = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "ensemble_k") { need(1); spec.train.model.K = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "heads") { need(1); spec.train.model.heads = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "token_hidden") { need(1); spec.train.model.token_hidden = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "token_dim") { need(1); spec.train.model.token_dim = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "value_dim") { need(1); spec.train.model.value_dim = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "policy_dim") { need(1); spec.train.model.policy_dim = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else if (key == "block_hidden") { need(1); spec.train.model.block_hidden = static_cast<int>(detail::to_int(toks[1], line_no)); }
    else {
      throw SpecError(line_no, "unknown key '" + key + "'");
    }
  }
  if (!saw_version) throw SpecError(0, "missing schema_version");
  spec.train.env.task = spec.task;
  try {
    validate_spec(spec);
  } catch (const std::invalid_argument& e) {
    throw SpecError(0, e.what());
  }
  return spec;
}

inline ExperimentSpec parse_spec_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("spec: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_spec(ss.str());
}

inline std::string serialize_spec(const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "schema_version " << spec.schema_version << '\n';
  os << "task " << task_name(spec.task) << '\n';
  os << "seed " << spec.seed << '\n';
  os << "out " << spec.out << '\n';
  os << "episodes " << spec.episodes << '\n';
  os << "mode " << mode_name(spec.mode) << '\n';
  if (!spec.init_checkpoint.empty()) os << "init_checkpoint " << spec.init_checkpoint << '\n';
  os << "roster green=" << spec.roster_green << " red=" << spec.roster_red << '\n';
  os << "fine_tune_after " << spec.fine_tune_after << '\n';
  if (spec.threshold) os << "threshold " << fmt_g17(*spec.threshold) << '\n';
  os << "checkpoint_every " << spec.checkpoint_every << '\n';
  const TrainConfig& t = spec.train;
  os << "gamma " << fmt_g17(t.gamma) << '\n';
  os << "tau " << fmt_g17(t.tau) << '\n';
  os << "batch " << t.batch << '\n';
  os << "window_steps " << t.window_steps << '\n';
  os << "critic_rounds_per_window " << t.critic_rounds_per_window << '\n';
  os << "actor_every " << t.actor_every << '\n';
  os << "lr_critic " << fmt_g17(t.lr_critic) << '\n';
  os << "lr_actor " << fmt_g17(t.lr_actor) << '\n';
  os << "gumbel_temp " << fmt_g17(t.gumbel_temp) << '\n';
  os << "smooth_sigma " << fmt_g17(t.smooth_sigma) << '\n';
  os << "smooth_clip " << fmt_g17(t.smooth_clip) << '\n';
  os << "replay_capacity " << t.replay_capacity << '\n';
  os << "eval_every " << t.eval_every << '\n';
  os << "eval_episodes " << t.eval_episodes << '\n';
  os << "spawn_extent " << fmt_g17(t.env.spawn_extent) << '\n';
  os << "max_steps " << t.env.max_steps << '\n';
  os << "c_coll " << fmt_g17(t.env.c_coll) << '\n';
  os << "r_touch " << fmt_g17(t.env.r_touch) << '\n';
  os << "n_obstacles " << t.env.n_obstacles << '\n';
  os << "d_e " << t.model.d_e << '\n';
  os << "ensemble_k " << t.model.K << '\n';
  os << "heads " << t.model.heads << '\n';
  os << "token_hidden " << t.model.token_hidden << '\n';
  os << "token_dim " << t.model.token_dim << '\n';
  os << "value_dim " << t.model.value_dim << '\n';
  os << "policy_dim " << t.model.policy_dim << '\n';
  os << "block_hidden " << t.model.block_hidden << '\n';
  for (const RosterEvent& e : spec.events) {
    if (e.join) {
      os << "event " << e.episode << " join green=" << e.green << " red=" << e.red << '\n';
    } else {
      os << "event " << e.episode << " drop id=";
      for (std::size_t i = 0; i < e.drop_ids.size(); ++i) {
        if (i) os << ',';
        os << e.drop_ids[i];
      }
      os << '\n';
    }
  }
  return os.str();
}

// --- run driver ----------------------------------------------------------------

inline NetworkBundle fresh_bundle(const ExperimentSpec& spec, std::uint64_t bundle_seed) {
  NetworkBundle b(spec.train.model, bundle_seed);
  int id = 0;
  for (int i = 0; i < spec.roster_green; ++i) b.add_agent(id++, "green");
  for (int i = 0; i < spec.roster_red; ++i) b.add_agent(id++, "red");
  return b;
}

inline std::int64_t per_agent_scalars(const ParameterStore& store) {
  std::int64_t n = 0;
  for (const auto& [name, p] : store)
    if (NetworkBundle::per_agent_name(name)) n += p.value.numel();
  return n;
}

inline RunSummary run_experiment(const ExperimentSpec& spec) {
  validate_spec(spec);
  namespace fs = std::filesystem;
  fs::create_directories(spec.out);
  const auto t_start = std::chrono::steady_clock::now();

  TrainConfig cfg = spec.train;
  cfg.env.task = spec.task;

  NetworkBundle bundle = [&] {
    if (spec.init_checkpoint.empty()) return fresh_bundle(spec, spec.seed);
    LoadedCheckpoint lc = load_checkpoint(spec.init_checkpoint);
    if (lc.meta.task != spec.task)
      throw std::invalid_argument("spec: init_checkpoint task " + std::string(task_name(lc.meta.task)) +
                                  " does not match " + task_name(spec.task));
    // events were validated against the declared roster, so it must agree
    int greens = 0, reds = 0;
    for (const AgentInfo& a : lc.bundle.roster())
      if (a.live) (a.color == "green" ? greens : reds) += 1;
    if (greens != spec.roster_green || reds != spec.roster_red)
      throw std::invalid_argument("spec: roster green=" + std::to_string(spec.roster_green) +
                                  " red=" + std::to_string(spec.roster_red) +
                                  " does not match the checkpoint (green=" + std::to_string(greens) +
                                  " red=" + std::to_string(reds) + ")");
    return std::move(lc.bundle);
  }();

  std::optional<Trainer> trainer;
  trainer.emplace(cfg, std::move(bundle), spec.seed);

  MetricsWriter mw;
  mw.open_train(spec.out + "/train.csv");
  mw.open_eval(spec.out + "/eval.csv");
  {
    std::ofstream sf(spec.out + "/spec.txt");
    sf << serialize_spec(spec);
  }
  save_checkpoint(spec.out + "/ckpt_initial.bin", trainer->bundle(), spec.task, spec.seed, 0);

  std::vector<EvalRecord> evals;
  std::size_t next_event = 0;
  int fine_tune_end = -1;

  for (int ep = 0; ep < spec.episodes; ++ep) {
    while (next_event < spec.events.size() && spec.events[next_event].episode == ep) {
      const RosterEvent& e = spec.events[next_event];
      save_checkpoint(spec.out + "/ckpt_pre_ep" + std::to_string(e.episode) + ".bin", trainer->bundle(),
                      spec.task, spec.seed, static_cast<std::uint64_t>(ep));
      if (e.join) {
        if (spec.mode == Mode::FromScratch) {
          // discard everything; a brand-new model trains on the new roster
          std::vector<std::pair<int, std::string>> roster;
          for (const AgentInfo& a : trainer->bundle().roster())
            if (a.live) roster.emplace_back(a.id, a.color);
          int next_id = 0;
          for (const AgentInfo& a : trainer->bundle().roster()) next_id = std::max(next_id, a.id + 1);
          for (int i = 0; i < e.green; ++i) roster.emplace_back(next_id++, "green");
          for (int i = 0; i < e.red; ++i) roster.emplace_back(next_id++, "red");
          const std::uint64_t fresh_seed =
              RngStream(spec.seed).split("scratch", static_cast<std::uint64_t>(e.episode)).next_u64();
          NetworkBundle nb(cfg.model, fresh_seed);
          for (const auto& [id, color] : roster) nb.add_agent(id, color, -1, e.episode);
          trainer.emplace(cfg, std::move(nb), fresh_seed);
        } else {
          int next_id = 0;
          for (const AgentInfo& a : trainer->bundle().roster()) next_id = std::max(next_id, a.id + 1);
          std::vector<int> joiners;
          for (int i = 0; i < e.green; ++i) {
            trainer->bundle().add_agent(next_id, "green", -1, e.episode);
            joiners.push_back(next_id++);
          }
          for (int i = 0; i < e.red; ++i) {
            trainer->bundle().add_agent(next_id, "red", -1, e.episode);
            joiners.push_back(next_id++);
          }
          trainer->begin_few_shot(joiners);
          if (spec.mode == Mode::FewShotFineTune) fine_tune_end = e.episode + spec.fine_tune_after;
        }
      } else {
        trainer->drop_agents(e.drop_ids);
      }
      ++next_event;
    }
    if (fine_tune_end >= 0 && ep == fine_tune_end && trainer->phase() == Phase::FewShot)
      trainer->end_few_shot();

    EpisodeRecord rec = trainer->run_episode();
    rec.episode = ep;
    mw.append(rec);

    if (cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0) {
      const std::uint64_t es = RngStream(spec.seed).split("eval_probe", static_cast<std::uint64_t>(ep)).next_u64();
      EvalRecord er = trainer->evaluate(cfg.eval_episodes, es);
      er.episode = ep;
      mw.append(er);
      evals.push_back(std::move(er));
    }
    if (spec.checkpoint_every > 0 && (ep + 1) % spec.checkpoint_every == 0)
      save_checkpoint(spec.out + "/ckpt_ep" + std::to_string(ep + 1) + ".bin", trainer->bundle(), spec.task,
                      spec.seed, static_cast<std::uint64_t>(ep + 1));
  }
  save_checkpoint(spec.out + "/ckpt_final.bin", trainer->bundle(), spec.task, spec.seed,
                  static_cast<std::uint64_t>(spec.episodes));

  RunSummary s;
  s.task = task_name(spec.task);
  s.seed = spec.seed;
  s.episodes = spec.episodes;
  s.threshold = spec.threshold;
  if (spec.threshold) {
    for (const EvalRecord& er : evals)
      if (er.mean_reward >= *spec.threshold) {
        s.episodes_to_threshold = er.episode + 1;
        break;
      }
  }
  if (!evals.empty()) {
    const std::size_t window = std::min<std::size_t>(10, evals.size());
    double acc = 0.0;
    for (std::size_t i = evals.size() - window; i < evals.size(); ++i) acc += evals[i].mean_reward;
    s.final_plateau = acc / static_cast<double>(window);
  }
  s.total_parameters = trainer->bundle().online().total_scalars();
  s.per_agent_parameters = per_agent_scalars(trainer->bundle().online());
  s.shared_parameters = s.total_parameters - s.per_agent_parameters;
  s.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  nlohmann::ordered_json j;
  j["task"] = s.task;
  j["seed"] = s.seed;
  j["episodes"] = s.episodes;
  if (s.threshold)
    j["threshold"] = *s.threshold;
  else
    j["threshold"] = nullptr;
  if (s.episodes_to_threshold)
    j["episodes_to_threshold"] = *s.episodes_to_threshold;
  else
    j["episodes_to_threshold"] = nullptr;
  if (std::isnan(s.final_plateau))
    j["final_plateau"] = nullptr;
  else
    j["final_plateau"] = s.final_plateau;
  j["parameter_counts"] = {{"total", s.total_parameters},
                           {"shared", s.shared_parameters},
                           {"per_agent", s.per_agent_parameters}};
  j["wall_clock_seconds"] = s.wall_clock_seconds;
  std::ofstream js(spec.out + "/summary.json");
  js << j.dump(2) << '\n';
  return s;
}

}  // namespace dynamarl
