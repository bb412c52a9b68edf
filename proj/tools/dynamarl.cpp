// Command-line front end: train / adapt / eval / export.
//
// Exit codes: 0 success, 1 bad usage or invalid spec/arguments, 2 runtime
// failure (I/O, corrupt checkpoint, training error).

#include "dynamarl/experiment.hpp"
#include "dynamarl/export.hpp"
#include "dynamarl/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace dynamarl;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> episodes;
};

ExperimentSpec load_spec(const std::string& path, const Overrides& ov) {
  ExperimentSpec spec = parse_spec_file(path);
  if (ov.seed) spec.seed = *ov.seed;
  if (ov.out) spec.out = *ov.out;
  if (ov.episodes) spec.episodes = *ov.episodes;
  validate_spec(spec);
  return spec;
}

void print_summary(const RunSummary& s) {
  std::printf("task=%s seed=%llu episodes=%d", s.task.c_str(),
              static_cast<unsigned long long>(s.seed), s.episodes);
  if (s.episodes_to_threshold)
    std::printf(" episodes_to_threshold=%d", *s.episodes_to_threshold);
  if (!std::isnan(s.final_plateau)) std::printf(" final_plateau=%s", fmt_g17(s.final_plateau).c_str());
  std::printf(" params=%lld wall_clock=%.1fs\n", static_cast<long long>(s.total_parameters),
              s.wall_clock_seconds);
}

int cmd_train(const std::string& spec_path, const Overrides& ov) {
  const ExperimentSpec spec = load_spec(spec_path, ov);
  print_summary(run_experiment(spec));
  return 0;
}

int cmd_adapt(const std::string& spec_path, const Overrides& ov, const std::string& checkpoint,
              const std::string& mode) {
  ExperimentSpec spec = load_spec(spec_path, ov);
  spec.init_checkpoint = checkpoint;
  if (!mode.empty()) spec.mode = parse_mode(mode);
  bool has_join = false;
  for (const RosterEvent& e : spec.events) has_join |= e.join;
  if (!has_join && spec.mode != Mode::FromScratch)
    std::fprintf(stderr, "note: spec has no join event; adapt will train the resumed roster as-is\n");
  validate_spec(spec);
  print_summary(run_experiment(spec));
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& pairing, const std::string& opponent,
             int episodes, std::uint64_t seed, const std::string& spec_path, const std::string& out) {
  if (pairing != "self" && pairing != "cross")
    throw std::invalid_argument("--pairing must be self or cross");
  if (pairing == "cross" && opponent.empty())
    throw std::invalid_argument("--pairing cross requires --opponent");

  LoadedCheckpoint main_ck = load_checkpoint(checkpoint);
  TrainConfig cfg;
  if (!spec_path.empty()) {
    const ExperimentSpec spec = parse_spec_file(spec_path);
    if (spec.task != main_ck.meta.task)
      throw std::invalid_argument("spec task does not match the checkpoint");
    cfg = spec.train;
  }
  cfg.model = main_ck.meta.cfg;
  cfg.env.task = main_ck.meta.task;

  NetworkBundle pred = std::move(main_ck.bundle);
  NetworkBundle prey = pairing == "cross" ? std::move(load_checkpoint(opponent).bundle) : pred;
  const EvalRecord rec = evaluate_paired(pred, prey, cfg, episodes, seed);

  nlohmann::ordered_json j;
  j["task"] = task_name(main_ck.meta.task);
  j["pairing"] = pairing;
  j["checkpoint"] = checkpoint;
  if (pairing == "cross") j["opponent"] = opponent;
  j["episodes"] = episodes;
  j["seed"] = seed;
  j["roster"] = rec.roster_tag;
  j["per_agent_reward"] = rec.per_agent_reward;
  j["mean_reward"] = rec.mean_reward;
  j["mean_touches"] = rec.mean_touches;
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    const auto parent = std::filesystem::path(out).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw std::runtime_error("eval: cannot open " + out);
    f << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_export(const std::vector<std::string>& runs, const std::string& out, int window) {
  namespace fs = std::filesystem;
  fs::create_directories(out);
  std::vector<SelectorRow> rows;
  std::vector<std::vector<std::pair<int, double>>> curves;
  for (const std::string& dir : runs) {
    LoadedCheckpoint ck = load_checkpoint(dir + "/ckpt_final.bin");
    auto r = selector_rows(ck.bundle, ck.meta.rng_base);
    rows.insert(rows.end(), r.begin(), r.end());
    if (fs::exists(dir + "/eval.csv")) {
      auto curve = read_eval_curve(dir + "/eval.csv");
      if (!curve.empty()) curves.push_back(std::move(curve));
    }
  }
  write_selectors_csv(rows, out + "/selectors.csv");
  write_curves_csv(aggregate_curves(curves, window), out + "/curves.csv");
  std::printf("wrote %s/selectors.csv (%zu rows) and %s/curves.csv (%zu runs)\n", out.c_str(), rows.size(),
              out.c_str(), curves.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic-roster multi-agent actor-critic experiments"};
  app.require_subcommand(1);

  std::string spec_path, checkpoint, opponent, mode, out, pairing = "self";
  std::vector<std::string> runs;
  Overrides ov;
  std::uint64_t seed_opt = 0;
  int episodes_opt = 0, eval_episodes = 100, window = 5;
  std::uint64_t eval_seed = 1;

  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_opt, "override the spec seed");
    cmd->add_option("--out", out, "override the spec output directory");
    cmd->add_option("--episodes", episodes_opt, "override the spec episode count");
  };
  auto collect_overrides = [&](CLI::App* cmd) {
    if (cmd->count("--seed")) ov.seed = seed_opt;
    if (cmd->count("--out")) ov.out = out;
    if (cmd->count("--episodes")) ov.episodes = episodes_opt;
  };

  CLI::App* train = app.add_subcommand("train", "run a training experiment from a spec file");
  train->add_option("--spec", spec_path, "experiment spec file")->required();
  add_overrides(train);

  CLI::App* adapt = app.add_subcommand("adapt", "resume a checkpoint with roster changes from a spec");
  adapt->add_option("--spec", spec_path, "experiment spec file")->required();
  adapt->add_option("--checkpoint", checkpoint, "checkpoint to resume from")->required();
  adapt->add_option("--mode", mode, "few_shot | few_shot_fine_tune | from_scratch");
  add_overrides(adapt);

  CLI::App* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--pairing", pairing, "self | cross (predators from --checkpoint, prey from --opponent)");
  eval->add_option("--opponent", opponent, "prey checkpoint for --pairing cross");
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--spec", spec_path, "optional spec for environment settings");
  eval->add_option("--out", out, "also write the result JSON here");

  CLI::App* exp = app.add_subcommand("export", "selector tables and aggregated reward curves");
  exp->add_option("--run", runs, "run directory (repeatable, one per seed)")->required();
  exp->add_option("--out", out, "output directory")->required();
  exp->add_option("--window", window, "smoothing window in eval probes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train) {
      collect_overrides(train);
      return cmd_train(spec_path, ov);
    }
    if (*adapt) {
      collect_overrides(adapt);
      return cmd_adapt(spec_path, ov, checkpoint, mode);
    }
    if (*eval) return cmd_eval(checkpoint, pairing, opponent, eval_episodes, eval_seed, spec_path, out);
    return cmd_export(runs, out, window);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
