#include "dynamarl/experiment.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dynamarl;
namespace fs = std::filesystem;

namespace {

std::string tiny_overrides(const std::string& out) {
  std::ostringstream os;
  os << "out " << out << '\n';
  os << "batch 16\n";
  os << "replay_capacity 4096\n";
  os << "d_e 3\nensemble_k 2\nheads 2\n";
  os << "token_hidden 6\ntoken_dim 6\nvalue_dim 8\npolicy_dim 8\nblock_hidden 5\n";
  return os.str();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "dynamarl_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("spec round-trips through serialize and parse") {
  ExperimentSpec s;
  s.task = Task::PredatorPrey;
  s.seed = 42;
  s.out = "runs/pp";
  s.episodes = 500;
  s.mode = Mode::FewShotFineTune;
  s.init_checkpoint = "runs/base/ckpt_final.bin";
  s.roster_green = 3;
  s.roster_red = 2;
  s.fine_tune_after = 120;
  s.threshold = -1.25;
  s.checkpoint_every = 100;
  s.train.tau = 5e-3;
  s.train.batch = 64;
  s.train.env.spawn_extent = 0.55;
  RosterEvent join;
  join.episode = 100;
  join.join = true;
  join.green = 1;
  join.red = 1;
  s.events.push_back(join);
  RosterEvent drop;
  drop.episode = 300;
  drop.drop_ids = {0, 5};
  s.events.push_back(drop);

  const std::string text = serialize_spec(s);
  const ExperimentSpec p = parse_spec(text);
  REQUIRE(serialize_spec(p) == text);
  REQUIRE(p.task == Task::PredatorPrey);
  REQUIRE(p.mode == Mode::FewShotFineTune);
  REQUIRE(p.threshold.has_value());
  REQUIRE(*p.threshold == -1.25);
  REQUIRE(p.events.size() == 2);
  REQUIRE(p.events[1].drop_ids == std::vector<int>{0, 5});
  REQUIRE(p.train.env.task == Task::PredatorPrey);

  SECTION("comments and blank lines are ignored") {
    const ExperimentSpec q = parse_spec("# header\n\n" + text + "\n  # trailing comment\n");
    REQUIRE(serialize_spec(q) == text);
  }
  SECTION("exotic doubles survive the round trip") {
    s.train.tau = 7e-5;
    s.train.lr_critic = 1.0 / 3.0;
    const std::string t2 = serialize_spec(s);
    REQUIRE(serialize_spec(parse_spec(t2)) == t2);
    REQUIRE(parse_spec(t2).train.lr_critic == 1.0 / 3.0);
  }
}

TEST_CASE("spec parsing reports errors with line numbers") {
  const std::string base = "schema_version 1\ntask finding_home\nepisodes 10\n";

  SECTION("unknown key") {
    try {
      parse_spec(base + "bogus_key 3\n");
      FAIL("expected SpecError");
    } catch (const SpecError& e) {
      REQUIRE(e.line_no == 4);
      REQUIRE(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
  }
  SECTION("malformed number") {
    REQUIRE_THROWS_AS(parse_spec(base + "gamma 0.9x\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec(base + "batch many\n"), SpecError);
  }
  SECTION("missing schema_version") {
    REQUIRE_THROWS_AS(parse_spec("task finding_home\nepisodes 5\n"), SpecError);
  }
  SECTION("unsupported schema_version") {
    REQUIRE_THROWS_AS(parse_spec("schema_version 2\nepisodes 5\n"), SpecError);
  }
  SECTION("events must be strictly increasing") {
    REQUIRE_THROWS_AS(parse_spec(base + "event 5 join green=1 red=0\nevent 5 drop id=0\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec(base + "event 6 join green=1 red=0\nevent 5 drop id=0\n"), SpecError);
  }
  SECTION("event outside the run") {
    REQUIRE_THROWS_AS(parse_spec(base + "event 10 join green=1 red=0\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec(base + "event -1 join green=1 red=0\n"), SpecError);
  }
  SECTION("join must add someone") {
    REQUIRE_THROWS_AS(parse_spec(base + "event 3 join green=0 red=0\n"), SpecError);
  }
  SECTION("drop of a non-live id") {
    REQUIRE_THROWS_AS(parse_spec(base + "event 3 drop id=9\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec(base + "event 3 drop id=0\nevent 4 drop id=0\n"), SpecError);
  }
  SECTION("roster may never empty") {
    REQUIRE_THROWS_AS(parse_spec(base + "event 3 drop id=0,1,2,3\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec(base + "roster green=0 red=0\n"), SpecError);
  }
  SECTION("joined ids become droppable") {
    const ExperimentSpec ok =
        parse_spec(base + "event 3 join green=1 red=0\nevent 5 drop id=4\n");
    REQUIRE(ok.events.size() == 2);
  }
  SECTION("bad mode and task names") {
    REQUIRE_THROWS_AS(parse_spec(base + "mode warp\n"), SpecError);
    REQUIRE_THROWS_AS(parse_spec("schema_version 1\ntask golf\nepisodes 1\n"), SpecError);
  }
  SECTION("fine_tune_after must be positive") {
    REQUIRE_THROWS_AS(parse_spec(base + "fine_tune_after 0\n"), SpecError);
  }
}

TEST_CASE("run_experiment writes metrics, checkpoints, and a summary") {
  const fs::path out = fresh_dir("smoke");
  std::ostringstream spec_text;
  spec_text << "schema_version 1\ntask finding_home\nseed 5\nepisodes 6\n";
  spec_text << "roster green=1 red=1\neval_every 2\neval_episodes 2\n";
  spec_text << tiny_overrides(out.string());

  const ExperimentSpec spec = parse_spec(spec_text.str());
  const RunSummary sum = run_experiment(spec);
  REQUIRE(sum.episodes == 6);
  REQUIRE(sum.total_parameters > 0);
  REQUIRE(sum.shared_parameters + sum.per_agent_parameters == sum.total_parameters);
  REQUIRE_FALSE(std::isnan(sum.final_plateau));

  const std::string train_csv = slurp((out / "train.csv").string());
  REQUIRE(std::count(train_csv.begin(), train_csv.end(), '\n') == 7);  // header + 6 episodes
  const std::string eval_csv = slurp((out / "eval.csv").string());
  REQUIRE(std::count(eval_csv.begin(), eval_csv.end(), '\n') == 4);  // header + probes at 2,4,6

  LoadedCheckpoint initial = load_checkpoint((out / "ckpt_initial.bin").string());
  LoadedCheckpoint final_ck = load_checkpoint((out / "ckpt_final.bin").string());
  REQUIRE(initial.meta.task == Task::FindingHome);
  REQUIRE_FALSE(diff_param_names(initial.bundle.online(), final_ck.bundle.online()).empty());

  const std::string summary = slurp((out / "summary.json").string());
  auto j = nlohmann::json::parse(summary);
  REQUIRE(j.at("episodes") == 6);
  REQUIRE(j.at("parameter_counts").at("total") == sum.total_parameters);
  REQUIRE(j.at("wall_clock_seconds").is_number());

  SECTION("the same spec reruns to byte-identical metrics") {
    const fs::path out2 = fresh_dir("smoke2");
    ExperimentSpec again = spec;
    again.out = out2.string();
    run_experiment(again);
    REQUIRE(slurp((out2 / "train.csv").string()) == train_csv);
    REQUIRE(slurp((out2 / "eval.csv").string()) == eval_csv);
  }
}

TEST_CASE("a few-shot join touches only the joiner across the rest of the run") {
  const fs::path out = fresh_dir("join");
  std::ostringstream spec_text;
  spec_text << "schema_version 1\ntask finding_home\nseed 9\nepisodes 6\n";
  spec_text << "roster green=1 red=1\nmode few_shot\n";
  spec_text << "event 3 join green=1 red=0\n";
  spec_text << tiny_overrides(out.string());

  run_experiment(parse_spec(spec_text.str()));
  LoadedCheckpoint pre = load_checkpoint((out / "ckpt_pre_ep3.bin").string());
  LoadedCheckpoint fin = load_checkpoint((out / "ckpt_final.bin").string());

  const std::vector<std::string> joiner = {"agent2.psi1", "agent2.psi2", "agent2.zeta", "embed.agent2"};
  REQUIRE(diff_param_names(pre.bundle.online(), fin.bundle.online()) == joiner);
  REQUIRE(diff_param_names(pre.bundle.target(), fin.bundle.target()) == joiner);
  REQUIRE(fin.bundle.live_ids() == std::vector<int>{0, 1, 2});
  bool joined_flagged = false;
  for (const AgentInfo& a : fin.bundle.roster())
    if (a.id == 2 && a.joined_episode == 3) joined_flagged = true;
  REQUIRE(joined_flagged);
}

TEST_CASE("a from-scratch join reinitializes the whole model") {
  const fs::path out = fresh_dir("scratch");
  std::ostringstream spec_text;
  spec_text << "schema_version 1\ntask finding_home\nseed 9\nepisodes 6\n";
  spec_text << "roster green=1 red=1\nmode from_scratch\n";
  spec_text << "event 3 join green=1 red=0\n";
  spec_text << tiny_overrides(out.string());

  run_experiment(parse_spec(spec_text.str()));
  LoadedCheckpoint pre = load_checkpoint((out / "ckpt_pre_ep3.bin").string());
  LoadedCheckpoint fin = load_checkpoint((out / "ckpt_final.bin").string());

  const auto diff = diff_param_names(pre.bundle.online(), fin.bundle.online());
  bool shared_touched = false;
  for (const std::string& name : diff)
    if (name.rfind("critic1.", 0) == 0) shared_touched = true;
  REQUIRE(shared_touched);
  REQUIRE(fin.bundle.live_ids() == std::vector<int>{0, 1, 2});

  // episode numbering stays continuous across the rebuild
  const std::string train_csv = slurp((out / "train.csv").string());
  REQUIRE(train_csv.find("\n3,") != std::string::npos);
  REQUIRE(std::count(train_csv.begin(), train_csv.end(), '\n') == 7);
}

TEST_CASE("a drop event shrinks the roster mid-run") {
  const fs::path out = fresh_dir("drop");
  std::ostringstream spec_text;
  spec_text << "schema_version 1\ntask predator_prey\nseed 9\nepisodes 5\n";
  spec_text << "roster green=2 red=1\n";
  spec_text << "event 2 drop id=1\n";
  spec_text << tiny_overrides(out.string());

  run_experiment(parse_spec(spec_text.str()));
  LoadedCheckpoint fin = load_checkpoint((out / "ckpt_final.bin").string());
  REQUIRE(fin.bundle.live_ids() == std::vector<int>{0, 2});

  const std::string train_csv = slurp((out / "train.csv").string());
  REQUIRE(train_csv.find(",0-1-2,") != std::string::npos);  // before the drop
  REQUIRE(train_csv.find("\n2,0-2,") != std::string::npos); // after it

  // dropping moved nothing: the pre-event snapshot matches the final file on
  // every surviving parameter except what later training updated — strongest
  // form checked in the trainer suite; here the files at least load and agree
  // on roster bookkeeping.
  LoadedCheckpoint pre = load_checkpoint((out / "ckpt_pre_ep2.bin").string());
  REQUIRE(pre.bundle.live_ids() == std::vector<int>{0, 1, 2});
}

TEST_CASE("run_experiment resumes from an init checkpoint") {
  const fs::path out1 = fresh_dir("stage1");
  std::ostringstream s1;
  s1 << "schema_version 1\ntask finding_home\nseed 3\nepisodes 2\nroster green=1 red=1\n";
  s1 << tiny_overrides(out1.string());
  run_experiment(parse_spec(s1.str()));

  const fs::path out2 = fresh_dir("stage2");
  std::ostringstream s2;
  s2 << "schema_version 1\ntask finding_home\nseed 4\nepisodes 2\nroster green=1 red=1\n";
  s2 << "init_checkpoint " << (out1 / "ckpt_final.bin").string() << '\n';
  s2 << tiny_overrides(out2.string());
  run_experiment(parse_spec(s2.str()));

  LoadedCheckpoint stage1_final = load_checkpoint((out1 / "ckpt_final.bin").string());
  LoadedCheckpoint stage2_initial = load_checkpoint((out2 / "ckpt_initial.bin").string());
  REQUIRE(diff_param_names(stage1_final.bundle.online(), stage2_initial.bundle.online()).empty());
  REQUIRE(diff_param_names(stage1_final.bundle.target(), stage2_initial.bundle.target()).empty());

  SECTION("task mismatch is rejected") {
    std::ostringstream s3;
    s3 << "schema_version 1\ntask predator_prey\nseed 4\nepisodes 2\nroster green=1 red=1\n";
    s3 << "init_checkpoint " << (out1 / "ckpt_final.bin").string() << '\n';
    s3 << tiny_overrides((fs::temp_directory_path() / "dynamarl_test" / "never").string());
    REQUIRE_THROWS_AS(run_experiment(parse_spec(s3.str())), std::invalid_argument);
  }
}
