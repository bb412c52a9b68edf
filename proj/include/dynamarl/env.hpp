#pragma once

// Particle world for the two tasks. Double-integrator point agents on a
// [-1,1]^2 arena with discrete unit-force actions. Landmarks are static: the
// two per-color homes in Finding Home, two obstacles in Predator-Prey. There
// are no contact forces; collisions and touches only enter through rewards.

#include "dynamarl/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynamarl {

enum class Task { FindingHome, PredatorPrey };

inline Task parse_task(const std::string& s) {
  if (s == "finding_home") return Task::FindingHome;
  if (s == "predator_prey") return Task::PredatorPrey;
  throw std::invalid_argument("unknown task: " + s);
}

inline const char* task_name(Task t) { return t == Task::FindingHome ? "finding_home" : "predator_prey"; }

struct EnvConfig {
  Task task = Task::FindingHome;
  double dt = 0.1;
  double damping = 0.75;
  double gain = 1.0;        // force gain for agents (and predators)
  double prey_gain = 1.3;   // prey move faster
  double agent_radius = 0.05;
  double predator_radius = 0.075;
  double prey_radius = 0.04;
  double landmark_radius = 0.1;
  double c_coll = 1.0;      // Finding Home per-collision penalty
  double r_touch = 10.0;    // Predator-Prey touch bonus
  int max_steps = 25;
  int n_obstacles = 2;
  double spawn_extent = 1.0;  // entities spawn uniformly in [-extent, extent]^2
};

struct RosterEntry {
  int id;
  std::string color;  // "green" | "red"; in Predator-Prey, green = predator, red = prey
};

// actions: 0 left, 1 right, 2 up, 3 down, 4 stay
inline constexpr int kNumActions = 5;
inline constexpr int kObsComp = 4;

class World {
 public:
  struct Entity {
    double px = 0, py = 0, vx = 0, vy = 0;
  };

  struct StepResult {
    std::vector<double> rewards;  // per live agent, sorted-id order
    bool done = false;
    int touches = 0;   // Predator-Prey touching pairs this step
    int collisions = 0;  // Finding Home colliding pairs this step
  };

  explicit World(EnvConfig cfg) : cfg_(cfg) {}

  const EnvConfig& config() const { return cfg_; }

  void reset(std::vector<RosterEntry> roster, RngStream& rng) {
    if (roster.empty()) throw std::invalid_argument("World::reset: empty roster");
    std::sort(roster.begin(), roster.end(), [](const RosterEntry& a, const RosterEntry& b) { return a.id < b.id; });
    roster_ = std::move(roster);
    agents_.assign(roster_.size(), Entity{});
    const int n_land = n_landmarks();
    landmarks_.assign(static_cast<std::size_t>(n_land), Entity{});
    for (auto& a : agents_) {
      a.px = rng.uniform(-cfg_.spawn_extent, cfg_.spawn_extent);
      a.py = rng.uniform(-cfg_.spawn_extent, cfg_.spawn_extent);
      a.vx = a.vy = 0.0;
    }
    for (auto& l : landmarks_) {
      l.px = rng.uniform(-cfg_.spawn_extent, cfg_.spawn_extent);
      l.py = rng.uniform(-cfg_.spawn_extent, cfg_.spawn_extent);
    }
    steps_ = 0;
  }

  int n_agents() const { return static_cast<int>(roster_.size()); }
  int n_landmarks() const { return cfg_.task == Task::FindingHome ? 2 : cfg_.n_obstacles; }
  int steps() const { return steps_; }
  const std::vector<RosterEntry>& roster() const { return roster_; }
  std::vector<Entity>& agents() { return agents_; }
  const std::vector<Entity>& agents() const { return agents_; }
  std::vector<Entity>& landmarks() { return landmarks_; }
  const std::vector<Entity>& landmarks() const { return landmarks_; }

  StepResult step(const std::vector<int>& actions) {
    if (static_cast<int>(actions.size()) != n_agents())
      throw std::invalid_argument("World::step: expected " + std::to_string(n_agents()) + " actions, got " +
                                  std::to_string(actions.size()));
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      double fx = 0.0, fy = 0.0;
      switch (actions[i]) {
        case 0: fx = -1.0; break;
        case 1: fx = 1.0; break;
        case 2: fy = 1.0; break;
        case 3: fy = -1.0; break;
        case 4: break;
        default: throw std::invalid_argument("World::step: bad action " + std::to_string(actions[i]));
      }
      const double gain = is_prey(static_cast<int>(i)) ? cfg_.prey_gain : cfg_.gain;
      Entity& a = agents_[i];
      a.vx = cfg_.damping * a.vx + fx * gain * cfg_.dt;
      a.vy = cfg_.damping * a.vy + fy * gain * cfg_.dt;
      a.px = clamp_arena(a.px + a.vx * cfg_.dt);
      a.py = clamp_arena(a.py + a.vy * cfg_.dt);
    }
    steps_ += 1;

    StepResult res;
    res.done = steps_ >= cfg_.max_steps;
    if (cfg_.task == Task::FindingHome) {
      res.collisions = colliding_pairs();
      const double r = reward_finding_home(res.collisions);
      res.rewards.assign(agents_.size(), r);
    } else {
      res.touches = touching_pairs();
      const auto [r_pred, r_prey] = reward_predator_prey(res.touches);
      res.rewards.resize(agents_.size());
      for (std::size_t i = 0; i < agents_.size(); ++i)
        res.rewards[i] = is_prey(static_cast<int>(i)) ? r_prey : r_pred;
    }
    return res;
  }

  // One observation view per live agent (sorted-id order). Components are
  // ordered agents-then-landmarks; the self component carries absolute
  // position, other agents are relative; a landmark component is
  // [relx, rely, own_home_flag, 0].
  std::vector<std::vector<double>> observe() const {
    std::vector<std::vector<double>> views;
    views.reserve(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      std::vector<double> v;
      v.reserve((agents_.size() + landmarks_.size()) * kObsComp);
      for (std::size_t j = 0; j < agents_.size(); ++j) {
        if (j == i) {
          v.insert(v.end(), {agents_[j].px, agents_[j].py, agents_[j].vx, agents_[j].vy});
        } else {
          v.insert(v.end(),
                   {agents_[j].px - agents_[i].px, agents_[j].py - agents_[i].py, agents_[j].vx, agents_[j].vy});
        }
      }
      for (std::size_t l = 0; l < landmarks_.size(); ++l) {
        const double mine =
            cfg_.task == Task::FindingHome && static_cast<int>(l) == home_index(roster_[i].color) ? 1.0 : 0.0;
        v.insert(v.end(), {landmarks_[l].px - agents_[i].px, landmarks_[l].py - agents_[i].py, mine, 0.0});
      }
      views.push_back(std::move(v));
    }
    return views;
  }

  // Home landmark slot per color: green home first, red home second.
  static int home_index(const std::string& color) { return color == "green" ? 0 : 1; }

  bool is_prey(int agent_idx) const {
    return cfg_.task == Task::PredatorPrey && roster_[static_cast<std::size_t>(agent_idx)].color == "red";
  }

  double radius_of(int agent_idx) const {
    if (cfg_.task == Task::FindingHome) return cfg_.agent_radius;
    return is_prey(agent_idx) ? cfg_.prey_radius : cfg_.predator_radius;
  }

  int colliding_pairs() const {
    int pairs = 0;
    for (std::size_t i = 0; i < agents_.size(); ++i)
      for (std::size_t j = i + 1; j < agents_.size(); ++j)
        if (dist(agents_[i], agents_[j]) < radius_of(static_cast<int>(i)) + radius_of(static_cast<int>(j))) ++pairs;
    return pairs;
  }

  int touching_pairs() const {
    int touches = 0;
    for (std::size_t p = 0; p < agents_.size(); ++p) {
      if (is_prey(static_cast<int>(p))) continue;
      for (std::size_t q = 0; q < agents_.size(); ++q) {
        if (!is_prey(static_cast<int>(q))) continue;
        if (dist(agents_[p], agents_[q]) < radius_of(static_cast<int>(p)) + radius_of(static_cast<int>(q))) ++touches;
      }
    }
    return touches;
  }

  double reward_finding_home(int collisions) const {
    double sum_dist = 0.0;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const Entity& home = landmarks_[static_cast<std::size_t>(home_index(roster_[i].color))];
      sum_dist += dist(agents_[i], home);
    }
    return -sum_dist - cfg_.c_coll * collisions;
  }

  // (predator reward, prey reward); exactly antisymmetric by construction.
  std::pair<double, double> reward_predator_prey(int touches) const {
    double sum_dist = 0.0;
    for (std::size_t p = 0; p < agents_.size(); ++p) {
      if (is_prey(static_cast<int>(p))) continue;
      for (std::size_t q = 0; q < agents_.size(); ++q)
        if (is_prey(static_cast<int>(q))) sum_dist += dist(agents_[p], agents_[q]);
    }
    const double t = cfg_.r_touch * touches;
    return {t - sum_dist, sum_dist - t};
  }

 private:
  static double clamp_arena(double x) { return std::min(1.0, std::max(-1.0, x)); }
  static double dist(const Entity& a, const Entity& b) { return std::hypot(a.px - b.px, a.py - b.py); }

  EnvConfig cfg_;
  std::vector<RosterEntry> roster_;
  std::vector<Entity> agents_;
  std::vector<Entity> landmarks_;
  int steps_ = 0;
};

}  // namespace dynamarl
