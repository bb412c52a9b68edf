#pragma once

// MATD3 centralized training loop: twin critics with clipped double-Q
// targets, target-policy smoothing in logit space, delayed actor/target
// updates, roster-segmented replay, a few-shot phase that trains only the
// joiners' selectors and embeddings, and greedy evaluation.
//
// Every stochastic draw comes from a counter-indexed split of the run seed
// (episode, step, or update-round number), so a run is a pure function of
// (config, initial parameters, seed) and never depends on call timing.

#include "dynamarl/env.hpp"
#include "dynamarl/metrics.hpp"
#include "dynamarl/nets.hpp"
#include "dynamarl/replay.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dynamarl {

struct TrainConfig {
  double gamma = 0.99;
  double tau = 7e-5;
  int batch = 1024;
  int window_steps = 100;             // update-cadence window
  int critic_rounds_per_window = 4;   // critic rounds per window
  int actor_every = 2;                // critic rounds per actor/target round
  double lr_critic = 1e-3;
  double lr_actor = 1e-3;
  double gumbel_temp = 1.0;           // behavior sampling and actor relaxation
  double smooth_sigma = 0.2;          // target-policy smoothing, logit space
  double smooth_clip = 0.5;
  std::size_t replay_capacity = 1000000;
  int eval_every = 0;                 // episodes between eval probes; 0 = off
  int eval_episodes = 10;
  EnvConfig env;
  ModelConfig model;

  int update_stride() const { return window_steps / critic_rounds_per_window; }

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma must be in [0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("TrainConfig: tau must be in (0,1]");
    if (batch <= 0 || window_steps <= 0 || critic_rounds_per_window <= 0 || actor_every <= 0)
      throw std::invalid_argument("TrainConfig: counts must be positive");
    if (window_steps % critic_rounds_per_window != 0)
      throw std::invalid_argument("TrainConfig: window_steps must be divisible by critic_rounds_per_window");
    if (gumbel_temp <= 0.0) throw std::invalid_argument("TrainConfig: gumbel_temp must be positive");
    if (smooth_sigma < 0.0 || smooth_clip < 0.0)
      throw std::invalid_argument("TrainConfig: smoothing parameters must be non-negative");
    if (eval_every < 0 || eval_episodes <= 0)
      throw std::invalid_argument("TrainConfig: eval settings must be positive");
  }
};

// Tensors assembled from one replay batch, in view-major row order.
struct BatchTensors {
  ViewBatch now, next;
  std::vector<Tensor> actions;  // per live agent: [B, d_act] one-hot
  Tensor rewards;               // [N*B, 1], row v*B+b
  Tensor not_done;              // [N*B, 1]
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, NetworkBundle bundle, std::uint64_t run_seed)
      : cfg_(cfg),
        bundle_(std::move(bundle)),
        replay_(cfg.replay_capacity),
        env_(cfg.env),
        seed_(run_seed),
        master_(run_seed) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  NetworkBundle& bundle() { return bundle_; }
  const NetworkBundle& bundle() const { return bundle_; }
  ReplayBuffer& replay() { return replay_; }
  std::uint64_t seed() const { return seed_; }
  Phase phase() const { return phase_; }
  const std::set<std::string>& trainable() const { return trainable_; }

  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t critic_rounds() const { return critic_rounds_; }
  std::int64_t actor_rounds() const { return actor_rounds_; }
  int episodes_run() const { return episodes_run_; }

  // --- roster phase control -------------------------------------------------

  void begin_few_shot(const std::vector<int>& new_ids) {
    trainable_ = bundle_.few_shot_trainable(new_ids);
    phase_ = Phase::FewShot;
  }

  void end_few_shot() {
    trainable_.clear();
    phase_ = Phase::Regular;
  }

  void drop_agents(const std::vector<int>& ids) {
    const auto live = bundle_.live_ids();
    std::set<int> remaining(live.begin(), live.end());
    for (int id : ids)
      if (!remaining.erase(id)) throw std::invalid_argument("drop_agents: agent " + std::to_string(id) + " is not live");
    if (remaining.empty()) throw std::invalid_argument("drop_agents: roster would be empty");
    for (int id : ids) bundle_.remove_agent(id);
  }

  // --- view assembly ----------------------------------------------------------

  static ViewBatch behavior_views(const std::vector<std::vector<double>>& per_agent_obs, int obs_comp,
                                  const std::vector<int>& ids) {
    const int n = static_cast<int>(per_agent_obs.size());
    const int tokens = static_cast<int>(per_agent_obs[0].size()) / obs_comp;
    ViewBatch vb;
    vb.batch = 1;
    vb.n_agents = n;
    vb.tokens = tokens;
    vb.view_agent_ids = ids;
    for (int v = 0; v < n; ++v) vb.view_self_pos.push_back(v);
    vb.obs = Tensor::zeros({n * tokens, obs_comp});
    for (int v = 0; v < n; ++v)
      for (std::size_t k = 0; k < per_agent_obs[static_cast<std::size_t>(v)].size(); ++k)
        vb.obs[static_cast<std::int64_t>(v) * tokens * obs_comp + static_cast<std::int64_t>(k)] =
            per_agent_obs[static_cast<std::size_t>(v)][k];
    return vb;
  }

  static ViewBatch batch_views(const std::vector<const Transition*>& batch, bool use_next, int obs_comp,
                               const std::vector<int>& ids) {
    const int B = static_cast<int>(batch.size());
    const int n = static_cast<int>(batch[0]->obs.size());
    const int tokens = static_cast<int>(batch[0]->obs[0].size()) / obs_comp;
    ViewBatch vb;
    vb.batch = B;
    vb.n_agents = n;
    vb.tokens = tokens;
    vb.view_agent_ids = ids;
    for (int v = 0; v < n; ++v) vb.view_self_pos.push_back(v);
    vb.obs = Tensor::zeros({n * B * tokens, obs_comp});
    const std::int64_t per_view = static_cast<std::int64_t>(tokens) * obs_comp;
    for (int v = 0; v < n; ++v)
      for (int b = 0; b < B; ++b) {
        const auto& src = use_next ? batch[static_cast<std::size_t>(b)]->next_obs[static_cast<std::size_t>(v)]
                                   : batch[static_cast<std::size_t>(b)]->obs[static_cast<std::size_t>(v)];
        if (static_cast<std::int64_t>(src.size()) != per_view)
          throw std::invalid_argument("batch_views: stored observation width disagrees with roster");
        std::copy(src.begin(), src.end(),
                  vb.obs.data() + (static_cast<std::int64_t>(v) * B + b) * per_view);
      }
    return vb;
  }

  // One view's rows of a multi-view batch (actor substitution passes).
  static ViewBatch single_view(const ViewBatch& full, int v) {
    ViewBatch out;
    out.batch = full.batch;
    out.n_agents = full.n_agents;
    out.tokens = full.tokens;
    out.view_agent_ids = {full.view_agent_ids[static_cast<std::size_t>(v)]};
    out.view_self_pos = {full.view_self_pos[static_cast<std::size_t>(v)]};
    const std::int64_t rows = static_cast<std::int64_t>(full.batch) * full.tokens;
    const int c = full.obs.dim(1);
    out.obs = Tensor::zeros({static_cast<int>(rows), c});
    std::copy(full.obs.data() + static_cast<std::int64_t>(v) * rows * c,
              full.obs.data() + (static_cast<std::int64_t>(v) + 1) * rows * c, out.obs.data());
    return out;
  }

  BatchTensors assemble(const std::vector<const Transition*>& batch, const std::vector<int>& ids) const {
    BatchTensors bt;
    bt.now = batch_views(batch, false, cfg_.model.obs_comp, ids);
    bt.next = batch_views(batch, true, cfg_.model.obs_comp, ids);
    const int B = bt.now.batch, n = bt.now.n_agents;
    for (int j = 0; j < n; ++j) {
      Tensor a = Tensor::zeros({B, cfg_.model.d_act});
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < cfg_.model.d_act; ++c)
          a.at2(b, c) = batch[static_cast<std::size_t>(b)]->act[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      bt.actions.push_back(std::move(a));
    }
    bt.rewards = Tensor::zeros({n * B, 1});
    bt.not_done = Tensor::zeros({n * B, 1});
    for (int v = 0; v < n; ++v)
      for (int b = 0; b < B; ++b) {
        bt.rewards[static_cast<std::int64_t>(v) * B + b] =
            batch[static_cast<std::size_t>(b)]->rew[static_cast<std::size_t>(v)];
        bt.not_done[static_cast<std::int64_t>(v) * B + b] = batch[static_cast<std::size_t>(b)]->done ? 0.0 : 1.0;
      }
    return bt;
  }

  // --- update mathematics -----------------------------------------------------

  // Clipped double-Q targets y = r + γ(1−done)·min(Q'₁, Q'₂) with smoothed
  // target-policy actions. Pure values; nothing trains here.
  Tensor td_targets(const BatchTensors& bt, const std::vector<int>& ids, std::int64_t round) {
    Graph g;
    Bind tp{g, bundle_.target(), /*frozen_all=*/true};
    const ParamLookup P = std::ref(tp);
    const int B = bt.next.batch, n = bt.next.n_agents;

    NodeId logits = policy_pass(g, P, cfg_.model, bt.next, ids);
    Tensor noisy = g.value(logits);
    RngStream noise = master_.split("smooth", static_cast<std::uint64_t>(round));
    for (std::int64_t i = 0; i < noisy.numel(); ++i) {
      double e = noise.gaussian() * cfg_.smooth_sigma;
      e = std::min(cfg_.smooth_clip, std::max(-cfg_.smooth_clip, e));
      noisy[i] += e;
    }
    NodeId smoothed = g.softmax(g.scalar_mul(g.constant(noisy), 1.0 / cfg_.gumbel_temp));

    std::vector<NodeId> next_actions;
    for (int j = 0; j < n; ++j) next_actions.push_back(g.slice(smoothed, 0, j * B, B));
    const Tensor q1 = g.value(value_pass(g, P, cfg_.model, 1, bt.next, next_actions, ids));
    const Tensor q2 = g.value(value_pass(g, P, cfg_.model, 2, bt.next, next_actions, ids));

    Tensor y = Tensor::zeros({n * B, 1});
    for (std::int64_t i = 0; i < y.numel(); ++i)
      y[i] = bt.rewards[i] + cfg_.gamma * bt.not_done[i] * std::min(q1[i], q2[i]);
    return y;
  }

  // One critic round: TD regression step on both critics. Returns the loss,
  // or nullopt when the replay segment cannot fill a batch yet.
  std::optional<double> critic_update() {
    const auto ids = bundle_.live_ids();
    const std::string tag = roster_tag(ids);
    RngStream sampler = master_.split("sample", static_cast<std::uint64_t>(critic_rounds_));
    auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch), tag, sampler);
    if (!batch) return std::nullopt;

    BatchTensors bt = assemble(*batch, ids);
    const Tensor y = td_targets(bt, ids, critic_rounds_);
    const int B = bt.now.batch, n = bt.now.n_agents;

    Graph g;
    Bind bind{g, bundle_.online(), false, phase_ == Phase::FewShot ? &trainable_ : nullptr};
    const ParamLookup P = std::ref(bind);
    std::vector<NodeId> acts;
    for (const Tensor& a : bt.actions) acts.push_back(g.constant(a));
    NodeId q1 = value_pass(g, P, cfg_.model, 1, bt.now, acts, ids);
    NodeId q2 = value_pass(g, P, cfg_.model, 2, bt.now, acts, ids);
    NodeId target = g.constant(y);
    NodeId loss =
        g.scalar_mul(g.add(g.squared_error(q1, target), g.squared_error(q2, target)), 1.0 / (n * B));
    auto grads = g.backward(loss);
    AdamConfig ac;
    ac.lr = cfg_.lr_critic;
    apply_adam(bind, grads, ac, NetworkBundle::critic_side);
    critic_rounds_ += 1;
    return g.value(loss)[0];
  }

  // One actor round: deterministic-policy-gradient step through critic 1 with
  // per-agent action substitution, then the Polyak target update.
  double actor_update() {
    const auto ids = bundle_.live_ids();
    const std::string tag = roster_tag(ids);
    RngStream sampler = master_.split("actor_sample", static_cast<std::uint64_t>(actor_rounds_));
    auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch), tag, sampler);
    if (!batch) throw std::runtime_error("actor_update: replay segment not ready");

    BatchTensors bt = assemble(*batch, ids);
    const int B = bt.now.batch, n = bt.now.n_agents;
    RngStream noise = master_.split("actor", static_cast<std::uint64_t>(actor_rounds_));

    Graph g;
    Bind bind{g, bundle_.online(), false, phase_ == Phase::FewShot ? &trainable_ : nullptr};
    const ParamLookup P = std::ref(bind);
    NodeId total = -1;
    for (int i = 0; i < n; ++i) {
      ViewBatch vi = single_view(bt.now, i);
      NodeId logits = policy_pass(g, P, cfg_.model, vi, ids);
      NodeId ai = g.gumbel_softmax(logits, noise.gumbel_tensor({B, cfg_.model.d_act}), cfg_.gumbel_temp);
      std::vector<NodeId> acts;
      for (int j = 0; j < n; ++j) acts.push_back(j == i ? ai : g.constant(bt.actions[static_cast<std::size_t>(j)]));
      NodeId qi = value_pass(g, P, cfg_.model, 1, vi, acts, ids);
      NodeId s = g.sum(qi);
      total = i == 0 ? s : g.add(total, s);
    }
    NodeId loss = g.scalar_mul(total, -1.0 / (n * B));
    auto grads = g.backward(loss);
    AdamConfig ac;
    ac.lr = cfg_.lr_actor;
    apply_adam(bind, grads, ac, NetworkBundle::actor_side);

    polyak_update(bundle_.target(), bundle_.online(), cfg_.tau,
                  phase_ == Phase::FewShot ? &trainable_ : nullptr);
    actor_rounds_ += 1;
    return g.value(loss)[0];
  }

  // --- acting -------------------------------------------------------------------

  // Gumbel-max sampling from the online policy: argmax(logits + Gumbel noise)
  // draws exactly from the softmax categorical.
  std::vector<int> behavior_actions(const std::vector<std::vector<double>>& obs, std::int64_t step) {
    const auto ids = bundle_.live_ids();
    const Tensor logits = policy_logits(bundle_.online(), obs, ids);
    RngStream noise = master_.split("explore", static_cast<std::uint64_t>(step));
    const Tensor gum = noise.gumbel_tensor({static_cast<int>(ids.size()), cfg_.model.d_act});
    std::vector<int> actions;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      int best = 0;
      double best_v = logits.at2(static_cast<std::int64_t>(v), 0) / cfg_.gumbel_temp + gum.at2(static_cast<std::int64_t>(v), 0);
      for (int c = 1; c < cfg_.model.d_act; ++c) {
        const double val =
            logits.at2(static_cast<std::int64_t>(v), c) / cfg_.gumbel_temp + gum.at2(static_cast<std::int64_t>(v), c);
        if (val > best_v) {
          best_v = val;
          best = c;
        }
      }
      actions.push_back(best);
    }
    return actions;
  }

  std::vector<int> greedy_actions(ParameterStore& store, const std::vector<std::vector<double>>& obs,
                                  const std::vector<int>& ids) {
    const Tensor logits = policy_logits(store, obs, ids);
    std::vector<int> actions;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      int best = 0;
      for (int c = 1; c < cfg_.model.d_act; ++c)
        if (logits.at2(static_cast<std::int64_t>(v), c) > logits.at2(static_cast<std::int64_t>(v), best)) best = c;
      actions.push_back(best);
    }
    return actions;
  }

  Tensor policy_logits(ParameterStore& store, const std::vector<std::vector<double>>& obs,
                       const std::vector<int>& ids) {
    ViewBatch vb = behavior_views(obs, cfg_.model.obs_comp, ids);
    Graph g;
    Bind bind{g, store, /*frozen_all=*/true};
    return g.value(policy_pass(g, std::ref(bind), cfg_.model, vb, ids));
  }

  // --- episode loop ----------------------------------------------------------

  std::vector<RosterEntry> roster_entries() const {
    std::vector<RosterEntry> r;
    for (const AgentInfo& a : bundle_.roster())
      if (a.live) r.push_back(RosterEntry{a.id, a.color});
    return r;
  }

  EpisodeRecord run_episode() {
    const int ep = episodes_run_;
    const auto ids = bundle_.live_ids();
    const std::string tag = roster_tag(ids);
    RngStream env_rng = master_.split("env", static_cast<std::uint64_t>(ep));
    env_.reset(roster_entries(), env_rng);
    auto obs = env_.observe();

    EpisodeRecord rec;
    rec.episode = ep;
    rec.roster_tag = tag;
    rec.seed = seed_;
    rec.per_agent_reward.assign(ids.size(), 0.0);

    const int stride = cfg_.update_stride();
    bool done = false;
    while (!done) {
      const std::vector<int> act_ids = behavior_actions(obs, total_steps_);
      const auto res = env_.step(act_ids);
      auto next_obs = env_.observe();

      Transition t;
      t.tag = tag;
      t.obs = obs;
      t.next_obs = next_obs;
      t.rew = res.rewards;
      // Episodes end by time limit only; neither task has terminal states.
      // A truncated final step is not an absorbing state, so the stored done
      // flag stays false and TD targets keep bootstrapping through it.
      t.done = false;
      for (std::size_t v = 0; v < act_ids.size(); ++v) {
        std::vector<double> one_hot(static_cast<std::size_t>(cfg_.model.d_act), 0.0);
        one_hot[static_cast<std::size_t>(act_ids[v])] = 1.0;
        t.act.push_back(std::move(one_hot));
      }
      replay_.push(std::move(t));

      for (std::size_t v = 0; v < res.rewards.size(); ++v) rec.per_agent_reward[v] += res.rewards[v];
      rec.touches += res.touches;
      obs = std::move(next_obs);
      done = res.done;
      total_steps_ += 1;

      if (total_steps_ % stride == 0) {
        if (auto closs = critic_update()) {
          rec.critic_loss = *closs;
          if (critic_rounds_ % cfg_.actor_every == 0) rec.actor_loss = actor_update();
        }
      }
    }

    double sum = 0.0;
    for (double v : rec.per_agent_reward) sum += v;
    rec.mean_reward = sum / static_cast<double>(rec.per_agent_reward.size());
    episodes_run_ += 1;
    return rec;
  }

  // Greedy evaluation on fresh environments; mutates no training state.
  EvalRecord evaluate(int episodes, std::uint64_t eval_seed) {
    const auto ids = bundle_.live_ids();
    EvalRecord rec;
    rec.roster_tag = roster_tag(ids);
    rec.seed = seed_;
    rec.per_agent_reward.assign(ids.size(), 0.0);
    World world(cfg_.env);
    RngStream eval_master(eval_seed);
    for (int e = 0; e < episodes; ++e) {
      RngStream er = eval_master.split("eval", static_cast<std::uint64_t>(e));
      world.reset(roster_entries(), er);
      auto obs = world.observe();
      bool done = false;
      while (!done) {
        const auto acts = greedy_actions(bundle_.online(), obs, ids);
        const auto res = world.step(acts);
        for (std::size_t v = 0; v < res.rewards.size(); ++v) rec.per_agent_reward[v] += res.rewards[v];
        rec.mean_touches += res.touches;
        obs = world.observe();
        done = res.done;
      }
    }
    if (episodes > 0) {
      for (double& v : rec.per_agent_reward) v /= episodes;
      rec.mean_touches /= episodes;
    }
    double sum = 0.0;
    for (double v : rec.per_agent_reward) sum += v;
    rec.mean_reward = ids.empty() ? 0.0 : sum / static_cast<double>(ids.size());
    return rec;
  }

 private:
  TrainConfig cfg_;
  NetworkBundle bundle_;
  ReplayBuffer replay_;
  World env_;
  std::uint64_t seed_;
  RngStream master_;
  Phase phase_ = Phase::Regular;
  std::set<std::string> trainable_;
  std::int64_t total_steps_ = 0;
  std::int64_t critic_rounds_ = 0;
  std::int64_t actor_rounds_ = 0;
  int episodes_run_ = 0;
};

// Greedy evaluation with per-role policies from different bundles: predators
// ("green") act from `pred`, prey ("red") from `prey`. Both bundles must hold
// every live agent of the shared roster.
inline EvalRecord evaluate_paired(NetworkBundle& pred, NetworkBundle& prey, const TrainConfig& cfg,
                                  int episodes, std::uint64_t eval_seed) {
  const auto ids = pred.live_ids();
  if (ids != prey.live_ids())
    throw std::invalid_argument("evaluate_paired: checkpoints disagree on the live roster");
  std::vector<RosterEntry> roster;
  for (const AgentInfo& a : pred.roster())
    if (a.live) roster.push_back(RosterEntry{a.id, a.color});

  EvalRecord rec;
  rec.roster_tag = roster_tag(ids);
  rec.seed = eval_seed;
  rec.per_agent_reward.assign(ids.size(), 0.0);
  World world(cfg.env);
  RngStream eval_master(eval_seed);

  auto greedy_rows = [&](NetworkBundle& b, const std::vector<std::vector<double>>& obs) {
    ViewBatch vb = Trainer::behavior_views(obs, cfg.model.obs_comp, ids);
    Graph g;
    Bind bind{g, b.online(), true};
    return g.value(policy_pass(g, std::ref(bind), cfg.model, vb, ids));
  };

  for (int e = 0; e < episodes; ++e) {
    RngStream er = eval_master.split("eval", static_cast<std::uint64_t>(e));
    world.reset(roster, er);
    auto obs = world.observe();
    bool done = false;
    while (!done) {
      const Tensor lp = greedy_rows(pred, obs);
      const Tensor lq = greedy_rows(prey, obs);
      std::vector<int> acts;
      for (std::size_t v = 0; v < ids.size(); ++v) {
        const Tensor& l = roster[v].color == "red" ? lq : lp;
        int best = 0;
        for (int c = 1; c < cfg.model.d_act; ++c)
          if (l.at2(static_cast<std::int64_t>(v), c) > l.at2(static_cast<std::int64_t>(v), best)) best = c;
        acts.push_back(best);
      }
      const auto res = world.step(acts);
      for (std::size_t v = 0; v < res.rewards.size(); ++v) rec.per_agent_reward[v] += res.rewards[v];
      rec.mean_touches += res.touches;
      obs = world.observe();
      done = res.done;
    }
  }
  if (episodes > 0) {
    for (double& v : rec.per_agent_reward) v /= episodes;
    rec.mean_touches /= episodes;
  }
  double sum = 0.0;
  for (double v : rec.per_agent_reward) sum += v;
  rec.mean_reward = ids.empty() ? 0.0 : sum / static_cast<double>(ids.size());
  return rec;
}

}  // namespace dynamarl
