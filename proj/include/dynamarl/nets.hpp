#pragma once

// The actor-critic architecture: shared token MLPs, agent-ID embeddings,
// multi-head self-attention extractors, and ensemble heads mixed by per-agent
// selectors. All forwards are batched: a "view" is one agent's perspective,
// and V views of B transitions with T tokens each become a single
// [V*B*T, ...] row block so every layer is one (optionally grouped) GEMM.
//
// Row layout: row(v, b, j) = (v*B + b)*T + j, tokens ordered as the sorted
// live agents followed by the landmarks.

#include "dynamarl/graph.hpp"
#include "dynamarl/params.hpp"
#include "dynamarl/rng.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace dynamarl {

struct ModelConfig {
  int d_act = 5;        // discrete actions: left, right, up, down, stay
  int obs_comp = 4;     // width of one observation component
  int d_e = 8;          // agent-ID embedding dimension
  int K = 2;            // candidate blocks per ensemble head
  int heads = 2;        // attention heads
  int token_hidden = 32;
  int token_dim = 32;
  int value_dim = 64;   // value extractor output
  int policy_dim = 128; // policy extractor output
  int block_hidden = 64;
};

struct AgentInfo {
  int id = -1;
  std::string color;  // "green" | "red"
  bool live = false;
  int joined_episode = 0;
};

using ParamLookup = std::function<NodeId(const std::string&)>;

// Binds store parameters into a graph on first use. frozen_all makes every
// parameter a constant (target-network passes); a trainable set restricts
// gradients to a named subset (few-shot phase).
struct Bind {
  Graph& g;
  ParameterStore& store;
  bool frozen_all = false;
  const std::set<std::string>* trainable = nullptr;
  std::map<std::string, NodeId> ids;

  NodeId operator()(const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    Param& p = store.at(name);
    const bool rg = !frozen_all && (trainable ? trainable->count(name) != 0 : p.trainable);
    const NodeId id = rg ? g.leaf(p.value) : g.constant(p.value);
    ids.emplace(name, id);
    return id;
  }
};

// One Adam step for every bound parameter that required gradients and passes
// the side filter. Iteration order is the map order: deterministic.
inline void apply_adam(Bind& bind, const std::vector<Tensor>& grads, const AdamConfig& cfg,
                       const std::function<bool(const std::string&)>& side = nullptr) {
  for (auto& [name, id] : bind.ids) {
    if (!bind.g.requires_grad(id)) continue;
    if (side && !side(name)) continue;
    Param& p = bind.store.at(name);
    adam_step(p.value, grads[static_cast<std::size_t>(id)], p.adam, cfg);
  }
}

// Observation data for a set of views sharing one roster.
struct ViewBatch {
  int batch = 0;                    // B
  int n_agents = 0;                 // live agents N (first N token slots)
  int tokens = 0;                   // T = N + landmarks
  std::vector<int> view_agent_ids;  // agent id behind each view
  std::vector<int> view_self_pos;   // token index of each view's self token
  Tensor obs;                       // [V*B*T, obs_comp]
};

namespace detail {

inline std::vector<std::int32_t> token_gather_index(const ViewBatch& vb, int stride_per_entity) {
  const int V = static_cast<int>(vb.view_agent_ids.size());
  std::vector<std::int32_t> idx;
  idx.reserve(static_cast<std::size_t>(V) * vb.batch * vb.tokens);
  for (int v = 0; v < V; ++v)
    for (int b = 0; b < vb.batch; ++b)
      for (int j = 0; j < vb.tokens; ++j) {
        const int ent = j < vb.n_agents ? j : vb.n_agents;  // landmarks share one slot
        idx.push_back(static_cast<std::int32_t>(ent * stride_per_entity + (stride_per_entity == 1 ? 0 : b)));
      }
  return idx;
}

inline std::vector<std::int32_t> self_gather_index(const ViewBatch& vb) {
  const int V = static_cast<int>(vb.view_agent_ids.size());
  std::vector<std::int32_t> idx;
  idx.reserve(static_cast<std::size_t>(V) * vb.batch);
  for (int v = 0; v < V; ++v)
    for (int b = 0; b < vb.batch; ++b)
      idx.push_back(static_cast<std::int32_t>((static_cast<std::int64_t>(v) * vb.batch + b) * vb.tokens +
                                              vb.view_self_pos[static_cast<std::size_t>(v)]));
  return idx;
}

}  // namespace detail

// Shared feature extractor: token MLP (+ action slot for value nets), ID
// embedding concat, multi-head self-attention, output projection, self-token
// gather. `agent_actions` must hold one [B, d_act] node per live agent in
// sorted-id order for value extractors, and be empty for policy extractors.
// Returns Z: [V*B, out_dim].
inline NodeId extractor_forward(Graph& g, const ParamLookup& P, const ModelConfig& cfg,
                                const std::string& prefix, const ViewBatch& vb,
                                const std::vector<NodeId>& agent_actions,
                                const std::vector<int>& live_ids) {
  const int V = static_cast<int>(vb.view_agent_ids.size());
  const int N = vb.n_agents;
  if (static_cast<int>(live_ids.size()) != N)
    throw std::invalid_argument("extractor_forward: live id count disagrees with view batch");
  const bool with_actions = !agent_actions.empty();
  if (with_actions && static_cast<int>(agent_actions.size()) != N)
    throw std::invalid_argument("extractor_forward: need one action node per live agent");
  const int out_dim = prefix == "policy" ? cfg.policy_dim : cfg.value_dim;

  NodeId in = g.constant(vb.obs);
  if (with_actions) {
    std::vector<NodeId> blocks = agent_actions;
    blocks.push_back(g.constant(Tensor::zeros({vb.batch, cfg.d_act})));  // landmark action slot
    NodeId act_base = g.concat(blocks, 0);
    NodeId act = g.gather_rows(act_base, detail::token_gather_index(vb, vb.batch));
    in = g.concat({in, act}, 1);
  }

  NodeId h = g.relu(g.add(g.matmul(in, P(prefix + ".tok.w1")), P(prefix + ".tok.b1")));
  NodeId tok = g.relu(g.add(g.matmul(h, P(prefix + ".tok.w2")), P(prefix + ".tok.b2")));

  std::vector<NodeId> emb_rows;
  emb_rows.reserve(static_cast<std::size_t>(N) + 1);
  for (int id : live_ids) emb_rows.push_back(P("embed.agent" + std::to_string(id)));
  emb_rows.push_back(P("embed.landmark"));
  NodeId emb_base = g.concat(emb_rows, 0);
  NodeId emb = g.gather_rows(emb_base, detail::token_gather_index(vb, 1));

  NodeId x = g.concat({tok, emb}, 1);
  NodeId q = g.matmul(x, P(prefix + ".attn.wq"));
  NodeId k = g.matmul(x, P(prefix + ".attn.wk"));
  NodeId v = g.matmul(x, P(prefix + ".attn.wv"));

  const int head_dim = out_dim / cfg.heads;
  const int groups = V * vb.batch;
  std::vector<NodeId> head_outs;
  head_outs.reserve(static_cast<std::size_t>(cfg.heads));
  for (int hidx = 0; hidx < cfg.heads; ++hidx) {
    NodeId qh = g.slice(q, 1, hidx * head_dim, head_dim);
    NodeId kh = g.slice(k, 1, hidx * head_dim, head_dim);
    NodeId vh = g.slice(v, 1, hidx * head_dim, head_dim);
    NodeId scores = g.scalar_mul(g.matmul(qh, kh, false, true, groups), 1.0 / std::sqrt(head_dim));
    NodeId attn = g.softmax(scores);
    head_outs.push_back(g.matmul(attn, vh, false, false, groups));
  }
  NodeId pooled = cfg.heads == 1 ? head_outs[0] : g.concat(head_outs, 1);
  NodeId out = g.add(g.matmul(pooled, P(prefix + ".attn.wo")), P(prefix + ".attn.bo"));
  return g.gather_rows(out, detail::self_gather_index(vb));
}

// Ensemble head: K candidate blocks mixed by softmaxed per-agent selectors.
// Z: [V*B, feat] -> [V*B, out_dim].
inline NodeId ensemble_forward(Graph& g, const ParamLookup& P, const ModelConfig& cfg,
                               const std::string& block_prefix, const std::string& sel_suffix,
                               NodeId z, const ViewBatch& vb, int out_dim) {
  const int V = static_cast<int>(vb.view_agent_ids.size());
  NodeId ones = g.constant(Tensor::full({vb.batch, 1}, 1.0));
  std::vector<NodeId> mix_rows;
  mix_rows.reserve(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    NodeId sel = P("agent" + std::to_string(vb.view_agent_ids[static_cast<std::size_t>(v)]) + "." + sel_suffix);
    mix_rows.push_back(g.matmul(ones, g.softmax(sel)));  // [B, K]
  }
  NodeId mix = V == 1 ? mix_rows[0] : g.concat(mix_rows, 0);  // [V*B, K]

  NodeId acc = -1;
  for (int k = 0; k < cfg.K; ++k) {
    const std::string bp = block_prefix + ".block" + std::to_string(k);
    NodeId u = g.relu(g.add(g.matmul(z, P(bp + ".w1")), P(bp + ".b1")));
    NodeId y = g.add(g.matmul(u, P(bp + ".w2")), P(bp + ".b2"));  // [V*B, out_dim]
    NodeId term = g.mul(y, g.slice(mix, 1, k, 1));
    acc = k == 0 ? term : g.add(acc, term);
  }
  return acc;
}

// q_i for every view. critic is 1 or 2; selector ψ matches the critic.
inline NodeId value_pass(Graph& g, const ParamLookup& P, const ModelConfig& cfg, int critic,
                         const ViewBatch& vb, const std::vector<NodeId>& agent_actions,
                         const std::vector<int>& live_ids) {
  const std::string prefix = "critic" + std::to_string(critic);
  NodeId z = extractor_forward(g, P, cfg, prefix, vb, agent_actions, live_ids);
  return ensemble_forward(g, P, cfg, prefix, "psi" + std::to_string(critic), z, vb, 1);
}

// Logits for every view: [V*B, d_act].
inline NodeId policy_pass(Graph& g, const ParamLookup& P, const ModelConfig& cfg,
                          const ViewBatch& vb, const std::vector<int>& live_ids) {
  NodeId z = extractor_forward(g, P, cfg, "policy", vb, {}, live_ids);
  return ensemble_forward(g, P, cfg, "policy", "zeta", z, vb, cfg.d_act);
}

enum class Phase { Regular, FewShot };

// Online + target parameter stores, the roster, and the shared/per-agent
// partition that drives few-shot freezing.
class NetworkBundle {
 public:
  NetworkBundle(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    init_shared();
    target_sync_full();
  }

  // Restore from checkpointed state; stores arrive fully populated.
  NetworkBundle(ModelConfig cfg, std::uint64_t seed, std::vector<AgentInfo> roster, ParameterStore online,
                ParameterStore target)
      : cfg_(cfg), seed_(seed), online_(std::move(online)), target_(std::move(target)), roster_(std::move(roster)) {}

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore& online() { return online_; }
  const ParameterStore& online() const { return online_; }
  ParameterStore& target() { return target_; }
  const ParameterStore& target() const { return target_; }
  std::vector<AgentInfo>& roster() { return roster_; }
  const std::vector<AgentInfo>& roster() const { return roster_; }

  std::vector<int> live_ids() const {
    std::vector<int> ids;
    for (const auto& a : roster_)
      if (a.live) ids.push_back(a.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  const AgentInfo* find(int id) const {
    for (const auto& a : roster_)
      if (a.id == id) return &a;
    return nullptr;
  }

  void add_agent(int id, const std::string& color, int hint_from = -1, int episode = 0) {
    for (auto& a : roster_) {
      if (a.id != id) continue;
      if (a.live) throw std::invalid_argument("add_agent: id " + std::to_string(id) + " already live");
      a.live = true;  // revival keeps the frozen selectors and embedding
      a.joined_episode = episode;
      return;
    }
    const std::string tag = std::to_string(id);
    Tensor emb = init_tensor("embed.agent" + tag, {1, cfg_.d_e}, cfg_.d_e);
    Tensor zeros_k = Tensor::zeros({1, cfg_.K});
    Tensor zeta = zeros_k, psi1 = zeros_k, psi2 = zeros_k;
    if (hint_from >= 0) {
      const std::string h = std::to_string(hint_from);
      zeta = online_.at("agent" + h + ".zeta").value;
      psi1 = online_.at("agent" + h + ".psi1").value;
      psi2 = online_.at("agent" + h + ".psi2").value;
    }
    for (auto* store : {&online_, &target_}) {
      store->add("embed.agent" + tag, emb);
      store->add("agent" + tag + ".zeta", zeta);
      store->add("agent" + tag + ".psi1", psi1);
      store->add("agent" + tag + ".psi2", psi2);
    }
    roster_.push_back(AgentInfo{id, color, true, episode});
    std::sort(roster_.begin(), roster_.end(), [](const AgentInfo& a, const AgentInfo& b) { return a.id < b.id; });
  }

  void remove_agent(int id) {
    for (auto& a : roster_) {
      if (a.id != id) continue;
      if (!a.live) throw std::invalid_argument("remove_agent: id " + std::to_string(id) + " not live");
      a.live = false;
      return;
    }
    throw std::invalid_argument("remove_agent: unknown id " + std::to_string(id));
  }

  // Parameters trained during a few-shot phase: the joiners' selectors and
  // embedding rows, nothing else.
  std::set<std::string> few_shot_trainable(const std::vector<int>& new_ids) const {
    std::set<std::string> out;
    for (int id : new_ids) {
      if (!find(id) || !find(id)->live)
        throw std::invalid_argument("few_shot_trainable: id " + std::to_string(id) + " not live");
      const std::string tag = std::to_string(id);
      out.insert("embed.agent" + tag);
      out.insert("agent" + tag + ".zeta");
      out.insert("agent" + tag + ".psi1");
      out.insert("agent" + tag + ".psi2");
    }
    return out;
  }

  // Optimizer ownership: the critic optimizer steps both critics, the value
  // selectors, and every embedding row; the actor optimizer steps the policy
  // net and the policy selectors.
  static bool critic_side(const std::string& name) {
    if (name.rfind("critic", 0) == 0 || name.rfind("embed.", 0) == 0) return true;
    return name.find(".psi") != std::string::npos;
  }
  static bool actor_side(const std::string& name) { return !critic_side(name); }

  static bool per_agent_name(const std::string& name) {
    return name.rfind("agent", 0) == 0 || name.rfind("embed.agent", 0) == 0;
  }

  void target_sync_full() {
    target_ = ParameterStore();
    for (const auto& [name, p] : online_) target_.add(name, p.value);
  }

 private:
  void init_shared() {
    const int attn_in = cfg_.token_dim + cfg_.d_e;
    for (const std::string prefix : {std::string("critic1"), std::string("critic2"), std::string("policy")}) {
      const bool is_policy = prefix == "policy";
      const int in = is_policy ? cfg_.obs_comp : cfg_.obs_comp + cfg_.d_act;
      const int feat = is_policy ? cfg_.policy_dim : cfg_.value_dim;
      const int head_out = is_policy ? cfg_.d_act : 1;
      add_init(prefix + ".tok.w1", {in, cfg_.token_hidden}, in);
      add_init(prefix + ".tok.b1", {cfg_.token_hidden}, in);
      add_init(prefix + ".tok.w2", {cfg_.token_hidden, cfg_.token_dim}, cfg_.token_hidden);
      add_init(prefix + ".tok.b2", {cfg_.token_dim}, cfg_.token_hidden);
      add_init(prefix + ".attn.wq", {attn_in, feat}, attn_in);
      add_init(prefix + ".attn.wk", {attn_in, feat}, attn_in);
      add_init(prefix + ".attn.wv", {attn_in, feat}, attn_in);
      add_init(prefix + ".attn.wo", {feat, feat}, feat);
      add_init(prefix + ".attn.bo", {feat}, feat);
      for (int k = 0; k < cfg_.K; ++k) {
        const std::string bp = prefix + ".block" + std::to_string(k);
        add_init(bp + ".w1", {feat, cfg_.block_hidden}, feat);
        add_init(bp + ".b1", {cfg_.block_hidden}, feat);
        add_init(bp + ".w2", {cfg_.block_hidden, head_out}, cfg_.block_hidden);
        add_init(bp + ".b2", {head_out}, cfg_.block_hidden);
      }
    }
    add_init("embed.landmark", {1, cfg_.d_e}, cfg_.d_e);
  }

  Tensor init_tensor(const std::string& name, std::vector<int> shape, int fan_in) {
    RngStream stream = RngStream(seed_).split("init").split(name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return stream.uniform_tensor(std::move(shape), -bound, bound);
  }

  void add_init(const std::string& name, std::vector<int> shape, int fan_in) {
    online_.add(name, init_tensor(name, std::move(shape), fan_in));
  }

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ParameterStore online_, target_;
  std::vector<AgentInfo> roster_;
};

}  // namespace dynamarl
