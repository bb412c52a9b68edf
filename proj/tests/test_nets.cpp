#include "dynamarl/checkpoint.hpp"
#include "dynamarl/gradcheck.hpp"
#include "dynamarl/nets.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace dynamarl;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.obs_comp = 4;
  c.d_e = 3;
  c.K = 2;
  c.heads = 2;
  c.token_hidden = 6;
  c.token_dim = 6;
  c.value_dim = 8;
  c.policy_dim = 8;
  c.block_hidden = 5;
  return c;
}

NetworkBundle make_bundle(const ModelConfig& cfg, std::uint64_t seed, int n_green, int n_red) {
  NetworkBundle b(cfg, seed);
  int id = 0;
  for (int i = 0; i < n_green; ++i) b.add_agent(id++, "green");
  for (int i = 0; i < n_red; ++i) b.add_agent(id++, "red");
  return b;
}

ViewBatch random_views(RngStream& r, const ModelConfig& cfg, const std::vector<int>& ids, int landmarks, int batch,
                       const std::vector<int>& view_agents) {
  ViewBatch vb;
  vb.batch = batch;
  vb.n_agents = static_cast<int>(ids.size());
  vb.tokens = vb.n_agents + landmarks;
  for (int id : view_agents) {
    vb.view_agent_ids.push_back(id);
    const auto pos = std::find(ids.begin(), ids.end(), id) - ids.begin();
    vb.view_self_pos.push_back(static_cast<int>(pos));
  }
  vb.obs = r.uniform_tensor({static_cast<int>(view_agents.size()) * batch * vb.tokens, cfg.obs_comp}, -1.0, 1.0);
  return vb;
}

std::vector<NodeId> constant_actions(Graph& g, RngStream& r, const ModelConfig& cfg, int n, int batch) {
  std::vector<NodeId> acts;
  for (int i = 0; i < n; ++i) {
    Tensor a = Tensor::zeros({batch, cfg.d_act});
    for (int b = 0; b < batch; ++b) a.at2(b, static_cast<int>(r.uniform_int(cfg.d_act))) = 1.0;
    acts.push_back(g.constant(a));
  }
  return acts;
}

// Plain-loop evaluation of one candidate block at one feature row.
std::vector<double> block_oracle(const ParameterStore& s, const std::string& bp, const double* z, int feat,
                                 int hidden, int out) {
  const Tensor& w1 = s.at(bp + ".w1").value;
  const Tensor& b1 = s.at(bp + ".b1").value;
  const Tensor& w2 = s.at(bp + ".w2").value;
  const Tensor& b2 = s.at(bp + ".b2").value;
  std::vector<double> u(static_cast<std::size_t>(hidden));
  for (int h = 0; h < hidden; ++h) {
    double acc = b1[h];
    for (int f = 0; f < feat; ++f) acc += z[f] * w1.at2(f, h);
    u[static_cast<std::size_t>(h)] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> y(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double acc = b2[o];
    for (int h = 0; h < hidden; ++h) acc += u[static_cast<std::size_t>(h)] * w2.at2(h, o);
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

std::vector<double> softmax_oracle(const Tensor& logits) {
  std::vector<double> p(static_cast<std::size_t>(logits.numel()));
  double mx = logits[0];
  for (std::int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < logits.numel(); ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

TEST_CASE("ensemble head equals the explicit mixing loop") {
  // selector-weighted block average vs a from-scratch loop, 1000 inputs
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 99, 2, 2);
  RngStream r(4242);

  const int V = 4, B = 250;  // 1000 feature rows total
  auto ids = bundle.live_ids();
  ViewBatch vb = random_views(r, cfg, ids, 2, B, ids);
  Tensor Z = r.uniform_tensor({V * B, cfg.value_dim}, -1.0, 1.0);

  Graph g;
  Bind bind{g, bundle.online()};
  NodeId q = ensemble_forward(g, std::ref(bind), cfg, "critic1", "psi1", g.constant(Z), vb, 1);

  // give the selectors distinct values so the mixing is non-trivial
  for (int v = 0; v < V; ++v) {
    auto& psi = bundle.online().at("agent" + std::to_string(ids[static_cast<std::size_t>(v)]) + ".psi1").value;
    psi[0] = 0.3 * v - 0.5;
    psi[1] = 0.1 + 0.2 * v;
  }
  Graph g2;
  Bind bind2{g2, bundle.online()};
  NodeId q2 = ensemble_forward(g2, std::ref(bind2), cfg, "critic1", "psi1", g2.constant(Z), vb, 1);

  for (int v = 0; v < V; ++v) {
    const Tensor& psi = bundle.online().at("agent" + std::to_string(ids[static_cast<std::size_t>(v)]) + ".psi1").value;
    auto alpha = softmax_oracle(psi);
    for (int b = 0; b < B; ++b) {
      const double* z = Z.data() + (static_cast<std::int64_t>(v) * B + b) * cfg.value_dim;
      double expect = 0.0;
      for (int k = 0; k < cfg.K; ++k) {
        auto y = block_oracle(bundle.online(), "critic1.block" + std::to_string(k), z, cfg.value_dim,
                              cfg.block_hidden, 1);
        expect += alpha[static_cast<std::size_t>(k)] * y[0];
      }
      REQUIRE(g2.value(q2)[v * B + b] == Catch::Approx(expect).margin(1e-12));
    }
  }

  // policy-side mixing with 5 outputs, same oracle
  Tensor Zp = r.uniform_tensor({V * B, cfg.policy_dim}, -1.0, 1.0);
  Graph g3;
  Bind bind3{g3, bundle.online()};
  NodeId logits = ensemble_forward(g3, std::ref(bind3), cfg, "policy", "zeta", g3.constant(Zp), vb, cfg.d_act);
  for (int v = 0; v < V; ++v) {
    const Tensor& zeta = bundle.online().at("agent" + std::to_string(ids[static_cast<std::size_t>(v)]) + ".zeta").value;
    auto beta = softmax_oracle(zeta);
    for (int b = 0; b < std::min(B, 20); ++b) {
      const double* z = Zp.data() + (static_cast<std::int64_t>(v) * B + b) * cfg.policy_dim;
      std::vector<double> expect(static_cast<std::size_t>(cfg.d_act), 0.0);
      for (int k = 0; k < cfg.K; ++k) {
        auto y = block_oracle(bundle.online(), "policy.block" + std::to_string(k), z, cfg.policy_dim,
                              cfg.block_hidden, cfg.d_act);
        for (int o = 0; o < cfg.d_act; ++o) expect[static_cast<std::size_t>(o)] += beta[static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(o)];
      }
      for (int o = 0; o < cfg.d_act; ++o)
        REQUIRE(g3.value(logits).at2(v * B + b, o) == Catch::Approx(expect[static_cast<std::size_t>(o)]).margin(1e-12));
    }
  }
  REQUIRE(g.value(q).numel() == V * B);  // zero-selector run: finite and well-shaped
  REQUIRE(g.value(q).all_finite());
}

TEST_CASE("uniform selector mixes blocks equally; single block passes through") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 7, 1, 1);
  auto ids = bundle.live_ids();
  RngStream r(5);
  ViewBatch vb = random_views(r, cfg, ids, 2, 3, {ids[0]});
  Tensor Z = r.uniform_tensor({3, cfg.value_dim}, -1.0, 1.0);

  // psi stays at its zero init -> exact mean of the K blocks
  Graph g;
  Bind bind{g, bundle.online()};
  NodeId q = ensemble_forward(g, std::ref(bind), cfg, "critic1", "psi1", g.constant(Z), vb, 1);
  for (int b = 0; b < 3; ++b) {
    double mean = 0.0;
    for (int k = 0; k < cfg.K; ++k)
      mean += block_oracle(bundle.online(), "critic1.block" + std::to_string(k), Z.data() + b * cfg.value_dim,
                           cfg.value_dim, cfg.block_hidden, 1)[0] /
              cfg.K;
    REQUIRE(g.value(q)[b] == Catch::Approx(mean).margin(1e-12));
  }

  // K=1: the head IS the single block
  ModelConfig cfg1 = tiny_config();
  cfg1.K = 1;
  NetworkBundle b1 = make_bundle(cfg1, 8, 1, 0);
  ViewBatch vb1 = random_views(r, cfg1, b1.live_ids(), 2, 2, b1.live_ids());
  Tensor Z1 = r.uniform_tensor({2, cfg1.value_dim}, -1.0, 1.0);
  Graph g1;
  Bind bind1{g1, b1.online()};
  NodeId q1 = ensemble_forward(g1, std::ref(bind1), cfg1, "critic1", "psi1", g1.constant(Z1), vb1, 1);
  for (int b = 0; b < 2; ++b) {
    const double expect = block_oracle(b1.online(), "critic1.block0", Z1.data() + b * cfg1.value_dim, cfg1.value_dim,
                                       cfg1.block_hidden, 1)[0];
    REQUIRE(g1.value(q1)[b] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("forward and backward succeed for every roster size with correct shapes") {
  ModelConfig cfg = tiny_config();
  for (int n = 1; n <= 16; ++n) {
    NetworkBundle bundle = make_bundle(cfg, 100 + static_cast<std::uint64_t>(n), (n + 1) / 2, n / 2);
    auto ids = bundle.live_ids();
    RngStream r(200 + static_cast<std::uint64_t>(n));
    const int B = 2;
    ViewBatch vb = random_views(r, cfg, ids, 2, B, ids);

    Graph g;
    Bind bind{g, bundle.online()};
    auto acts = constant_actions(g, r, cfg, n, B);
    NodeId q = value_pass(g, std::ref(bind), cfg, 1, vb, acts, ids);
    REQUIRE(g.value(q).dim(0) == n * B);
    REQUIRE(g.value(q).dim(1) == 1);
    REQUIRE(g.value(q).all_finite());
    auto grads = g.backward(g.sum(q));
    REQUIRE(grads[static_cast<std::size_t>(bind.ids.at("critic1.tok.w1"))].all_finite());

    Graph gp;
    Bind bindp{gp, bundle.online()};
    NodeId logits = policy_pass(gp, std::ref(bindp), cfg, vb, ids);
    REQUIRE(gp.value(logits).dim(0) == n * B);
    REQUIRE(gp.value(logits).dim(1) == 5);
    auto pgrads = gp.backward(gp.sum(logits));
    REQUIRE(pgrads[static_cast<std::size_t>(bindp.ids.at("policy.attn.wq"))].all_finite());

    // single-view execution pass: exactly 5 logits
    ViewBatch single = random_views(r, cfg, ids, 2, 1, {ids[0]});
    Graph ge;
    Bind binde{ge, bundle.online()};
    NodeId l1 = policy_pass(ge, std::ref(binde), cfg, single, ids);
    REQUIRE(ge.value(l1).numel() == 5);
  }
}

TEST_CASE("centralized critic reacts to other agents' actions") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 31, 2, 1);
  auto ids = bundle.live_ids();
  RngStream r(6);
  ViewBatch vb = random_views(r, cfg, ids, 2, 1, {ids[0]});

  auto q_with_a2 = [&](int action_of_agent2) {
    Graph g;
    Bind bind{g, bundle.online()};
    std::vector<NodeId> acts;
    for (int j = 0; j < 3; ++j) {
      Tensor a = Tensor::zeros({1, cfg.d_act});
      a[j == 1 ? action_of_agent2 : 0] = 1.0;
      acts.push_back(g.constant(a));
    }
    NodeId q = value_pass(g, std::ref(bind), cfg, 1, vb, acts, ids);
    return g.value(q)[0];
  };
  REQUIRE(q_with_a2(1) != q_with_a2(3));
}

TEST_CASE("permuting other agents leaves q1 unchanged only under tied embeddings") {
  ModelConfig cfg = tiny_config();
  const int N = 4, L = 2, T = N + L;

  auto probe = [&](NetworkBundle& bundle, bool tie_embeddings, std::uint64_t draw) {
    if (tie_embeddings) {
      const Tensor& e0 = bundle.online().at("embed.agent0").value;
      for (int id = 1; id < N; ++id) bundle.online().at("embed.agent" + std::to_string(id)).value = e0;
    }
    auto ids = bundle.live_ids();
    RngStream r(9000 + draw);
    ViewBatch vb = random_views(r, cfg, ids, L, 1, {ids[0]});
    std::vector<Tensor> actions;
    for (int j = 0; j < N; ++j) {
      Tensor a = Tensor::zeros({1, cfg.d_act});
      a[static_cast<std::int64_t>(r.uniform_int(cfg.d_act))] = 1.0;
      actions.push_back(a);
    }

    auto eval = [&](const std::vector<int>& slot_of) {
      // slot_of[j] = which original agent's (obs, action) sits in token slot j
      ViewBatch pv = vb;
      for (int j = 0; j < N; ++j)
        for (int c = 0; c < cfg.obs_comp; ++c)
          pv.obs[static_cast<std::int64_t>(j) * cfg.obs_comp + c] =
              vb.obs[static_cast<std::int64_t>(slot_of[static_cast<std::size_t>(j)]) * cfg.obs_comp + c];
      Graph g;
      Bind bind{g, bundle.online()};
      std::vector<NodeId> acts;
      for (int j = 0; j < N; ++j)
        acts.push_back(g.constant(actions[static_cast<std::size_t>(slot_of[static_cast<std::size_t>(j)])]));
      NodeId q = value_pass(g, std::ref(bind), cfg, 1, pv, acts, ids);
      return g.value(q)[0];
    };

    const std::vector<int> identity{0, 1, 2, 3};
    const std::vector<int> swapped{0, 2, 1, 3};  // exchange agents 2 and 3, agent 1 fixed
    return std::pair{eval(identity), eval(swapped)};
  };

  SECTION("tied embeddings: invariant") {
    for (std::uint64_t draw = 0; draw < 10; ++draw) {
      NetworkBundle bundle = make_bundle(cfg, 700 + draw, 2, 2);
      auto [before, after] = probe(bundle, true, draw);
      REQUIRE(std::abs(before - after) < 1e-10);
    }
  }

  SECTION("distinct embeddings: sensitive in at least 95 of 100 draws") {
    int changed = 0;
    for (std::uint64_t draw = 0; draw < 100; ++draw) {
      NetworkBundle bundle = make_bundle(cfg, 1300 + draw, 2, 2);
      auto [before, after] = probe(bundle, false, draw);
      if (std::abs(before - after) > 1e-12) ++changed;
    }
    REQUIRE(changed >= 95);
  }
  (void)T;
}

TEST_CASE("polyak update arithmetic and restriction") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 55, 1, 1);

  // tau=0: bit identical to before
  const std::uint64_t before = bundle.target().checksum_all();
  for (auto& [name, p] : bundle.online())
    for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value[i] += 0.25;
  polyak_update(bundle.target(), bundle.online(), 0.0);
  REQUIRE(bundle.target().checksum_all() == before);

  // tau=1: exact copy
  polyak_update(bundle.target(), bundle.online(), 1.0);
  REQUIRE(bundle.target().checksum_all() == bundle.online().checksum_all());

  // tau=7e-5 moves a zero target toward a unit online weight by exactly tau
  bundle.target().at("critic1.tok.w1").value = Tensor::zeros(bundle.online().at("critic1.tok.w1").value.shape());
  bundle.online().at("critic1.tok.w1").value =
      Tensor::full(bundle.online().at("critic1.tok.w1").value.shape(), 1.0);
  polyak_update(bundle.target(), bundle.online(), 7e-5);
  REQUIRE(bundle.target().at("critic1.tok.w1").value[0] == Catch::Approx(7e-5).epsilon(1e-15));

  // restricted update only touches the named subset
  const std::uint64_t tok_before = checksum(bundle.target().at("critic2.tok.w1").value);
  std::set<std::string> only{"critic1.tok.w2"};
  polyak_update(bundle.target(), bundle.online(), 0.5, &only);
  REQUIRE(checksum(bundle.target().at("critic2.tok.w1").value) == tok_before);

  // contraction: one step never increases |target - online|
  polyak_update(bundle.target(), bundle.online(), 7e-5);
  for (auto& [name, tp] : bundle.target()) {
    const Tensor& ov = bundle.online().at(name).value;
    for (std::int64_t i = 0; i < tp.value.numel(); ++i) {
      const double gap_before = std::abs(tp.value[i] - ov[i]);
      const double moved = (1.0 - 7e-5) * tp.value[i] + 7e-5 * ov[i];
      REQUIRE(std::abs(moved - ov[i]) <= gap_before + 1e-18);
    }
  }
}

TEST_CASE("add_agent allocates exactly the adaptation parameters") {
  ModelConfig cfg = tiny_config();
  cfg.d_e = 8;  // the paper-shape case: 2 + 2 + 2 + 8 = 14 scalars
  NetworkBundle bundle = make_bundle(cfg, 77, 2, 2);

  const std::int64_t scalars_before = bundle.online().total_scalars();
  std::uint64_t shared_before = 0;
  for (const auto& [name, p] : bundle.online())
    if (!NetworkBundle::per_agent_name(name))
      shared_before ^= checksum(p.value);

  bundle.add_agent(4, "green");
  REQUIRE(bundle.online().total_scalars() - scalars_before == 14);

  std::uint64_t shared_after = 0;
  for (const auto& [name, p] : bundle.online())
    if (!NetworkBundle::per_agent_name(name))
      shared_after ^= checksum(p.value);
  REQUIRE(shared_after == shared_before);

  REQUIRE_THROWS_AS(bundle.add_agent(4, "green"), std::invalid_argument);

  auto fs = bundle.few_shot_trainable({4});
  REQUIRE(fs.size() == 4);
  std::int64_t fs_scalars = 0;
  for (const auto& name : fs) fs_scalars += bundle.online().at(name).value.numel();
  REQUIRE(fs_scalars == 14);

  // type hint copies selector values, not the embedding
  bundle.online().at("agent0.zeta").value[0] = 1.5;
  bundle.add_agent(9, "green", 0);
  REQUIRE(bundle.online().at("agent9.zeta").value[0] == 1.5);
  REQUIRE(checksum(bundle.online().at("embed.agent9").value) != checksum(bundle.online().at("embed.agent0").value));
}

TEST_CASE("remove_agent retains parameters and revival restores them") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 88, 2, 1);
  bundle.online().at("agent2.psi1").value[1] = -0.75;
  const std::uint64_t sel = checksum(bundle.online().at("agent2.psi1").value);
  const std::uint64_t others = checksum(bundle.online().at("agent0.psi1").value);

  bundle.remove_agent(2);
  REQUIRE(bundle.live_ids() == std::vector<int>{0, 1});
  REQUIRE(checksum(bundle.online().at("agent0.psi1").value) == others);
  REQUIRE_THROWS_AS(bundle.remove_agent(2), std::invalid_argument);
  REQUIRE_THROWS_AS(bundle.remove_agent(42), std::invalid_argument);

  // forwards with the reduced roster succeed
  RngStream r(3);
  auto ids = bundle.live_ids();
  ViewBatch vb = random_views(r, cfg, ids, 2, 1, ids);
  Graph g;
  Bind bind{g, bundle.online()};
  NodeId logits = policy_pass(g, std::ref(bind), cfg, vb, ids);
  REQUIRE(g.value(logits).dim(0) == 2);

  bundle.add_agent(2, "red");  // revival
  REQUIRE(checksum(bundle.online().at("agent2.psi1").value) == sel);
  REQUIRE(bundle.live_ids() == std::vector<int>{0, 1, 2});
}

TEST_CASE("unknown agent id fails the forward pass") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 66, 1, 1);
  RngStream r(2);
  std::vector<int> bogus{0, 77};
  ViewBatch vb = random_views(r, cfg, bogus, 2, 1, {0});
  Graph g;
  Bind bind{g, bundle.online()};
  REQUIRE_THROWS_AS(policy_pass(g, std::ref(bind), cfg, vb, bogus), std::invalid_argument);
}

TEST_CASE("few-shot binding freezes everything but the joiner") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 11, 2, 2);
  bundle.add_agent(4, "green");
  auto fs = bundle.few_shot_trainable({4});
  auto ids = bundle.live_ids();
  RngStream r(12);
  ViewBatch vb = random_views(r, cfg, ids, 2, 2, ids);

  Graph g;
  Bind bind{g, bundle.online()};
  bind.trainable = &fs;
  auto acts = constant_actions(g, r, cfg, static_cast<int>(ids.size()), 2);
  NodeId q = value_pass(g, std::ref(bind), cfg, 1, vb, acts, ids);
  auto grads = g.backward(g.sum(q));

  for (const auto& [name, id] : bind.ids) {
    const Tensor& grad = grads[static_cast<std::size_t>(id)];
    if (fs.count(name)) {
      if (name.find(".zeta") != std::string::npos) continue;  // policy selector: not in a value pass
      REQUIRE(grad.numel() > 0);
      bool nonzero = false;
      for (std::int64_t i = 0; i < grad.numel(); ++i) nonzero = nonzero || grad[i] != 0.0;
      REQUIRE(nonzero);
    } else {
      REQUIRE(grad.empty());  // frozen parameters enter as constants
    }
  }
}

TEST_CASE("finite differences confirm the full critic and actor losses") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 21, 2, 1);
  auto ids = bundle.live_ids();
  const int N = static_cast<int>(ids.size()), B = 2, L = 2;
  RngStream r(77);
  ViewBatch vb = random_views(r, cfg, ids, L, B, ids);

  // frozen data: actions, TD targets, gumbel noise
  std::vector<Tensor> batch_actions;
  for (int j = 0; j < N; ++j) {
    Tensor a = Tensor::zeros({B, cfg.d_act});
    for (int b = 0; b < B; ++b) a.at2(b, static_cast<int>(r.uniform_int(cfg.d_act))) = 1.0;
    batch_actions.push_back(a);
  }
  Tensor y = r.uniform_tensor({N * B, 1}, -1.0, 1.0);
  std::vector<Tensor> noise;
  for (int j = 0; j < N; ++j) noise.push_back(r.gumbel_tensor({B, cfg.d_act}));

  auto names = bundle.online().names();
  std::vector<Tensor> init;
  for (const auto& n : names) init.push_back(bundle.online().at(n).value);

  auto lookup_from = [&](Graph& g, const std::vector<NodeId>& p) {
    return [&g, &p, &names](const std::string& want) -> NodeId {
      const auto it = std::lower_bound(names.begin(), names.end(), want);
      if (it == names.end() || *it != want) throw std::invalid_argument("missing param " + want);
      return p[static_cast<std::size_t>(it - names.begin())];
    };
  };

  SECTION("critic TD loss") {
    double err = grad_check(
        [&](Graph& g, const std::vector<NodeId>& p) {
          auto P = lookup_from(g, p);
          std::vector<NodeId> acts;
          for (const Tensor& a : batch_actions) acts.push_back(g.constant(a));
          NodeId q1 = value_pass(g, P, cfg, 1, vb, acts, ids);
          NodeId q2 = value_pass(g, P, cfg, 2, vb, acts, ids);
          NodeId target = g.constant(y);
          NodeId loss = g.add(g.squared_error(q1, target), g.squared_error(q2, target));
          return g.scalar_mul(loss, 1.0 / (N * B));
        },
        init, 1e-5, 1e-6);
    REQUIRE(err < 1e-4);
  }

  SECTION("actor loss with substituted differentiable actions") {
    double err = grad_check(
        [&](Graph& g, const std::vector<NodeId>& p) {
          auto P = lookup_from(g, p);
          NodeId total = -1;
          for (int i = 0; i < N; ++i) {
            ViewBatch single;
            single.batch = B;
            single.n_agents = N;
            single.tokens = N + L;
            single.view_agent_ids = {ids[static_cast<std::size_t>(i)]};
            single.view_self_pos = {i};
            single.obs = Tensor::zeros({B * single.tokens, cfg.obs_comp});
            for (int b = 0; b < B; ++b)
              for (int j = 0; j < single.tokens; ++j)
                for (int c = 0; c < cfg.obs_comp; ++c)
                  single.obs[(static_cast<std::int64_t>(b) * single.tokens + j) * cfg.obs_comp + c] =
                      vb.obs[((static_cast<std::int64_t>(i) * B + b) * single.tokens + j) * cfg.obs_comp + c];
            NodeId logits = policy_pass(g, P, cfg, single, ids);
            NodeId ai = g.gumbel_softmax(logits, noise[static_cast<std::size_t>(i)], 1.0);
            std::vector<NodeId> acts;
            for (int j = 0; j < N; ++j)
              acts.push_back(j == i ? ai : g.constant(batch_actions[static_cast<std::size_t>(j)]));
            NodeId qi = value_pass(g, P, cfg, 1, single, acts, ids);
            NodeId s = g.sum(qi);
            total = i == 0 ? s : g.add(total, s);
          }
          return g.scalar_mul(total, -1.0 / (N * B));
        },
        init, 1e-5, 1e-6);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("checkpoint round-trips the bundle byte-exactly") {
  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 123, 2, 1);
  bundle.remove_agent(1);
  bundle.add_agent(7, "red", 0, 42);
  // give one parameter live adam state
  Param& p = bundle.online().at("critic1.tok.w1");
  AdamConfig acfg;
  adam_step(p.value, Tensor::full(p.value.shape(), 0.01), p.adam, acfg);

  const std::string path = "/tmp/dynamarl_test_ckpt.bin";
  save_checkpoint(path, bundle, Task::PredatorPrey, 111, 222);
  auto loaded = load_checkpoint(path);

  REQUIRE(loaded.meta.task == Task::PredatorPrey);
  REQUIRE(loaded.meta.rng_base == 111);
  REQUIRE(loaded.meta.rng_state == 222);
  REQUIRE(loaded.meta.bundle_seed == 123);
  REQUIRE(loaded.bundle.online().checksum_all() == bundle.online().checksum_all());
  REQUIRE(loaded.bundle.target().checksum_all() == bundle.target().checksum_all());
  REQUIRE(loaded.bundle.live_ids() == bundle.live_ids());
  REQUIRE(loaded.bundle.roster().size() == bundle.roster().size());
  const AgentInfo* a7 = loaded.bundle.find(7);
  REQUIRE(a7 != nullptr);
  REQUIRE(a7->joined_episode == 42);
  REQUIRE(a7->color == "red");
  const Param& lp = loaded.bundle.online().at("critic1.tok.w1");
  REQUIRE(lp.adam.t == 1);
  REQUIRE(checksum(lp.adam.m) == checksum(p.adam.m));

  // a second save of the loaded bundle produces identical bytes
  const std::string path2 = "/tmp/dynamarl_test_ckpt2.bin";
  save_checkpoint(path2, loaded.bundle, loaded.meta.task, loaded.meta.rng_base, loaded.meta.rng_state);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(b1 == b2);
  REQUIRE_FALSE(b1.empty());

  // diff: flip one scalar, only that name reported
  NetworkBundle other = load_checkpoint(path).bundle;
  other.online().at("agent7.psi2").value[0] += 1e-9;
  auto diff = diff_param_names(bundle.online(), other.online());
  REQUIRE(diff == std::vector<std::string>{"agent7.psi2"});
}

TEST_CASE("checkpoint loading rejects damaged files") {
  REQUIRE_THROWS_AS(load_checkpoint("/tmp/dynamarl_no_such_file.bin"), std::runtime_error);

  ModelConfig cfg = tiny_config();
  NetworkBundle bundle = make_bundle(cfg, 5, 1, 1);
  const std::string path = "/tmp/dynamarl_test_damage.bin";
  save_checkpoint(path, bundle, Task::FindingHome, 1, 2);

  // flip the magic
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.put('X');
  }
  REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("bad magic"));

  // truncate a valid file
  save_checkpoint(path, bundle, Task::FindingHome, 1, 2);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
}
