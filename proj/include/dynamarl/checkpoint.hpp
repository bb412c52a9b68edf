#pragma once

// Self-describing binary checkpoint: model dims, roster, RNG stream, every
// named online parameter with its Adam state, and the target copies.
// Fixed-width little-endian fields; round-trips byte-exactly.

#include "dynamarl/env.hpp"
#include "dynamarl/nets.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace dynamarl {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace ckpt {

inline constexpr char kMagic[8] = {'D', 'M', 'R', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) put<std::int32_t>(os, t.dim(d));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline Tensor get_tensor(std::istream& is) {
  const int rank = get<std::uint8_t>(is);
  std::vector<int> shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) d = get<std::int32_t>(is);
  Tensor t = Tensor::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor");
  return t;
}

inline void put_store(std::ostream& os, const ParameterStore& store, bool with_adam) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, p] : store) {
    put_string(os, name);
    put_tensor(os, p.value);
    if (!with_adam) continue;
    const bool has = !p.adam.m.empty();
    put<std::uint8_t>(os, has ? 1 : 0);
    if (has) {
      put<std::int64_t>(os, p.adam.t);
      put_tensor(os, p.adam.m);
      put_tensor(os, p.adam.v);
    }
  }
}

inline ParameterStore get_store(std::istream& is, bool with_adam) {
  ParameterStore store;
  const auto n = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = get_string(is);
    store.add(name, get_tensor(is));
    if (!with_adam) continue;
    if (get<std::uint8_t>(is)) {
      Param& p = store.at(name);
      p.adam.t = get<std::int64_t>(is);
      p.adam.m = get_tensor(is);
      p.adam.v = get_tensor(is);
    }
  }
  return store;
}

}  // namespace ckpt

struct CheckpointData {
  std::uint64_t bundle_seed = 0;
  ModelConfig cfg;
  Task task = Task::FindingHome;
  std::vector<AgentInfo> roster;
  std::uint64_t rng_base = 0;
  std::uint64_t rng_state = 0;
};

inline void save_checkpoint(const std::string& path, const NetworkBundle& bundle, Task task,
                            std::uint64_t rng_base, std::uint64_t rng_state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(ckpt::kMagic, 8);
  ckpt::put<std::uint32_t>(os, ckpt::kVersion);
  ckpt::put<std::uint64_t>(os, bundle.seed());
  const ModelConfig& c = bundle.config();
  for (int v : {c.d_act, c.obs_comp, c.d_e, c.K, c.heads, c.token_hidden, c.token_dim, c.value_dim, c.policy_dim,
                c.block_hidden})
    ckpt::put<std::int32_t>(os, v);
  ckpt::put<std::uint8_t>(os, task == Task::FindingHome ? 0 : 1);
  ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.roster().size()));
  for (const AgentInfo& a : bundle.roster()) {
    ckpt::put<std::int32_t>(os, a.id);
    ckpt::put<std::uint8_t>(os, a.live ? 1 : 0);
    ckpt::put<std::uint8_t>(os, a.color == "green" ? 0 : 1);
    ckpt::put<std::int32_t>(os, a.joined_episode);
  }
  ckpt::put<std::uint64_t>(os, rng_base);
  ckpt::put<std::uint64_t>(os, rng_state);
  ckpt::put_store(os, bundle.online(), true);
  ckpt::put_store(os, bundle.target(), false);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  CheckpointData meta;
  NetworkBundle bundle;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, ckpt::kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = ckpt::get<std::uint32_t>(is);
  if (version != ckpt::kVersion) throw std::runtime_error("checkpoint: unsupported version");
  CheckpointData d;
  d.bundle_seed = ckpt::get<std::uint64_t>(is);
  int* fields[] = {&d.cfg.d_act, &d.cfg.obs_comp, &d.cfg.d_e, &d.cfg.K, &d.cfg.heads, &d.cfg.token_hidden,
                   &d.cfg.token_dim, &d.cfg.value_dim, &d.cfg.policy_dim, &d.cfg.block_hidden};
  for (int* f : fields) *f = ckpt::get<std::int32_t>(is);
  d.task = ckpt::get<std::uint8_t>(is) == 0 ? Task::FindingHome : Task::PredatorPrey;
  const auto n_agents = ckpt::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_agents; ++i) {
    AgentInfo a;
    a.id = ckpt::get<std::int32_t>(is);
    a.live = ckpt::get<std::uint8_t>(is) != 0;
    a.color = ckpt::get<std::uint8_t>(is) == 0 ? "green" : "red";
    a.joined_episode = ckpt::get<std::int32_t>(is);
    d.roster.push_back(std::move(a));
  }
  d.rng_base = ckpt::get<std::uint64_t>(is);
  d.rng_state = ckpt::get<std::uint64_t>(is);
  ParameterStore online = ckpt::get_store(is, true);
  ParameterStore target = ckpt::get_store(is, false);
  NetworkBundle bundle(d.cfg, d.bundle_seed, d.roster, std::move(online), std::move(target));
  return LoadedCheckpoint{std::move(d), std::move(bundle)};
}

// Names whose values differ (or exist on one side only), online comparison by
// exact bytes. The few-shot freezing criterion is checked with this.
inline std::vector<std::string> diff_param_names(const ParameterStore& a, const ParameterStore& b) {
  std::vector<std::string> out;
  for (const auto& [name, pa] : a) {
    if (!b.has(name)) {
      out.push_back(name);
      continue;
    }
    const Param& pb = b.at(name);
    if (!pa.value.same_shape(pb.value)) {
      out.push_back(name);
      continue;
    }
    if (std::memcmp(pa.value.data(), pb.value.data(), static_cast<std::size_t>(pa.value.numel()) * sizeof(double)) !=
        0)
      out.push_back(name);
  }
  for (const auto& [name, pb] : b)
    if (!a.has(name)) out.push_back(name);
  return out;
}

}  // namespace dynamarl
