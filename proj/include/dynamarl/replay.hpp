#pragma once

// Ring-buffer replay with roster segmentation: every transition is keyed by
// its roster tag, and sampling draws only from the segment matching the
// current roster, so batch shapes always agree with the live agent count.
// Old-roster experience ages out FIFO but is never sampled across tags.

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dynamarl/rng.hpp"

namespace dynamarl {

struct Transition {
  std::string tag;                            // sorted live ids, e.g. "0,1,2"
  std::vector<std::vector<double>> obs;       // per agent: full component list
  std::vector<std::vector<double>> act;       // per agent: one-hot action
  std::vector<double> rew;                    // per agent
  std::vector<std::vector<double>> next_obs;  // per agent
  bool done = false;
};

inline std::string roster_tag(const std::vector<int>& sorted_ids) {
  std::string s;
  for (std::size_t i = 0; i < sorted_ids.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(sorted_ids[i]);
  }
  return s;
}

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000000) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }

  std::size_t segment_size(const std::string& tag) const {
    auto it = segments_.find(tag);
    return it == segments_.end() ? 0 : it->second.size();
  }

  std::size_t segment_count() const { return segments_.size(); }

  void push(Transition t) {
    validate(t);
    const std::size_t n = t.obs.size();
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
      segments_[storage_.back().tag].push_back(storage_.size() - 1);
      size_ = storage_.size();
      return;
    }
    // Evict the globally oldest element, which is also the oldest of its
    // segment (per-segment order mirrors push order).
    Transition& slot = storage_[head_];
    auto& old_seg = segments_[slot.tag];
    old_seg.pop_front();
    if (old_seg.empty()) segments_.erase(slot.tag);
    slot = std::move(t);
    segments_[slot.tag].push_back(head_);
    head_ = (head_ + 1) % capacity_;
    (void)n;
  }

  // Uniform with replacement from the tag's segment; nullopt = not ready.
  std::optional<std::vector<const Transition*>> sample(std::size_t batch, const std::string& tag,
                                                       RngStream& rng) const {
    auto it = segments_.find(tag);
    if (it == segments_.end() || it->second.size() < batch) return std::nullopt;
    const auto& seg = it->second;
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i)
      out.push_back(&storage_[seg[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(seg.size())))]]);
    return out;
  }

  const Transition& at(std::size_t i) const { return storage_.at(i); }

 private:
  static void validate(const Transition& t) {
    std::size_t ids = t.tag.empty() ? 0 : 1;
    for (char c : t.tag)
      if (c == ',') ++ids;
    const std::size_t n = t.obs.size();
    if (n == 0 || ids != n || t.act.size() != n || t.rew.size() != n || t.next_obs.size() != n)
      throw std::invalid_argument("ReplayBuffer: transition fields disagree with roster tag " + t.tag);
    for (const auto& a : t.act) {
      double sum = 0.0;
      for (double v : a) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("ReplayBuffer: action not one-hot");
        sum += v;
      }
      if (sum != 1.0) throw std::invalid_argument("ReplayBuffer: action not one-hot");
    }
    for (std::size_t i = 0; i < n; ++i)
      if (t.obs[i].size() != t.next_obs[i].size())
        throw std::invalid_argument("ReplayBuffer: obs/next_obs width mismatch");
  }

  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;  // next eviction slot once full
  std::size_t size_ = 0;
  std::map<std::string, std::deque<std::size_t>> segments_;
};

}  // namespace dynamarl
