#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "moesim/engine.hpp"

namespace moesim::test {

inline ModelSpec tiny_spec(int layers, int experts, int k, Bytes expert_bytes = 1'000'000) {
  ModelSpec s;
  s.name = "tiny";
  s.num_layers = layers;
  s.experts_per_layer = experts;
  s.top_k = k;
  s.expert_bytes_fp16 = expert_bytes;
  s.available_precisions = {Precision::fp16};
  return s;
}

// rows[pass][layer][token] is one logits row; pass 0 is the prefill pass.
using Rows = std::vector<std::vector<std::vector<std::vector<float>>>>;

inline Trace make_trace(const ModelSpec& spec, const Rows& rows) {
  Trace t;
  t.spec = spec;
  for (std::size_t p = 0; p < rows.size(); ++p) {
    ForwardPass pass;
    pass.pass_id = static_cast<int>(p);
    pass.kind = p == 0 ? PassKind::prefill : PassKind::decode;
    for (int l = 0; l < spec.num_layers; ++l) {
      LayerEvent ev;
      ev.layer = l;
      ev.tokens = static_cast<int>(rows[p][l].size());
      for (const auto& r : rows[p][l]) ev.logits.insert(ev.logits.end(), r.begin(), r.end());
      pass.events.push_back(std::move(ev));
    }
    t.passes.push_back(std::move(pass));
  }
  return t;
}

// One row with `value` at `expert` and zeros elsewhere.
inline std::vector<float> peak(int experts, int expert, float value = 3.0f) {
  std::vector<float> r(experts, 0.0f);
  r[expert] = value;
  return r;
}

// Random logits; prefill carries 1..3 rows.
inline Trace random_trace(std::mt19937_64& rng, const ModelSpec& spec, int passes) {
  std::normal_distribution<float> n(0.0f, 1.5f);
  std::uniform_int_distribution<int> rows_dist(1, 3);
  Rows rows(passes);
  for (int p = 0; p < passes; ++p) {
    rows[p].resize(spec.num_layers);
    int tokens = p == 0 ? rows_dist(rng) : 1;
    for (int l = 0; l < spec.num_layers; ++l)
      for (int t = 0; t < tokens; ++t) {
        std::vector<float> r(spec.experts_per_layer);
        for (auto& v : r) v = n(rng);
        rows[p][l].push_back(std::move(r));
      }
  }
  return make_trace(spec, rows);
}

inline SimConfig demand_only(const ModelSpec& spec, int capacity_experts, EvictionKind eviction) {
  SimConfig c;
  c.spec = spec;
  c.working_precision = Precision::fp16;
  c.hardware.capacity_fraction.reset();
  c.hardware.capacity_bytes = static_cast<Bytes>(capacity_experts) * spec.expert_bytes_fp16;
  c.hardware.bandwidth_bytes_per_sec = 1'000'000'000;
  c.hardware.per_layer_compute_us = 100;
  c.eviction.kind = eviction;
  c.prefetch.mode = PrefetchMode::none;
  c.miss.kind = MissKind::fetch;
  return c;
}

// Demanded (layer, expert) keys in service order, as slot ids.
inline std::vector<int> access_sequence(const ModelSpec& spec, const EventLog& log) {
  std::vector<int> seq;
  for (const auto& r : log.records)
    if (const auto* a = std::get_if<AccessRecord>(&r))
      seq.push_back(static_cast<int>(slot_of(spec, a->layer, a->expert)));
  return seq;
}

// Exhaustive search over every eviction choice: fewest demand misses.
inline int belady_brute_force(const std::vector<int>& seq, std::size_t capacity) {
  std::map<std::set<int>, int> states{{{}, 0}};
  for (int x : seq) {
    std::map<std::set<int>, int> next;
    auto relax = [&](std::set<int> s, int cost) {
      auto [it, fresh] = next.emplace(std::move(s), cost);
      if (!fresh) it->second = std::min(it->second, cost);
    };
    for (const auto& [s, cost] : states) {
      if (s.count(x)) {
        relax(s, cost);
        continue;
      }
      if (s.size() < capacity) {
        auto t = s;
        t.insert(x);
        relax(std::move(t), cost + 1);
        continue;
      }
      for (int victim : s) {
        auto t = s;
        t.erase(victim);
        t.insert(x);
        relax(std::move(t), cost + 1);
      }
    }
    states = std::move(next);
  }
  int best = std::numeric_limits<int>::max();
  for (const auto& [s, cost] : states) best = std::min(best, cost);
  return best;
}

// Furthest-next-use replacement.
inline int belady_min(const std::vector<int>& seq, std::size_t capacity) {
  std::set<int> cache;
  int misses = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (cache.count(seq[i])) continue;
    ++misses;
    if (cache.size() == capacity) {
      int victim = -1;
      std::size_t far = 0;
      for (int c : cache) {
        std::size_t j = i + 1;
        while (j < seq.size() && seq[j] != c) ++j;
        if (victim < 0 || j > far) {
          victim = c;
          far = j;
        }
      }
      cache.erase(victim);
    }
    cache.insert(seq[i]);
  }
  return misses;
}

}  // namespace moesim::test
