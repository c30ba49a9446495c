#include "moesim/eviction.hpp"

#include <cmath>

#include "moesim/error.hpp"

namespace moesim {

std::string_view to_string(EvictionKind kind) {
  switch (kind) {
    case EvictionKind::lru: return "lru";
    case EvictionKind::lfu: return "lfu";
    case EvictionKind::lhu: return "lhu";
    case EvictionKind::fld: return "fld";
    case EvictionKind::sb: return "sb";
    case EvictionKind::ls: return "ls";
  }
  return "?";
}

EvictionKind parse_eviction(std::string_view token) {
  if (token == "lru") return EvictionKind::lru;
  if (token == "lfu") return EvictionKind::lfu;
  if (token == "lhu") return EvictionKind::lhu;
  if (token == "fld") return EvictionKind::fld;
  if (token == "sb") return EvictionKind::sb;
  if (token == "ls") return EvictionKind::ls;
  throw ConfigError("unknown eviction policy '" + std::string(token) +
                    "' (valid: lru, lfu, lhu, fld, sb, ls)");
}

void EvictionPolicy::begin_pass(int pass_id) {
  if (last_pass_ && pass_id <= *last_pass_)
    throw SimError("begin_pass: pass id " + std::to_string(pass_id) + " does not exceed " +
                   std::to_string(*last_pass_));
  last_pass_ = pass_id;
  on_begin_pass(pass_id);
}

std::unique_ptr<EvictionPolicy> make_eviction_policy(const EvictionConfig& config,
                                                     const ModelSpec& spec,
                                                     Precision high_precision) {
  switch (config.kind) {
    case EvictionKind::lru: return std::make_unique<LruPolicy>(spec);
    case EvictionKind::lfu: return std::make_unique<FrequencyPolicy>(spec, false, high_precision);
    case EvictionKind::lhu: return std::make_unique<FrequencyPolicy>(spec, true, high_precision);
    case EvictionKind::fld: return std::make_unique<FarthestLayerPolicy>(spec);
    case EvictionKind::sb: return std::make_unique<ScoreBasedPolicy>(spec, config.sb_decay);
    case EvictionKind::ls: return std::make_unique<LeastStalePolicy>(spec);
  }
  throw ConfigError("unknown eviction policy");
}

// --- LRU -------------------------------------------------------------------

void LruPolicy::note_access(const ExpertKey& key, const AccessContext&) {
  auto s = slot_of(*spec_, key);
  if (auto it = where_.find(s); it != where_.end()) {
    order_.splice(order_.end(), order_, it->second);
  } else {
    where_[s] = order_.insert(order_.end(), key);
  }
}

void LruPolicy::note_prefetched(const ExpertKey& key, const AccessContext& ctx) {
  // Landing counts as a use; a prediction for an already-resident expert does not.
  if (!where_.contains(slot_of(*spec_, key))) note_access(key, ctx);
}

void LruPolicy::note_evicted(const ExpertKey& key) {
  if (auto it = where_.find(slot_of(*spec_, key)); it != where_.end()) {
    order_.erase(it->second);
    where_.erase(it);
  }
}

std::optional<ExpertKey> LruPolicy::select_victim(const CacheState& cache, const VictimContext& ctx,
                                                 bool) {
  for (const auto& key : order_)
    if (cache.resident(key) && !ctx.pinned(key)) return key;
  return std::nullopt;
}

// --- LFU / LHU -------------------------------------------------------------

FrequencyPolicy::FrequencyPolicy(const ModelSpec& spec, bool high_precision_only,
                                 Precision high_precision)
    : spec_(&spec),
      high_only_(high_precision_only),
      high_(high_precision),
      count_(static_cast<std::size_t>(spec.num_layers) * spec.experts_per_layer, 0),
      last_access_(count_.size(), 0) {}

void FrequencyPolicy::note_access(const ExpertKey& key, const AccessContext& ctx) {
  auto s = slot_of(*spec_, key);
  if (!high_only_ || ctx.precision == high_) ++count_[s];
  last_access_[s] = ++tick_;
}

void FrequencyPolicy::note_prefetched(const ExpertKey& key, const AccessContext&) {
  auto s = slot_of(*spec_, key);
  if (last_access_[s] == 0) last_access_[s] = ++tick_;
}

std::optional<ExpertKey> FrequencyPolicy::select_victim(const CacheState& cache,
                                                        const VictimContext& ctx, bool) {
  std::optional<ExpertKey> best;
  std::uint64_t best_count = 0, best_last = 0;
  for (const auto& key : cache.residents()) {
    if (ctx.pinned(key)) continue;
    auto s = slot_of(*spec_, key);
    // residents() is key-ordered, so strict comparisons keep the lower key on ties.
    if (!best || count_[s] < best_count ||
        (count_[s] == best_count && last_access_[s] < best_last)) {
      best = key;
      best_count = count_[s];
      best_last = last_access_[s];
    }
  }
  return best;
}

// --- FLD -------------------------------------------------------------------

std::optional<ExpertKey> FarthestLayerPolicy::select_victim(const CacheState& cache,
                                                            const VictimContext& ctx, bool) {
  const int L = spec_->num_layers;
  std::optional<ExpertKey> best;
  int best_distance = -1;
  for (const auto& key : cache.residents()) {
    if (ctx.pinned(key)) continue;
    int d = ((key.layer - ctx.current_layer) % L + L) % L;
    if (d > best_distance) {
      best = key;
      best_distance = d;
    }
  }
  return best;
}

// --- Score-based -----------------------------------------------------------

ScoreBasedPolicy::ScoreBasedPolicy(const ModelSpec& spec, double decay)
    : spec_(&spec),
      decay_(decay),
      value_(static_cast<std::size_t>(spec.num_layers) * spec.experts_per_layer, 0.0),
      stamp_(value_.size(), 0) {
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("sb decay must be in (0, 1]");
}

double ScoreBasedPolicy::signal(const ExpertKey& key, int pass_id) const {
  auto s = slot_of(*spec_, key);
  return value_[s] * std::pow(decay_, pass_id - stamp_[s]);
}

void ScoreBasedPolicy::note_access(const ExpertKey& key, const AccessContext& ctx) {
  auto s = slot_of(*spec_, key);
  value_[s] = signal(key, ctx.pass_id) + static_cast<double>(ctx.gate_score);
  stamp_[s] = ctx.pass_id;
}

std::optional<ExpertKey> ScoreBasedPolicy::select_victim(const CacheState& cache,
                                                         const VictimContext& ctx, bool) {
  std::optional<ExpertKey> best;
  double best_signal = 0.0;
  for (const auto& key : cache.residents()) {
    if (ctx.pinned(key)) continue;
    double v = signal(key, ctx.pass_id);
    if (!best || v < best_signal) {
      best = key;
      best_signal = v;
    }
  }
  return best;
}

// --- Least-Stale -----------------------------------------------------------

LeastStalePolicy::LeastStalePolicy(const ModelSpec& spec)
    : spec_(&spec),
      where_(static_cast<std::size_t>(spec.num_layers) * spec.experts_per_layer, Where::none),
      seq_(where_.size(), 0) {}

LeastStalePolicy::Entry LeastStalePolicy::entry_of(const ExpertKey& key) const {
  return {key.layer, seq_[slot_of(*spec_, key)], key.expert};
}

void LeastStalePolicy::remove(const ExpertKey& key) {
  auto s = slot_of(*spec_, key);
  if (where_[s] == Where::stale) stale_.erase(entry_of(key));
  if (where_[s] == Where::current) current_.erase(entry_of(key));
  where_[s] = Where::none;
}

void LeastStalePolicy::note_access(const ExpertKey& key, const AccessContext&) {
  auto s = slot_of(*spec_, key);
  if (where_[s] == Where::current) return;
  remove(key);
  seq_[s] = next_seq_++;
  where_[s] = Where::current;
  current_.insert(entry_of(key));
}

void LeastStalePolicy::note_prefetched(const ExpertKey& key, const AccessContext& ctx) {
  note_access(key, ctx);
}

void LeastStalePolicy::note_evicted(const ExpertKey& key) { remove(key); }

void LeastStalePolicy::on_begin_pass(int) {
  for (const auto& e : current_) where_[slot_of(*spec_, {e.layer, e.expert})] = Where::stale;
  stale_.merge(current_);
}

std::optional<ExpertKey> LeastStalePolicy::select_victim(const CacheState&, const VictimContext& ctx,
                                                         bool forced) {
  auto reached = [&](const std::set<Entry>& q) -> std::optional<ExpertKey> {
    for (const auto& e : q) {
      if (e.layer > ctx.current_layer) break;
      if (ExpertKey key{e.layer, e.expert}; !ctx.pinned(key)) return key;
    }
    return std::nullopt;
  };
  auto ahead = [&](const std::set<Entry>& q) -> std::optional<ExpertKey> {
    if (q.empty() || q.rbegin()->layer <= ctx.current_layer) return std::nullopt;
    const auto& e = *q.lower_bound(Entry{q.rbegin()->layer, 0, 0});
    return ExpertKey{e.layer, e.expert};
  };
  if (auto key = reached(stale_)) return key;
  if (!forced) return std::nullopt;
  if (auto key = reached(current_)) return key;
  if (auto key = ahead(stale_)) return key;
  return ahead(current_);
}

bool LeastStalePolicy::is_protected(const ExpertKey& key) const { return in_current(key); }

bool LeastStalePolicy::in_stale(const ExpertKey& key) const {
  return where_[slot_of(*spec_, key)] == Where::stale;
}

bool LeastStalePolicy::in_current(const ExpertKey& key) const {
  return where_[slot_of(*spec_, key)] == Where::current;
}

std::vector<ExpertKey> LeastStalePolicy::stale_queue() const {
  std::vector<ExpertKey> out;
  for (const auto& e : stale_) out.push_back({e.layer, e.expert});
  return out;
}

std::vector<ExpertKey> LeastStalePolicy::current_queue() const {
  std::vector<ExpertKey> out;
  for (const auto& e : current_) out.push_back({e.layer, e.expert});
  return out;
}

}  // namespace moesim
