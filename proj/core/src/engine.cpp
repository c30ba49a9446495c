#include "moesim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "moesim/cache.hpp"
#include "moesim/error.hpp"

namespace moesim {

namespace {

struct Transfer {
  ExpertKey key;
  Bytes bytes = 0;
  Micros start = 0;
  Micros end = 0;
  float score = 0.0f;
};

struct Demand {
  int expert = 0;
  int rank = 0;
  int first_token = 0;
  float score = 0.0f;
  double weight = 0.0;
  int original = 0;
};

struct PendingPrediction {
  int pass = -1;
  int layer = -1;
  std::vector<int> experts;
};

class Engine final : public MissEnvironment {
 public:
  Engine(const SimConfig& config, const Trace& trace, EventLog* log)
      : cfg_(config),
        trace_(trace),
        spec_(config.spec),
        log_(log),
        cache_(config.spec, resolve_capacity(config.spec, config.hardware, config.working_precision)),
        policy_(make_eviction_policy(config.eviction, config.spec, config.working_precision)),
        delta_(config.spec.num_layers),
        history_(static_cast<std::size_t>(config.spec.num_layers) * config.spec.experts_per_layer),
        layer_scores_(config.spec.experts_per_layer, 0.0f),
        owed_(config.spec.experts_per_layer, false),
        rng_(config.seed) {
    report_.config = config;
    report_.capacity_bytes = cache_.capacity();
    report_.per_layer.resize(spec_.num_layers);
    for (int l = 0; l < spec_.num_layers; ++l) report_.per_layer[l].layer = l;
    report_.warnings = config_warnings(config);
    working_bytes_ = expert_bytes(spec_, cfg_.working_precision);
  }

  SimReport run();

  Micros fetch(const ExpertKey& key) override;
  bool admissible(Bytes bytes) const override { return bytes <= cache_.capacity(); }
  std::optional<int> substitute_for(int layer, int expert, float score,
                                    double tolerance) const override;

 private:
  template <typename R>
  std::size_t record(R r) {
    return log_ ? log_->push(std::move(r)) : 0;
  }

  void run_layer(std::size_t pass_index, const LayerEvent& event);
  void serve(const Demand& d, float degrade_threshold);
  void predict_and_submit(std::size_t pass_index, int layer);
  void score_prediction(int layer, const std::vector<Demand>& demands);

  void advance_channel(Micros t, bool allow_start);
  void start_next();
  void land();
  void admit(const ExpertKey& key, Bytes bytes, TransferCause cause, Micros time);
  void evict(const ExpertKey& key, bool forced, TransferCause cause, Micros time);

  const SimConfig& cfg_;
  const Trace& trace_;
  const ModelSpec& spec_;
  EventLog* log_;
  CacheState cache_;
  std::unique_ptr<EvictionPolicy> policy_;
  DeltaAvgState delta_;
  std::vector<ResidencyHistory> history_;
  std::vector<float> layer_scores_;  // max softmax score per expert in the running layer
  std::vector<bool> owed_;           // demanded in the running layer, not yet served
  std::mt19937_64 rng_;
  Bytes working_bytes_ = 0;

  Micros now_ = 0;
  Micros cursor_ = 0;  // channel simulated up to here
  int pass_ = 0;
  int layer_ = 0;
  std::optional<Transfer> inflight_;
  PrefetchQueue queue_;
  PendingPrediction pending_;

  SimReport report_;
  double lost_weight_ = 0.0;
  double original_weight_ = 0.0;
  std::uint64_t executed_original_ = 0;
  std::uint64_t original_slots_ = 0;
  double macro_precision_sum_ = 0.0;
  std::uint64_t macro_precision_n_ = 0;
  double macro_recall_sum_ = 0.0;
};

void Engine::admit(const ExpertKey& key, Bytes bytes, TransferCause cause, Micros time) {
  cache_.admit(key, bytes);
  history_[slot_of(spec_, key)].ever_resident = true;
  record(AdmitRecord{key, pass_, time, cause});
}

void Engine::evict(const ExpertKey& key, bool forced, TransferCause cause, Micros time) {
  bool prot = policy_->is_protected(key);
  ExpertKey resident = key;
  resident.precision = *cache_.resident_precision(key);
  cache_.evict(key);
  policy_->note_evicted(key);
  history_[slot_of(spec_, key)].last_evicted_pass = pass_;
  auto& t = report_.totals;
  ++t.evictions;
  if (forced) ++t.forced_evictions;
  if (!forced && prot) ++t.unforced_protected_evictions;
  record(EvictRecord{resident, pass_, layer_, time, forced, prot, cause});
}

void Engine::land() {
  Transfer tr = *inflight_;
  inflight_.reset();
  cache_.release(tr.bytes);
  admit(tr.key, tr.bytes, TransferCause::prefetch, tr.end);
  policy_->note_prefetched(tr.key, AccessContext{layer_, pass_, tr.score, tr.key.precision});
  ++report_.totals.prefetch_completed;
  record(PrefetchRecord{PrefetchEvent::completed, tr.key, pass_, tr.end});
}

void Engine::start_next() {
  auto& t = report_.totals;
  while (!queue_.empty()) {
    PrefetchRequest req = queue_.front();
    queue_.pop_front();
    if (cache_.resident(req.key)) {
      ++t.prefetch_skipped;
      record(PrefetchRecord{PrefetchEvent::skipped, req.key, pass_, cursor_});
      continue;
    }
    bool room = working_bytes_ <= cache_.capacity() - cache_.reserved();
    while (room && cache_.free() < working_bytes_) {
      auto victim = policy_->select_victim(cache_, VictimContext{layer_, pass_}, false);
      if (!victim) {
        room = false;
        break;
      }
      evict(*victim, false, TransferCause::prefetch, cursor_);
    }
    if (!room) {
      ++t.prefetch_dropped;
      record(PrefetchRecord{PrefetchEvent::dropped, req.key, pass_, cursor_});
      continue;
    }
    cache_.reserve(working_bytes_);
    Micros d = transfer_time_us(working_bytes_, cfg_.hardware.bandwidth_bytes_per_sec);
    inflight_ = Transfer{req.key, working_bytes_, cursor_, cursor_ + d, req.predicted_score};
    ++t.prefetch_started;
    record(PrefetchRecord{PrefetchEvent::started, req.key, pass_, cursor_});
    return;
  }
}

void Engine::advance_channel(Micros t, bool allow_start) {
  for (;;) {
    if (inflight_ && inflight_->end <= t) {
      cursor_ = std::max(cursor_, inflight_->end);
      land();
      continue;
    }
    if (!inflight_ && allow_start && !queue_.empty()) {
      start_next();
      if (inflight_) continue;
    }
    break;
  }
  cursor_ = std::max(cursor_, t);
}

Micros Engine::fetch(const ExpertKey& key) {
  const Micros start = now_;
  if (inflight_) {
    Micros end = inflight_->end;
    advance_channel(end, false);
    now_ = std::max(now_, end);
  }
  Bytes bytes = expert_bytes(spec_, key.precision);
  auto below_floor = [&] {
    return ConfigError("capacity below floor: " + std::to_string(cache_.capacity()) +
                       " bytes cannot admit expert (" + std::to_string(key.layer) + ", " +
                       std::to_string(key.expert) + ") at " + std::string(to_string(key.precision)));
  };
  if (bytes > cache_.capacity()) throw below_floor();
  while (cache_.free() < bytes) {
    auto victim = policy_->select_victim(cache_, VictimContext{layer_, pass_, &owed_}, true);
    // Everything left is still owed to this layer; take the policy's plain choice.
    if (!victim) victim = policy_->select_victim(cache_, VictimContext{layer_, pass_}, true);
    if (!victim) throw below_floor();
    evict(*victim, true, TransferCause::demand, now_);
  }
  now_ += transfer_time_us(bytes, cfg_.hardware.bandwidth_bytes_per_sec);
  cursor_ = std::max(cursor_, now_);
  admit(key, bytes, TransferCause::demand, now_);
  return now_ - start;
}

std::optional<int> Engine::substitute_for(int layer, int expert, float score,
                                          double tolerance) const {
  std::optional<int> best;
  double best_diff = 0.0;
  for (int e = 0; e < spec_.experts_per_layer; ++e) {
    if (e == expert || !cache_.resident(layer, e)) continue;
    double diff = std::fabs(static_cast<double>(layer_scores_[e]) - static_cast<double>(score));
    if (diff > tolerance) continue;
    if (!best || diff < best_diff) {
      best = e;
      best_diff = diff;
    }
  }
  return best;
}

void Engine::serve(const Demand& d, float degrade_threshold) {
  const int layer = layer_;
  ExpertKey key{layer, d.expert, cfg_.working_precision};
  AccessRecord a;
  a.pass = pass_;
  a.layer = layer;
  a.token = d.first_token;
  a.expert = d.expert;
  a.rank = d.rank;
  a.time = now_;
  a.original_selections = d.original;
  a.weight = d.weight;
  std::size_t idx = record(a);

  auto& t = report_.totals;
  auto& ls = report_.per_layer[layer];
  ++t.demanded;
  ++ls.demanded;
  AccessContext ctx{layer, pass_, d.score, cfg_.working_precision};
  bool executed = true;

  auto count_miss = [&](MissClass cls) {
    a.outcome = AccessOutcome::miss;
    a.miss_class = cls;
    ++t.misses;
    ++ls.misses;
    switch (cls) {
      case MissClass::compulsory: ++t.compulsory_misses; ++ls.compulsory_misses; break;
      case MissClass::collision: ++t.collision_misses; ++ls.collision_misses; break;
      case MissClass::capacity: ++t.capacity_misses; ++ls.capacity_misses; break;
      case MissClass::none: break;
    }
  };

  if (auto p = cache_.resident_precision(key)) {
    a.outcome = AccessOutcome::hit;
    a.precision = *p;
    ++t.hits;
    ++ls.hits;
    ctx.precision = *p;
    key.precision = *p;
    policy_->note_access(key, ctx);
  } else if (inflight_ && inflight_->key == key) {
    count_miss(classify_miss(history_[slot_of(spec_, key)], pass_));
    a.waited = true;
    ++t.waited_misses;
    Micros start = now_;
    Micros end = inflight_->end;
    advance_channel(end, false);
    now_ = std::max(now_, end);
    a.blocked_us = now_ - start;
    a.precision = *cache_.resident_precision(key);
    ctx.precision = a.precision;
    key.precision = a.precision;
    policy_->note_access(key, ctx);
  } else {
    MissClass cls = classify_miss(history_[slot_of(spec_, key)], pass_);
    MissRequest req{key, d.rank, d.score, d.weight, degrade_threshold};
    MissOutcome out = handle_miss(cfg_.miss, req, spec_, cfg_.working_precision, *this);
    switch (out.kind) {
      case MissOutcomeKind::fetched:
        count_miss(cls);
        a.precision = out.precision;
        a.blocked_us = out.blocked_us;
        key.precision = out.precision;
        ctx.precision = out.precision;
        policy_->note_access(key, ctx);
        break;
      case MissOutcomeKind::dropped:
        a.outcome = AccessOutcome::dropped;
        ++t.dropped;
        executed = false;
        break;
      case MissOutcomeKind::substituted: {
        a.outcome = AccessOutcome::substituted;
        a.substitute = out.substitute->expert;
        ++t.substituted;
        executed = false;
        ExpertKey sub = *out.substitute;
        sub.precision = *cache_.resident_precision(sub);
        a.precision = sub.precision;
        policy_->note_access(sub, AccessContext{layer, pass_, layer_scores_[sub.expert], sub.precision});
        break;
      }
    }
  }

  if (executed)
    executed_original_ += static_cast<std::uint64_t>(d.original);
  else
    lost_weight_ += d.weight;
  report_.sync_overhead_us += a.blocked_us;
  ls.blocked_us += a.blocked_us;
  if (log_) std::get<AccessRecord>(log_->records[idx]) = a;
}

void Engine::score_prediction(int layer, const std::vector<Demand>& demands) {
  if (pending_.pass != pass_ || pending_.layer != layer) return;
  auto& acc = report_.prefetch;
  std::uint64_t tp = 0;
  for (int e : pending_.experts)
    for (const auto& d : demands)
      if (d.expert == e) {
        ++tp;
        break;
      }
  ++acc.predicted_layers;
  acc.predicted += pending_.experts.size();
  acc.demanded += demands.size();
  acc.true_positives += tp;
  if (!pending_.experts.empty()) {
    macro_precision_sum_ += static_cast<double>(tp) / static_cast<double>(pending_.experts.size());
    ++macro_precision_n_;
  }
  if (!demands.empty())
    macro_recall_sum_ += static_cast<double>(tp) / static_cast<double>(demands.size());
  pending_ = {};
}

void Engine::predict_and_submit(std::size_t pass_index, int layer) {
  const int L = spec_.num_layers;
  std::size_t target_pass = pass_index;
  int target_layer = layer + 1;
  if (target_layer >= L) {
    if (cfg_.prefetch.mode != PrefetchMode::oracle || pass_index + 1 >= trace_.passes.size()) return;
    target_pass = pass_index + 1;
    target_layer = 0;
  }
  const LayerEvent& next = trace_.passes[target_pass].events[target_layer];
  const int k = spec_.top_k;

  std::vector<Prediction> rows;
  rows.reserve(next.tokens);
  for (int r = 0; r < next.tokens; ++r) {
    auto row = next.row(r, spec_.experts_per_layer);
    switch (cfg_.prefetch.mode) {
      case PrefetchMode::topk: rows.push_back(predict_topk(row, k, cfg_.prefetch.overfetch)); break;
      case PrefetchMode::score:
        rows.push_back(predict_score_percentile(row, cfg_.prefetch.percentile));
        break;
      case PrefetchMode::oracle: {
        auto top = softmax_topk(row, k);
        Prediction p;
        for (std::size_t i = 0; i < top.indices.size(); ++i)
          p.experts.push_back(ScoredExpert{top.indices[i], top.scores[i]});
        rows.push_back(std::move(p));
        break;
      }
      case PrefetchMode::none: return;
    }
  }
  Prediction pred = merge_predictions(rows);
  pred.degenerate = pred.degenerate && cfg_.prefetch.mode == PrefetchMode::score;

  if (cfg_.prefetch.noise > 0.0) {
    const int E = spec_.experts_per_layer;
    std::vector<bool> taken(E, false);
    for (const auto& s : pred.experts) taken[s.expert] = true;
    for (auto& s : pred.experts) {
      double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      if (u >= cfg_.prefetch.noise) continue;
      int start = static_cast<int>(rng_() % static_cast<std::uint64_t>(E));
      for (int i = 0; i < E; ++i) {
        int e = (start + i) % E;
        if (taken[e]) continue;
        taken[s.expert] = false;
        taken[e] = true;
        s.expert = e;
        break;
      }
    }
  }

  auto& t = report_.totals;
  if (pred.clamped) ++t.predictions_clamped;
  if (pred.degenerate) ++t.predictions_degenerate;
  auto& target_stats = report_.per_layer[target_layer];
  ++target_stats.predictions;
  target_stats.predicted_experts += pred.experts.size();

  PredictionRecord pr;
  pr.source_pass = pass_;
  pr.source_layer = layer;
  pr.target_pass = trace_.passes[target_pass].pass_id;
  pr.target_layer = target_layer;
  pr.clamped = pred.clamped;
  pr.degenerate = pred.degenerate;
  pending_ = {pr.target_pass, target_layer, {}};
  for (const auto& s : pred.experts) {
    pr.experts.push_back(s.expert);
    pending_.experts.push_back(s.expert);
  }
  record(std::move(pr));

  for (const auto& s : pred.experts) {
    ExpertKey key{target_layer, s.expert, cfg_.working_precision};
    ++t.prefetch_submitted;
    record(PrefetchRecord{PrefetchEvent::submitted, key, pass_, now_});
    bool in_flight = inflight_ && inflight_->key == key;
    if (auto p = cache_.resident_precision(key); p || in_flight) {
      ++t.prefetch_skipped;
      record(PrefetchRecord{PrefetchEvent::skipped, key, pass_, now_});
      if (p) {
        key.precision = *p;
        policy_->note_prefetched(key, AccessContext{layer, pass_, s.score, *p});
      }
      continue;
    }
    queue_.push_back(PrefetchRequest{key, target_layer, s.score, now_, pass_});
  }
}

void Engine::run_layer(std::size_t pass_index, const LayerEvent& event) {
  const int layer = event.layer;
  const int k = spec_.top_k;
  const int E = spec_.experts_per_layer;
  layer_ = layer;

  // Phase 1: routing against the cache as it stands at layer start.
  LayerRecord lr;
  lr.pass = pass_;
  lr.layer = layer;
  lr.tokens = event.tokens;
  lr.top_k = k;
  lr.time = now_;
  std::vector<bool> cached = cache_.layer_mask(layer);
  std::vector<int> index(E, -1);
  std::vector<Demand> demands;
  std::fill(layer_scores_.begin(), layer_scores_.end(), 0.0f);
  for (int r = 0; r < event.tokens; ++r) {
    auto row = event.row(r, E);
    auto probs = softmax(row);
    for (int e = 0; e < E; ++e) layer_scores_[e] = std::max(layer_scores_[e], probs[e]);
    RoutingDecision dec = route(layer, row, k, cached, cfg_.routing, delta_);
    if (dec.modified) ++lr.modified_rows;
    double orig = 0.0;
    for (int e : dec.original_selected) orig += probs[e];
    lr.original_weight += orig;
    if (dec.modified) {
      double chosen = 0.0;
      for (float w : dec.weights) chosen += w;
      lr.routing_weight_loss += orig - chosen;
    }
    for (std::size_t i = 0; i < dec.selected.size(); ++i) {
      int e = dec.selected[i];
      if (index[e] < 0) {
        index[e] = static_cast<int>(demands.size());
        demands.push_back(Demand{e, static_cast<int>(i) + 1, r, probs[e], 0.0, 0});
      }
      Demand& d = demands[index[e]];
      d.rank = std::min(d.rank, static_cast<int>(i) + 1);
      d.score = std::max(d.score, probs[e]);
      d.weight += dec.weights[i];
      if (std::find(dec.original_selected.begin(), dec.original_selected.end(), e) !=
          dec.original_selected.end())
        ++d.original;
    }
  }
  std::sort(demands.begin(), demands.end(), [](const Demand& a, const Demand& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.score != b.score) return a.score > b.score;
    return a.expert < b.expert;
  });
  record(lr);
  original_weight_ += lr.original_weight;
  lost_weight_ += lr.routing_weight_loss;
  original_slots_ += static_cast<std::uint64_t>(event.tokens) * static_cast<std::uint64_t>(k);
  score_prediction(layer, demands);

  // Phase 2: demand misses, with the prefetch watchdog paused.
  float threshold = 0.0f;
  if (cfg_.miss.kind == MissKind::fetch_priority) {
    std::vector<float> scores;
    for (const auto& d : demands) scores.push_back(d.score);
    threshold = nearest_rank_percentile(std::move(scores), cfg_.miss.degrade_percentile);
  }
  for (const auto& d : demands) owed_[d.expert] = true;
  for (const auto& d : demands) {
    owed_[d.expert] = false;
    serve(d, threshold);
  }

  // Phase 3: predictions for the next layer, then the compute window.
  if (cfg_.prefetch.mode != PrefetchMode::none) predict_and_submit(pass_index, layer);
  advance_channel(now_, true);
  now_ += cfg_.hardware.per_layer_compute_us;
  advance_channel(now_, true);
}

SimReport Engine::run() {
  bool saw_prefill = false;
  for (std::size_t i = 0; i < trace_.passes.size(); ++i) {
    const ForwardPass& pass = trace_.passes[i];
    pass_ = pass.pass_id;
    policy_->begin_pass(pass.pass_id);
    const Micros start = now_;
    for (const auto& ev : pass.events) run_layer(i, ev);
    record(PassRecord{pass.pass_id, pass.kind, start, now_});
    ++report_.passes;
    if (pass.kind == PassKind::prefill) {
      saw_prefill = true;
      report_.ttft_us = now_;
    } else {
      ++report_.decode_passes;
      report_.decode_time_us += now_ - start;
      if (!saw_prefill && report_.decode_passes == 1) report_.ttft_us = now_;
    }
  }
  report_.total_time_us = now_;
  report_.decode_tokens_per_sec =
      report_.decode_time_us > 0 ? static_cast<double>(report_.decode_passes) * 1e6 /
                                       static_cast<double>(report_.decode_time_us)
                                 : 0.0;
  report_.routing_fidelity =
      original_slots_ > 0
          ? static_cast<double>(executed_original_) / static_cast<double>(original_slots_)
          : 1.0;
  report_.weight_mass_preserved = preserved_mass(lost_weight_, original_weight_);

  auto& acc = report_.prefetch;
  acc.zero_denominator = acc.predicted == 0;
  acc.precision = acc.predicted > 0 ? static_cast<double>(acc.true_positives) /
                                          static_cast<double>(acc.predicted)
                                    : 1.0;
  acc.recall = acc.demanded > 0 ? static_cast<double>(acc.true_positives) /
                                      static_cast<double>(acc.demanded)
                                : 1.0;
  acc.precision_macro = macro_precision_n_ > 0
                            ? macro_precision_sum_ / static_cast<double>(macro_precision_n_)
                            : 1.0;
  acc.recall_macro = acc.predicted_layers > 0
                         ? macro_recall_sum_ / static_cast<double>(acc.predicted_layers)
                         : 1.0;
  return report_;
}

}  // namespace

SimReport run_simulation(const SimConfig& config, const Trace& trace, EventLog* log) {
  config.validate();
  if (!(trace.spec == config.spec))
    throw ConfigError("trace was generated for model '" + trace.spec.name +
                      "' but the run is configured for '" + config.spec.name + "'");
  trace.validate();
  Engine engine(config, trace, log);
  SimReport report = engine.run();
  check_accounting(report);
  return report;
}

}  // namespace moesim
