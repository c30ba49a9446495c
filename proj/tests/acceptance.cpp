// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hand_stepped.hpp"
#include "moesim/engine.hpp"
#include "moesim/sweep.hpp"
#include "support.hpp"

using namespace moesim;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds.
constexpr int kSeeds = 5;
constexpr double kMinLruOverLs = 2.0;
constexpr double kMinSbOverLs = 10.0;
constexpr double kOrderingBudgetSec = 30.0;
constexpr int kBeladyInstances = 120;
constexpr int kScoreWinsNeeded = 4;
constexpr int kAblationWinsNeeded = 6;
constexpr double kSingleRunBudgetSec = 5.0;
constexpr double kSuiteBudgetSec = 300.0;

// Every report produced by the suite, for the accounting and LS checks.
std::vector<SimReport> g_reports;

SimReport run(const SimConfig& c, const Trace& t, EventLog* log = nullptr) {
  g_reports.push_back(run_simulation(c, t, log));
  return g_reports.back();
}

Trace synthetic(const std::string& model, std::uint64_t seed, double skew = 1.0) {
  SyntheticParams p;
  p.seed = seed;
  p.prefill_tokens = 64;
  p.decode_tokens = 64;
  p.skew = skew;
  return generate_synthetic(builtin_spec(model), p);
}

SimConfig base(const Trace& t) {
  SimConfig c;
  c.spec = t.spec;
  apply_setting(c, "capacity", "0.05");
  apply_setting(c, "prefetch", "topk:1.0");
  apply_setting(c, "miss", "fetch");
  return c;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Demanded (layer, expert) sets per pass and layer under standard routing.
std::vector<std::vector<std::set<int>>> demand_sets(const Trace& t) {
  const int E = t.spec.experts_per_layer;
  std::vector<std::vector<std::set<int>>> out;
  for (const auto& pass : t.passes) {
    auto& layers = out.emplace_back();
    for (const auto& ev : pass.events) {
      auto& s = layers.emplace_back();
      for (int r = 0; r < ev.tokens; ++r)
        for (int e : softmax_topk(ev.row(r, E), t.spec.top_k).indices) s.insert(e);
    }
  }
  return out;
}

struct Result {
  bool pass;
  std::string detail;
};

int g_failed = 0;

void report(int id, const char* name, const Result& r) {
  std::cout << (r.pass ? "PASS" : "FAIL") << "  " << id << "  " << name << ": " << r.detail << std::endl;
  if (!r.pass) ++g_failed;
}

Result eviction_ordering() {
  auto t0 = Clock::now();
  bool every_seed = true;
  double ls_sum = 0, lru_sum = 0, sb_sum = 0;
  std::ostringstream per;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Trace t = synthetic("olmoe", seed);
    double rate[3];
    const char* kinds[] = {"ls", "lru", "sb"};
    for (int i = 0; i < 3; ++i) {
      auto c = base(t);
      apply_setting(c, "eviction", kinds[i]);
      rate[i] = run(c, t).collision_rate();
    }
    every_seed = every_seed && rate[0] < rate[1] && rate[1] < rate[2];
    ls_sum += rate[0];
    lru_sum += rate[1];
    sb_sum += rate[2];
    per << " s" << seed << "=" << fmt(rate[0]) << "/" << fmt(rate[1]) << "/" << fmt(rate[2]);
  }
  double lru_ratio = ls_sum > 0 ? lru_sum / ls_sum : (lru_sum > 0 ? INFINITY : 1.0);
  double sb_ratio = ls_sum > 0 ? sb_sum / ls_sum : (sb_sum > 0 ? INFINITY : 1.0);
  double secs = seconds_since(t0);
  bool ok = every_seed && lru_ratio >= kMinLruOverLs && sb_ratio >= kMinSbOverLs &&
            secs < kOrderingBudgetSec;
  return {ok, "collision ls/lru/sb" + per.str() + "; LS<LRU<SB on every seed=" +
                  (every_seed ? "yes" : "no") + " LRU/LS=" + fmt(lru_ratio, 2) +
                  " SB/LS=" + fmt(sb_ratio, 2) + " time=" + fmt(secs, 1) + "s"};
}

Result ls_no_collisions_when_pass_fits() {
  std::uint64_t collisions = 0;
  int runs = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Trace t = synthetic("olmoe", seed);
    std::size_t most = 0;
    for (const auto& pass : demand_sets(t)) {
      std::size_t n = 0;
      for (const auto& s : pass) n += s.size();
      most = std::max(most, n);
    }
    for (const char* prefetch : {"none", "topk:1.0", "score:80"}) {
      auto c = base(t);
      apply_setting(c, "eviction", "ls");
      apply_setting(c, "prefetch", prefetch);
      c.hardware.capacity_fraction.reset();
      c.hardware.capacity_bytes = most * expert_bytes(t.spec, c.working_precision);
      collisions += run(c, t).totals.collision_misses;
      ++runs;
    }
  }
  return {collisions == 0, std::to_string(runs) + " runs at the largest pass footprint, LS collisions=" +
                               std::to_string(collisions)};
}

Result ls_unforced_evictions() {
  // Runs after every other criterion so it covers the whole suite.
  std::uint64_t bad = 0, ls_runs = 0, evictions = 0;
  for (const auto& r : g_reports) {
    bad += r.totals.unforced_protected_evictions;
    if (r.config.eviction.kind == EvictionKind::ls) {
      ++ls_runs;
      evictions += r.totals.evictions;
    }
  }
  return {bad == 0, std::to_string(ls_runs) + " LS runs, " + std::to_string(evictions) +
                        " evictions, unforced evictions of current experts=" + std::to_string(bad)};
}

Result belady_bound() {
  std::mt19937_64 rng(31337);
  int instances = 0, violations = 0, ls_optimal = 0, oracle_disagree = 0;
  const EvictionKind kinds[] = {EvictionKind::lru, EvictionKind::lfu, EvictionKind::lhu,
                                EvictionKind::fld, EvictionKind::sb,  EvictionKind::ls};
  while (instances < kBeladyInstances) {
    std::uniform_int_distribution<int> dl(1, 4), de(2, 8), dk(1, 2), dc(1, 4), dp(1, 10);
    int L = dl(rng), E = de(rng), k = std::min(dk(rng), E), cap = std::max(dc(rng), k);
    auto spec = test::tiny_spec(L, E, k);
    Trace t = test::random_trace(rng, spec, dp(rng));
    std::vector<int> seq;
    int opt = -1;
    for (auto kind : kinds) {
      EventLog log;
      auto r = run(test::demand_only(spec, cap, kind), t, &log);
      if (opt < 0) {
        seq = test::access_sequence(spec, log);
        opt = test::belady_brute_force(seq, static_cast<std::size_t>(cap));
        if (opt != test::belady_min(seq, static_cast<std::size_t>(cap))) ++oracle_disagree;
      }
      if (static_cast<int>(r.totals.misses) < opt) ++violations;
      if (kind == EvictionKind::ls && static_cast<int>(r.totals.misses) == opt) ++ls_optimal;
    }
    ++instances;
  }
  bool ok = violations == 0 && ls_optimal > 0 && oracle_disagree == 0;
  return {ok, std::to_string(instances) + " instances x 6 policies, below-optimal=" +
                  std::to_string(violations) + ", LS optimal on " + std::to_string(ls_optimal) +
                  ", brute force vs furthest-next-use disagreements=" + std::to_string(oracle_disagree)};
}

Result hand_stepped() {
  Trace t = test::hand_trace();
  std::string bad;
  for (const auto& table : test::hand_tables()) {
    EventLog log;
    auto r = run(test::hand_config(table.kind), t, &log);
    if (test::event_lines(log) != table.events || r.total_time_us != table.end)
      bad += std::string(" ") + std::string(to_string(table.kind));
  }
  return {bad.empty(), bad.empty() ? "lru, fld, sb, ls reproduce the tabulated events and clock"
                                   : "mismatch for" + bad};
}

Result routing_degeneracy() {
  int runs = 0, diffs = 0;
  for (const char* model : {"olmoe", "mixtral"}) {
    Trace t = synthetic(model, 3);
    for (const char* preset : {"config1", "config2", "config3", "config5"}) {
      SimConfig a = base(t);
      apply_preset(a, preset);
      SimConfig b = a;
      b.routing = {RoutingKind::cache_aware, 0.0};
      if (metrics_json(run(a, t)) != metrics_json(run(b, t))) ++diffs;
      ++runs;
    }
  }
  return {diffs == 0, std::to_string(runs) + " pairs, metric sections differing=" + std::to_string(diffs)};
}

Result prefetch_upper_bound() {
  std::string detail;
  bool ok = true;
  for (int seed = 1; seed <= 3; ++seed) {
    Trace t = synthetic("olmoe", seed);
    auto sets = demand_sets(t);
    // Largest demand of two consecutive layers, across pass boundaries too.
    std::size_t pair = 0;
    std::vector<std::size_t> flat;
    for (const auto& pass : sets)
      for (const auto& s : pass) flat.push_back(s.size());
    for (std::size_t i = 0; i + 1 < flat.size(); ++i) pair = std::max(pair, flat[i] + flat[i + 1]);

    auto c = base(t);
    apply_setting(c, "prefetch", "oracle");
    apply_setting(c, "bandwidth", "inf");
    c.hardware.capacity_fraction.reset();
    c.hardware.capacity_bytes = pair * expert_bytes(t.spec, c.working_precision);
    auto r = run(c, t);
    const std::uint64_t cold = sets[0][0].size();
    bool here = r.sync_overhead_us == 0 && r.totals.hits + cold == r.totals.demanded;
    ok = ok && here;
    detail += " s" + std::to_string(seed) + ": sync=" + std::to_string(r.sync_overhead_us) +
              " hits=" + std::to_string(r.totals.hits) + "/" +
              std::to_string(r.totals.demanded - cold);
  }
  return {ok, "oracle, unlimited bandwidth, two-layer capacity;" + detail};
}

Result prefetch_adaptivity() {
  int wins = 0;
  bool varies = true;
  std::string detail;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Trace t = synthetic("olmoe", seed, 2.0);
    // The prefetch comparison runs on top of LS eviction.
    auto topk = base(t);
    apply_setting(topk, "eviction", "ls");
    auto score = topk;
    apply_setting(score, "prefetch", "score:80");
    auto a = run(topk, t);
    auto b = run(score, t);
    if (b.sync_overhead_us <= a.sync_overhead_us) ++wins;
    std::set<double> sizes;
    for (const auto& l : b.per_layer)
      if (l.predictions > 0) sizes.insert(l.mean_prediction_size());
    varies = varies && sizes.size() > 1;
    detail += " s" + std::to_string(seed) + "=" + std::to_string(b.sync_overhead_us) + "/" +
              std::to_string(a.sync_overhead_us);
  }
  return {wins >= kScoreWinsNeeded && varies,
          "sync us score:80/topk:1.0" + detail + "; score wins " + std::to_string(wins) + "/" +
              std::to_string(kSeeds) + ", per-layer set sizes vary=" + (varies ? "yes" : "no")};
}

Result accounting() {
  std::size_t bad = 0;
  for (const auto& r : g_reports) {
    const auto& t = r.totals;
    if (t.hits + t.misses + t.dropped + t.substituted != t.demanded) ++bad;
    if (t.compulsory_misses + t.collision_misses + t.capacity_misses != t.misses) ++bad;
  }
  return {bad == 0, std::to_string(g_reports.size()) + " runs, identity violations=" + std::to_string(bad)};
}

Result determinism() {
  auto dir = fs::temp_directory_path() / ("moesim-acceptance-" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  int checked = 0, differing = 0;
  Trace t = synthetic("olmoe", 9);
  for (const char* preset : {"config1", "config2", "config3", "config4", "config5"}) {
    SimConfig c = base(t);
    apply_preset(c, preset);
    c.prefetch.noise = 0.2;
    c.seed = 5;
    std::string out[2];
    for (int i = 0; i < 2; ++i) {
      auto r = run(c, t);
      auto stem = dir / (std::string(preset) + "-" + std::to_string(i));
      write_report_json(r, stem.string() + ".json");
      write_per_layer_table(r, stem.string() + ".layers.csv");
      append_csv_rows({r}, stem.string() + ".csv");
      out[i] = slurp(stem.string() + ".json") + slurp(stem.string() + ".layers.csv") +
               slurp(stem.string() + ".csv");
    }
    ++checked;
    if (out[0] != out[1]) ++differing;
  }
  fs::remove_all(dir);
  return {differing == 0, std::to_string(checked) + " configs written twice, differing=" +
                              std::to_string(differing)};
}

Result ablation() {
  SweepSpec sweep;
  sweep.presets = {"config1", "config2", "config3", "config4"};
  sweep.eviction = {"base", "ls"};
  int wins = 0, rows = 0;
  std::string detail;
  for (const char* model : {"olmoe", "mixtral"}) {
    Trace t = synthetic(model, 1);
    SimConfig b = base(t);
    auto configs = expand_sweep(b, {}, sweep);
    auto results = run_all(configs, t, std::max(1u, std::thread::hardware_concurrency()));
    for (std::size_t i = 0; i + 1 < results.size(); i += 2) {
      if (!std::holds_alternative<SimReport>(results[i]) ||
          !std::holds_alternative<SimReport>(results[i + 1]))
        return {false, "sweep run failed"};
      const auto& orig = std::get<SimReport>(results[i]);
      const auto& ls = std::get<SimReport>(results[i + 1]);
      g_reports.push_back(orig);
      g_reports.push_back(ls);
      ++rows;
      if (ls.ttft_us < orig.ttft_us) ++wins;
      detail += std::string(" ") + model + "/" + sweep.presets[i / 2] + "=" +
                std::to_string(orig.ttft_us - ls.ttft_us);
    }
  }
  return {wins >= kAblationWinsNeeded, "TTFT saved by LS (us)" + detail + "; LS lower in " +
                                           std::to_string(wins) + "/" + std::to_string(rows)};
}

Result performance(Clock::time_point suite_start) {
  Trace t = synthetic("olmoe", 1);
  SimConfig c = base(t);
  apply_preset(c, "config5");
  auto t0 = Clock::now();
  run(c, t);
  double one = seconds_since(t0);
  double suite = seconds_since(suite_start);
  return {one < kSingleRunBudgetSec && suite < kSuiteBudgetSec,
          "full OLMoE run " + fmt(one, 3) + "s, suite " + fmt(suite, 1) + "s"};
}

}  // namespace

int main() {
  auto start = Clock::now();
  std::vector<std::pair<int, std::pair<const char*, Result>>> results;
  auto run_one = [&](int id, const char* name, const std::function<Result()>& f) {
    Result r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    results.push_back({id, {name, r}});
  };

  run_one(1, "eviction ordering", eviction_ordering);
  run_one(3, "Belady bound", belady_bound);
  run_one(4, "hand-stepped oracle", hand_stepped);
  run_one(5, "routing degeneracy", routing_degeneracy);
  run_one(6, "prefetch upper bound", prefetch_upper_bound);
  run_one(7, "prefetch adaptivity", prefetch_adaptivity);
  run_one(9, "determinism", determinism);
  run_one(10, "drop-in ablation", ablation);
  run_one(11, "performance", [&] { return performance(start); });
  // These two look across every run above.
  Result fits, unforced;
  try {
    fits = ls_no_collisions_when_pass_fits();
    unforced = ls_unforced_evictions();
  } catch (const std::exception& e) {
    fits = unforced = {false, std::string("error: ") + e.what()};
  }
  results.push_back({2, {"LS structural guarantee",
                         {fits.pass && unforced.pass, unforced.detail + "; " + fits.detail}}});
  run_one(8, "accounting identities", accounting);

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [id, r] : results) report(id, r.first, r.second);
  std::cout << (g_failed == 0 ? "all criteria passed" : std::to_string(g_failed) + " criteria failed")
            << " in " << fmt(seconds_since(start), 1) << "s" << std::endl;
  return g_failed == 0 ? 0 : 1;
}
