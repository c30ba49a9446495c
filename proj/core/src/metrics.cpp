#include "moesim/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "moesim/error.hpp"
#include "text_util.hpp"

namespace moesim {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(AccessOutcome o) {
  switch (o) {
    case AccessOutcome::hit: return "hit";
    case AccessOutcome::miss: return "miss";
    case AccessOutcome::dropped: return "dropped";
    case AccessOutcome::substituted: return "substituted";
  }
  return "?";
}

std::string_view to_string(MissClass c) {
  switch (c) {
    case MissClass::none: return "none";
    case MissClass::compulsory: return "compulsory";
    case MissClass::collision: return "collision";
    case MissClass::capacity: return "capacity";
  }
  return "?";
}

std::string_view to_string(PrefetchEvent e) {
  switch (e) {
    case PrefetchEvent::submitted: return "submitted";
    case PrefetchEvent::started: return "started";
    case PrefetchEvent::completed: return "completed";
    case PrefetchEvent::dropped: return "dropped";
    case PrefetchEvent::skipped: return "skipped";
  }
  return "?";
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double LayerStats::collision_rate() const { return ratio(collision_misses, demanded); }
double LayerStats::collision_share_of_misses() const { return ratio(collision_misses, misses); }
double LayerStats::mean_prediction_size() const { return ratio(predicted_experts, predictions); }

double SimReport::hit_rate() const { return ratio(totals.hits, totals.demanded); }
double SimReport::collision_rate() const { return ratio(totals.collision_misses, totals.demanded); }
double SimReport::collision_share_of_misses() const {
  return ratio(totals.collision_misses, totals.misses);
}

MissClass classify_miss(const ResidencyHistory& history, int pass_id) {
  if (!history.ever_resident) return MissClass::compulsory;
  if (history.last_evicted_pass == pass_id) return MissClass::collision;
  return MissClass::capacity;
}

double preserved_mass(double lost_weight, double original_weight) {
  if (lost_weight == 0.0 || original_weight <= 0.0) return 1.0;
  return std::clamp(1.0 - lost_weight / original_weight, 0.0, 1.0);
}

PrefetchAccuracy prefetch_precision_recall(const EventLog& log) {
  std::map<std::pair<int, int>, std::set<int>> demanded;
  for (const auto& r : log.records)
    if (const auto* a = std::get_if<AccessRecord>(&r)) demanded[{a->pass, a->layer}].insert(a->expert);

  PrefetchAccuracy acc;
  double p_sum = 0.0, r_sum = 0.0;
  std::uint64_t p_n = 0;
  for (const auto& r : log.records) {
    const auto* p = std::get_if<PredictionRecord>(&r);
    if (!p) continue;
    auto it = demanded.find({p->target_pass, p->target_layer});
    if (it == demanded.end()) continue;
    std::uint64_t tp = 0;
    for (int e : p->experts) tp += it->second.count(e);
    ++acc.predicted_layers;
    acc.predicted += p->experts.size();
    acc.demanded += it->second.size();
    acc.true_positives += tp;
    if (!p->experts.empty()) {
      p_sum += static_cast<double>(tp) / static_cast<double>(p->experts.size());
      ++p_n;
    }
    r_sum += static_cast<double>(tp) / static_cast<double>(it->second.size());
  }
  acc.zero_denominator = acc.predicted == 0;
  acc.precision = acc.predicted > 0 ? ratio(acc.true_positives, acc.predicted) : 1.0;
  acc.recall = acc.demanded > 0 ? ratio(acc.true_positives, acc.demanded) : 1.0;
  acc.precision_macro = p_n > 0 ? p_sum / static_cast<double>(p_n) : 1.0;
  acc.recall_macro =
      acc.predicted_layers > 0 ? r_sum / static_cast<double>(acc.predicted_layers) : 1.0;
  return acc;
}

SimReport replay(const SimConfig& config, const EventLog& log) {
  const ModelSpec& spec = config.spec;
  SimReport r;
  r.config = config;
  r.capacity_bytes = resolve_capacity(spec, config.hardware, config.working_precision);
  r.per_layer.resize(spec.num_layers);
  for (int l = 0; l < spec.num_layers; ++l) r.per_layer[l].layer = l;
  r.warnings = config_warnings(config);

  std::vector<ResidencyHistory> history(static_cast<std::size_t>(spec.num_layers) *
                                        spec.experts_per_layer);
  auto& t = r.totals;
  double original_weight = 0.0, lost_weight = 0.0;
  std::uint64_t slots = 0, executed_original = 0;
  bool saw_prefill = false;

  for (const auto& rec : log.records) {
    if (const auto* lr = std::get_if<LayerRecord>(&rec)) {
      original_weight += lr->original_weight;
      lost_weight += lr->routing_weight_loss;
      slots += static_cast<std::uint64_t>(lr->tokens) * static_cast<std::uint64_t>(lr->top_k);
    } else if (const auto* a = std::get_if<AccessRecord>(&rec)) {
      auto& ls = r.per_layer.at(a->layer);
      ++t.demanded;
      ++ls.demanded;
      switch (a->outcome) {
        case AccessOutcome::hit:
          ++t.hits;
          ++ls.hits;
          break;
        case AccessOutcome::miss: {
          ++t.misses;
          ++ls.misses;
          if (a->waited) ++t.waited_misses;
          switch (classify_miss(history[slot_of(spec, a->layer, a->expert)], a->pass)) {
            case MissClass::compulsory: ++t.compulsory_misses; ++ls.compulsory_misses; break;
            case MissClass::collision: ++t.collision_misses; ++ls.collision_misses; break;
            case MissClass::capacity: ++t.capacity_misses; ++ls.capacity_misses; break;
            case MissClass::none: break;
          }
          break;
        }
        case AccessOutcome::dropped: ++t.dropped; break;
        case AccessOutcome::substituted: ++t.substituted; break;
      }
      if (a->outcome == AccessOutcome::hit || a->outcome == AccessOutcome::miss)
        executed_original += static_cast<std::uint64_t>(a->original_selections);
      else
        lost_weight += a->weight;
      r.sync_overhead_us += a->blocked_us;
      ls.blocked_us += a->blocked_us;
    } else if (const auto* ad = std::get_if<AdmitRecord>(&rec)) {
      history[slot_of(spec, ad->key)].ever_resident = true;
    } else if (const auto* ev = std::get_if<EvictRecord>(&rec)) {
      history[slot_of(spec, ev->key)].last_evicted_pass = ev->pass;
      ++t.evictions;
      if (ev->forced) ++t.forced_evictions;
      if (!ev->forced && ev->protected_victim) ++t.unforced_protected_evictions;
    } else if (const auto* pf = std::get_if<PrefetchRecord>(&rec)) {
      switch (pf->event) {
        case PrefetchEvent::submitted: ++t.prefetch_submitted; break;
        case PrefetchEvent::started: ++t.prefetch_started; break;
        case PrefetchEvent::completed: ++t.prefetch_completed; break;
        case PrefetchEvent::skipped: ++t.prefetch_skipped; break;
        case PrefetchEvent::dropped: ++t.prefetch_dropped; break;
      }
    } else if (const auto* pr = std::get_if<PredictionRecord>(&rec)) {
      if (pr->clamped) ++t.predictions_clamped;
      if (pr->degenerate) ++t.predictions_degenerate;
      auto& ls = r.per_layer.at(pr->target_layer);
      ++ls.predictions;
      ls.predicted_experts += pr->experts.size();
    } else if (const auto* ps = std::get_if<PassRecord>(&rec)) {
      ++r.passes;
      r.total_time_us = ps->end;
      if (ps->kind == PassKind::prefill) {
        saw_prefill = true;
        r.ttft_us = ps->end;
      } else {
        ++r.decode_passes;
        r.decode_time_us += ps->end - ps->start;
        if (!saw_prefill && r.decode_passes == 1) r.ttft_us = ps->end;
      }
    }
  }

  r.decode_tokens_per_sec = r.decode_time_us > 0 ? static_cast<double>(r.decode_passes) * 1e6 /
                                                       static_cast<double>(r.decode_time_us)
                                                 : 0.0;
  r.routing_fidelity = slots > 0 ? ratio(executed_original, slots) : 1.0;
  r.weight_mass_preserved = preserved_mass(lost_weight, original_weight);
  r.prefetch = prefetch_precision_recall(log);
  return r;
}

void check_accounting(const SimReport& r) {
  const auto& t = r.totals;
  auto fail = [](const std::string& what) { throw SimError("accounting check failed: " + what); };
  if (t.hits + t.misses + t.dropped + t.substituted != t.demanded)
    fail("hits + misses + dropped + substituted != demanded");
  if (t.compulsory_misses + t.collision_misses + t.capacity_misses != t.misses)
    fail("compulsory + collision + capacity != misses");
  if (t.waited_misses > t.misses) fail("waited misses exceed misses");
  if (static_cast<int>(r.per_layer.size()) != r.config.spec.num_layers)
    fail("per-layer table length differs from the layer count");
  Totals sum;
  Micros blocked = 0;
  for (const auto& ls : r.per_layer) {
    if (ls.compulsory_misses + ls.collision_misses + ls.capacity_misses != ls.misses)
      fail("per-layer miss classes do not add up at layer " + std::to_string(ls.layer));
    if (ls.hits + ls.misses > ls.demanded)
      fail("per-layer hits + misses exceed demand at layer " + std::to_string(ls.layer));
    sum.demanded += ls.demanded;
    sum.hits += ls.hits;
    sum.misses += ls.misses;
    sum.collision_misses += ls.collision_misses;
    blocked += ls.blocked_us;
  }
  if (sum.demanded != t.demanded || sum.hits != t.hits || sum.misses != t.misses ||
      sum.collision_misses != t.collision_misses)
    fail("per-layer totals differ from run totals");
  if (blocked != r.sync_overhead_us) fail("per-layer blocked time differs from sync overhead");
  Micros compute = static_cast<Micros>(r.passes) * r.config.spec.num_layers *
                   r.config.hardware.per_layer_compute_us;
  if (r.total_time_us != compute + r.sync_overhead_us)
    fail("total time != compute time + sync overhead");
  auto unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) fail(std::string(name) + " outside [0, 1]");
  };
  unit(r.hit_rate(), "hit rate");
  unit(r.collision_rate(), "collision rate");
  unit(r.routing_fidelity, "routing fidelity");
  unit(r.weight_mass_preserved, "weight mass preserved");
  unit(r.prefetch.precision, "prefetch precision");
  unit(r.prefetch.recall, "prefetch recall");
  unit(r.prefetch.precision_macro, "prefetch macro precision");
  unit(r.prefetch.recall_macro, "prefetch macro recall");
}

namespace {

ordered_json config_to_json(const SimConfig& c) {
  ordered_json j;
  ordered_json m;
  m["name"] = c.spec.name;
  m["num_layers"] = c.spec.num_layers;
  m["experts_per_layer"] = c.spec.experts_per_layer;
  m["top_k"] = c.spec.top_k;
  m["expert_bytes_fp16"] = c.spec.expert_bytes_fp16;
  ordered_json precs = ordered_json::array();
  for (auto p : c.spec.available_precisions) precs.push_back(std::string(to_string(p)));
  m["precisions"] = precs;
  j["model"] = m;
  for (auto& [k, v] : describe(c))
    if (k != "model") j[k] = v;
  return j;
}

SimConfig config_from_json(const ordered_json& j) {
  SimConfig c;
  const auto& m = j.at("model");
  c.spec.name = m.at("name").get<std::string>();
  c.spec.num_layers = m.at("num_layers").get<int>();
  c.spec.experts_per_layer = m.at("experts_per_layer").get<int>();
  c.spec.top_k = m.at("top_k").get<int>();
  c.spec.expert_bytes_fp16 = m.at("expert_bytes_fp16").get<Bytes>();
  c.spec.available_precisions.clear();
  for (const auto& p : m.at("precisions")) c.spec.available_precisions.push_back(parse_precision(p.get<std::string>()));
  c.hardware.capacity_fraction.reset();
  c.hardware.capacity_bytes.reset();
  for (const auto& key : setting_keys()) {
    if (key == "model") continue;
    auto v = j.at(key).get<std::string>();
    if (v.empty()) continue;
    apply_setting(c, key, v);
  }
  return c;
}

ordered_json layer_to_json(const LayerStats& s) {
  ordered_json j;
  j["layer"] = s.layer;
  j["demanded"] = s.demanded;
  j["hits"] = s.hits;
  j["misses"] = s.misses;
  j["compulsory_misses"] = s.compulsory_misses;
  j["collision_misses"] = s.collision_misses;
  j["capacity_misses"] = s.capacity_misses;
  j["blocked_us"] = s.blocked_us;
  j["predictions"] = s.predictions;
  j["predicted_experts"] = s.predicted_experts;
  j["collision_rate"] = s.collision_rate();
  j["collision_share_of_misses"] = s.collision_share_of_misses();
  j["mean_prediction_size"] = s.mean_prediction_size();
  return j;
}

#define MOESIM_TOTALS(X)                                                                    \
  X(demanded) X(hits) X(misses) X(compulsory_misses) X(collision_misses) X(capacity_misses) \
  X(waited_misses) X(dropped) X(substituted) X(evictions) X(forced_evictions)               \
  X(unforced_protected_evictions) X(prefetch_submitted) X(prefetch_started)                 \
  X(prefetch_completed) X(prefetch_skipped) X(prefetch_dropped) X(predictions_clamped)      \
  X(predictions_degenerate)

ordered_json metrics_to_json(const SimReport& r) {
  ordered_json j;
  j["capacity_bytes"] = r.capacity_bytes;
  ordered_json t;
#define X(f) t[#f] = r.totals.f;
  MOESIM_TOTALS(X)
#undef X
  j["totals"] = t;
  j["rates"] = {{"hit_rate", r.hit_rate()},
                {"collision_rate", r.collision_rate()},
                {"collision_share_of_misses", r.collision_share_of_misses()}};
  j["timing"] = {{"passes", r.passes},
                 {"decode_passes", r.decode_passes},
                 {"total_time_us", r.total_time_us},
                 {"sync_overhead_us", r.sync_overhead_us},
                 {"ttft_us", r.ttft_us},
                 {"decode_time_us", r.decode_time_us},
                 {"decode_tokens_per_sec", r.decode_tokens_per_sec}};
  const auto& p = r.prefetch;
  j["prefetch"] = {{"predicted_layers", p.predicted_layers},
                   {"predicted", p.predicted},
                   {"demanded", p.demanded},
                   {"true_positives", p.true_positives},
                   {"precision", p.precision},
                   {"recall", p.recall},
                   {"precision_macro", p.precision_macro},
                   {"recall_macro", p.recall_macro},
                   {"zero_denominator", p.zero_denominator}};
  j["fidelity"] = {{"routing_fidelity", r.routing_fidelity},
                   {"weight_mass_preserved", r.weight_mass_preserved}};
  ordered_json layers = ordered_json::array();
  for (const auto& s : r.per_layer) layers.push_back(layer_to_json(s));
  j["per_layer"] = layers;
  return j;
}

}  // namespace

std::string metrics_json(const SimReport& r) { return metrics_to_json(r).dump(2) + "\n"; }

std::string report_json(const SimReport& r) {
  ordered_json j;
  j["config"] = config_to_json(r.config);
  j["metrics"] = metrics_to_json(r);
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

SimReport parse_report_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  try {
    SimReport r;
    r.config = config_from_json(j.at("config"));
    const auto& m = j.at("metrics");
    r.capacity_bytes = m.at("capacity_bytes").get<Bytes>();
    const auto& t = m.at("totals");
#define X(f) r.totals.f = t.at(#f).get<std::uint64_t>();
    MOESIM_TOTALS(X)
#undef X
    const auto& tm = m.at("timing");
    r.passes = tm.at("passes").get<int>();
    r.decode_passes = tm.at("decode_passes").get<int>();
    r.total_time_us = tm.at("total_time_us").get<Micros>();
    r.sync_overhead_us = tm.at("sync_overhead_us").get<Micros>();
    r.ttft_us = tm.at("ttft_us").get<Micros>();
    r.decode_time_us = tm.at("decode_time_us").get<Micros>();
    r.decode_tokens_per_sec = tm.at("decode_tokens_per_sec").get<double>();
    const auto& p = m.at("prefetch");
    r.prefetch.predicted_layers = p.at("predicted_layers").get<std::uint64_t>();
    r.prefetch.predicted = p.at("predicted").get<std::uint64_t>();
    r.prefetch.demanded = p.at("demanded").get<std::uint64_t>();
    r.prefetch.true_positives = p.at("true_positives").get<std::uint64_t>();
    r.prefetch.precision = p.at("precision").get<double>();
    r.prefetch.recall = p.at("recall").get<double>();
    r.prefetch.precision_macro = p.at("precision_macro").get<double>();
    r.prefetch.recall_macro = p.at("recall_macro").get<double>();
    r.prefetch.zero_denominator = p.at("zero_denominator").get<bool>();
    r.routing_fidelity = m.at("fidelity").at("routing_fidelity").get<double>();
    r.weight_mass_preserved = m.at("fidelity").at("weight_mass_preserved").get<double>();
    for (const auto& l : m.at("per_layer")) {
      LayerStats s;
      s.layer = l.at("layer").get<int>();
      s.demanded = l.at("demanded").get<std::uint64_t>();
      s.hits = l.at("hits").get<std::uint64_t>();
      s.misses = l.at("misses").get<std::uint64_t>();
      s.compulsory_misses = l.at("compulsory_misses").get<std::uint64_t>();
      s.collision_misses = l.at("collision_misses").get<std::uint64_t>();
      s.capacity_misses = l.at("capacity_misses").get<std::uint64_t>();
      s.blocked_us = l.at("blocked_us").get<Micros>();
      s.predictions = l.at("predictions").get<std::uint64_t>();
      s.predicted_experts = l.at("predicted_experts").get<std::uint64_t>();
      r.per_layer.push_back(s);
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

namespace {

const std::vector<std::string>& csv_metric_columns() {
  static const std::vector<std::string> cols = {
      "demanded",         "hits",           "misses",           "compulsory_misses",
      "collision_misses", "capacity_misses", "dropped",         "substituted",
      "prefetch_dropped", "hit_rate",       "collision_rate",   "collision_share_of_misses",
      "sync_overhead_us", "ttft_us",        "decode_tokens_per_sec", "prefetch_precision",
      "prefetch_recall",  "routing_fidelity", "weight_mass_preserved"};
  return cols;
}

}  // namespace

std::string csv_header() {
  std::string out;
  for (const auto& k : setting_keys()) out += k + ",";
  for (const auto& c : csv_metric_columns()) out += c + ",";
  out.back() = '\n';
  return out;
}

std::string csv_row(const SimReport& r) {
  std::string out;
  for (const auto& [k, v] : describe(r.config)) out += v + ",";
  const auto& t = r.totals;
  std::vector<std::string> vals = {
      std::to_string(t.demanded),
      std::to_string(t.hits),
      std::to_string(t.misses),
      std::to_string(t.compulsory_misses),
      std::to_string(t.collision_misses),
      std::to_string(t.capacity_misses),
      std::to_string(t.dropped),
      std::to_string(t.substituted),
      std::to_string(t.prefetch_dropped),
      format_real(r.hit_rate()),
      format_real(r.collision_rate()),
      format_real(r.collision_share_of_misses()),
      std::to_string(r.sync_overhead_us),
      std::to_string(r.ttft_us),
      format_real(r.decode_tokens_per_sec),
      format_real(r.prefetch.precision),
      format_real(r.prefetch.recall),
      format_real(r.routing_fidelity),
      format_real(r.weight_mass_preserved)};
  for (const auto& v : vals) out += v + ",";
  out.back() = '\n';
  return out;
}

std::string per_layer_table(const SimReport& r) {
  std::string out =
      "layer,demanded,hits,misses,compulsory_misses,collision_misses,capacity_misses,blocked_us,"
      "collision_rate,collision_share_of_misses,mean_prediction_size\n";
  for (const auto& s : r.per_layer) {
    out += std::to_string(s.layer) + "," + std::to_string(s.demanded) + "," +
           std::to_string(s.hits) + "," + std::to_string(s.misses) + "," +
           std::to_string(s.compulsory_misses) + "," + std::to_string(s.collision_misses) + "," +
           std::to_string(s.capacity_misses) + "," + std::to_string(s.blocked_us) + "," +
           format_real(s.collision_rate()) + "," + format_real(s.collision_share_of_misses()) +
           "," + format_real(s.mean_prediction_size()) + "\n";
  }
  return out;
}

namespace {

void write_file(const std::string& path, const std::string& text, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace

void write_report_json(const SimReport& r, const std::string& path) {
  check_accounting(r);
  write_file(path, report_json(r), std::ios::out | std::ios::trunc);
}

void write_per_layer_table(const SimReport& r, const std::string& path) {
  check_accounting(r);
  write_file(path, per_layer_table(r), std::ios::out | std::ios::trunc);
}

void append_csv_rows(const std::vector<SimReport>& reports, const std::string& path) {
  std::error_code ec;
  bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::string text = fresh ? csv_header() : std::string();
  for (const auto& r : reports) {
    check_accounting(r);
    text += csv_row(r);
  }
  write_file(path, text, std::ios::out | std::ios::app);
}

std::string summary_line(const SimReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "hit_rate=%.4f collision_rate=%.4f ttft_us=%lld decode_tokens_per_sec=%.3f "
                "sync_overhead_us=%lld",
                r.hit_rate(), r.collision_rate(), static_cast<long long>(r.ttft_us),
                r.decode_tokens_per_sec, static_cast<long long>(r.sync_overhead_us));
  return buf;
}

}  // namespace moesim
