#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "moesim/event_log.hpp"
#include "moesim/sim_config.hpp"

namespace moesim {

struct Totals {
  std::uint64_t demanded = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t compulsory_misses = 0;
  std::uint64_t collision_misses = 0;
  std::uint64_t capacity_misses = 0;
  std::uint64_t waited_misses = 0;  // demand found its expert in flight
  std::uint64_t dropped = 0;
  std::uint64_t substituted = 0;
  std::uint64_t evictions = 0;
  std::uint64_t forced_evictions = 0;
  std::uint64_t unforced_protected_evictions = 0;
  std::uint64_t prefetch_submitted = 0;
  std::uint64_t prefetch_started = 0;
  std::uint64_t prefetch_completed = 0;
  std::uint64_t prefetch_skipped = 0;
  std::uint64_t prefetch_dropped = 0;
  std::uint64_t predictions_clamped = 0;
  std::uint64_t predictions_degenerate = 0;

  bool operator==(const Totals&) const = default;
};

struct LayerStats {
  int layer = 0;
  std::uint64_t demanded = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t compulsory_misses = 0;
  std::uint64_t collision_misses = 0;
  std::uint64_t capacity_misses = 0;
  Micros blocked_us = 0;
  std::uint64_t predictions = 0;        // prediction sets aimed at this layer
  std::uint64_t predicted_experts = 0;  // summed set sizes

  double collision_rate() const;             // collision / demanded
  double collision_share_of_misses() const;  // collision / misses
  double mean_prediction_size() const;

  bool operator==(const LayerStats&) const = default;
};

struct PrefetchAccuracy {
  std::uint64_t predicted_layers = 0;
  std::uint64_t predicted = 0;        // summed |predicted|
  std::uint64_t demanded = 0;         // summed |demanded| over predicted layers
  std::uint64_t true_positives = 0;   // summed |predicted ∩ demanded|
  double precision = 1.0;             // micro (headline)
  double recall = 1.0;
  double precision_macro = 1.0;
  double recall_macro = 1.0;
  bool zero_denominator = false;      // no expert was ever predicted

  bool operator==(const PrefetchAccuracy&) const = default;
};

struct SimReport {
  SimConfig config;
  Bytes capacity_bytes = 0;
  Totals totals;
  std::vector<LayerStats> per_layer;
  PrefetchAccuracy prefetch;
  int passes = 0;
  int decode_passes = 0;
  Micros total_time_us = 0;
  Micros sync_overhead_us = 0;
  Micros ttft_us = 0;
  Micros decode_time_us = 0;
  double decode_tokens_per_sec = 0.0;
  double routing_fidelity = 1.0;
  double weight_mass_preserved = 1.0;
  std::vector<std::string> warnings;

  double hit_rate() const;
  double collision_rate() const;             // collision / demanded
  double collision_share_of_misses() const;  // collision / misses

  bool operator==(const SimReport&) const = default;
};

// What classification needs to know about one (layer, expert).
struct ResidencyHistory {
  bool ever_resident = false;
  int last_evicted_pass = -1;
};

MissClass classify_miss(const ResidencyHistory& history, int pass_id);

// 1 - lost / original, clamped to [0, 1]; exactly 1 when nothing was lost.
double preserved_mass(double lost_weight, double original_weight);

// Micro and macro precision/recall over every prediction whose target layer ran.
PrefetchAccuracy prefetch_precision_recall(const EventLog& log);

// Every metric recomputed from the event log alone.
SimReport replay(const SimConfig& config, const EventLog& log);

// Throws SimError when an accounting identity or range check fails.
void check_accounting(const SimReport& report);

// The metrics part of the report, without the config echo or warnings.
std::string metrics_json(const SimReport& report);
// Full report: {"config": ..., "metrics": ...}.
std::string report_json(const SimReport& report);
SimReport parse_report_json(std::string_view text);

std::string csv_header();
std::string csv_row(const SimReport& report);
// Per-layer table, one header line and exactly L data rows.
std::string per_layer_table(const SimReport& report);

// Writers check accounting first; IO failures name the path.
void write_report_json(const SimReport& report, const std::string& path);
void write_per_layer_table(const SimReport& report, const std::string& path);
// Appends rows, writing the header only when the file is new or empty.
void append_csv_rows(const std::vector<SimReport>& reports, const std::string& path);

// One human-readable line: hit rate, collision rate, TTFT, tokens/sec.
std::string summary_line(const SimReport& report);

}  // namespace moesim
