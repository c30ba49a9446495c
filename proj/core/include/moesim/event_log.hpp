#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "moesim/model_spec.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class AccessOutcome : std::uint8_t { hit, miss, dropped, substituted };
enum class MissClass : std::uint8_t { none, compulsory, collision, capacity };
enum class TransferCause : std::uint8_t { demand, prefetch };
enum class PrefetchEvent : std::uint8_t { submitted, started, completed, dropped, skipped };

std::string_view to_string(AccessOutcome o);
std::string_view to_string(MissClass c);
std::string_view to_string(PrefetchEvent e);

// Start of one layer's execution.
struct LayerRecord {
  int pass = 0;
  int layer = 0;
  int tokens = 0;
  int top_k = 0;
  int modified_rows = 0;         // rows whose selection differs from the original top-k
  double original_weight = 0.0;  // summed router weight of the original top-k over all rows
  double routing_weight_loss = 0.0;  // original top-k weight minus selected weight, modified rows
  Micros time = 0;
};

// One demanded unique expert within a layer event.
struct AccessRecord {
  int pass = 0;
  int layer = 0;
  int token = 0;  // first token row that selected it
  int expert = 0;
  int rank = 1;
  AccessOutcome outcome = AccessOutcome::hit;
  MissClass miss_class = MissClass::none;
  bool waited = false;  // demand found the expert in flight
  Precision precision = Precision::fp16;
  int substitute = -1;
  Micros time = 0;
  Micros blocked_us = 0;
  int original_selections = 0;  // selecting rows where it is also in the unmodified top-k
  double weight = 0.0;          // original router weight summed over selecting rows
};

struct AdmitRecord {
  ExpertKey key;
  int pass = 0;
  Micros time = 0;
  TransferCause cause = TransferCause::demand;
};

struct EvictRecord {
  ExpertKey key;
  int pass = 0;
  int layer = 0;
  Micros time = 0;
  bool forced = false;
  bool protected_victim = false;
  TransferCause cause = TransferCause::demand;
};

struct PrefetchRecord {
  PrefetchEvent event = PrefetchEvent::submitted;
  ExpertKey key;
  int pass = 0;
  Micros time = 0;
};

// Prediction made at (source_pass, source_layer) for (target_pass, target_layer).
struct PredictionRecord {
  int source_pass = 0;
  int source_layer = 0;
  int target_pass = 0;
  int target_layer = 0;
  std::vector<int> experts;
  bool clamped = false;
  bool degenerate = false;
};

struct PassRecord {
  int pass = 0;
  PassKind kind = PassKind::decode;
  Micros start = 0;
  Micros end = 0;
};

using LogRecord = std::variant<LayerRecord, AccessRecord, AdmitRecord, EvictRecord, PrefetchRecord,
                               PredictionRecord, PassRecord>;

struct EventLog {
  std::vector<LogRecord> records;

  template <typename R>
  std::size_t push(R r) {
    records.emplace_back(std::move(r));
    return records.size() - 1;
  }
};

}  // namespace moesim
