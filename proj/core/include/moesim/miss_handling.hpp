#pragma once

#include <optional>
#include <string>

#include "moesim/model_spec.hpp"

namespace moesim {

enum class MissKind { fetch, fetch_low, fetch_priority, drop, substitution };

struct MissConfig {
  MissKind kind = MissKind::fetch;
  int drop_rank_threshold = 2;       // drop: ranks above this are skipped
  double subst_tolerance = 0.05;     // substitution: max |score difference|
  double degrade_percentile = 60.0;  // fetch_priority: scores below this go one level down

  void validate() const;
  bool operator==(const MissConfig&) const = default;
};

// fetch | fetch_low | fetch_priority | drop:<rank> | subst:<tolerance>
MissConfig parse_miss(std::string_view token);
std::string to_token(const MissConfig& config);

struct MissRequest {
  ExpertKey key;
  int rank = 1;              // 1 = highest routing weight
  float gate_score = 0.0f;   // original softmax score
  double weight = 0.0;       // original router weight mass carried by this expert
  // fetch_priority: gate scores strictly below this are degraded one level.
  float degrade_threshold = 0.0f;
};

enum class MissOutcomeKind { fetched, dropped, substituted };

struct MissOutcome {
  MissOutcomeKind kind = MissOutcomeKind::fetched;
  Precision precision = Precision::fp16;  // fetched copy
  std::optional<ExpertKey> substitute;    // substituted
  Micros blocked_us = 0;
  double weight_delta = 0.0;
};

// What the simulator exposes to the miss policies.
class MissEnvironment {
 public:
  virtual ~MissEnvironment() = default;
  // Synchronous demand fetch; returns the time compute stayed blocked.
  virtual Micros fetch(const ExpertKey& key) = 0;
  // Whether `bytes` fit once every evictable expert is gone.
  virtual bool admissible(Bytes bytes) const = 0;
  // Resident expert of `layer` whose recorded gate score is closest to
  // `score` and within `tolerance`; ties to the lower index.
  virtual std::optional<int> substitute_for(int layer, int expert, float score,
                                            double tolerance) const = 0;
};

// Resolves one demand miss. `working` is the precision experts are normally held at.
MissOutcome handle_miss(const MissConfig& config, const MissRequest& request, const ModelSpec& spec,
                        Precision working, MissEnvironment& env);

// The precision ladder from `working` down to the smallest available level.
std::vector<Precision> precision_ladder(const ModelSpec& spec, Precision working);

}  // namespace moesim
