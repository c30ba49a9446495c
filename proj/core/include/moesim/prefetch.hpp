#pragma once

#include <deque>
#include <span>
#include <string>
#include <vector>

#include "moesim/model_spec.hpp"

namespace moesim {

enum class PrefetchMode { none, topk, score, oracle };

struct PrefetchConfig {
  PrefetchMode mode = PrefetchMode::none;
  double overfetch = 1.0;     // topk: multiplier on k, >= 1
  double percentile = 80.0;   // score: [0, 100)
  double noise = 0.0;         // probability of swapping each prediction for a random expert

  void validate() const;
  bool operator==(const PrefetchConfig&) const = default;
};

// none | topk:<overfetch> | score:<percentile> | oracle
PrefetchConfig parse_prefetch(std::string_view token);
std::string to_token(const PrefetchConfig& config);

struct ScoredExpert {
  int expert = 0;
  float score = 0.0f;
  bool operator==(const ScoredExpert&) const = default;
};

struct Prediction {
  std::vector<ScoredExpert> experts;  // descending score, ties to the lower index
  bool clamped = false;               // topk asked for more than E experts
  bool degenerate = false;            // score mode found no expert above the threshold
};

// Top ceil(k * overfetch) experts by softmax score, clamped to E.
Prediction predict_topk(std::span<const float> logits_row, int k, double overfetch);

// Experts whose softmax score strictly exceeds the nearest-rank p-th
// percentile of the row's scores.
Prediction predict_score_percentile(std::span<const float> logits_row, double percentile);

// Nearest-rank percentile of `values` (copied and sorted ascending).
float nearest_rank_percentile(std::vector<float> values, double percentile);

// Union over token rows keeping each expert's best score, re-sorted.
Prediction merge_predictions(const std::vector<Prediction>& per_token);

struct PrefetchRequest {
  ExpertKey key;
  int target_layer = 0;
  float predicted_score = 0.0f;
  Micros submit_time_us = 0;
  int pass_id = 0;  // pass whose prediction produced the request
};

using PrefetchQueue = std::deque<PrefetchRequest>;

}  // namespace moesim
