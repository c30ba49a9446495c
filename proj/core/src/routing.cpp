#include "moesim/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moesim/error.hpp"

namespace moesim {

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  float max = logits[0];
  for (float v : logits) {
    if (!std::isfinite(v)) throw ConfigError("softmax: non-finite logit");
    max = std::max(max, v);
  }
  float sum = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (float& v : out) v /= sum;
  return out;
}

std::vector<int> top_indices(std::span<const float> scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min<int>(k, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

TopK softmax_topk(std::span<const float> logits, int k) {
  if (k < 1 || k > static_cast<int>(logits.size()))
    throw ConfigError("softmax_topk: k must be in [1, E]");
  auto probs = softmax(logits);
  TopK out;
  out.indices = top_indices(probs, k);
  out.scores.reserve(k);
  for (int i : out.indices) out.scores.push_back(probs[i]);
  return out;
}

std::vector<float> apply_cache_aware_bias(std::span<const float> logits,
                                          const std::vector<bool>& cached, double lambda,
                                          double delta_avg) {
  if (!std::isfinite(delta_avg)) throw ConfigError("cache-aware bias: non-finite delta_avg");
  std::vector<float> out(logits.begin(), logits.end());
  const auto bias = static_cast<float>(lambda * delta_avg);
  for (std::size_t e = 0; e < out.size(); ++e)
    if (e < cached.size() && cached[e]) out[e] += bias;
  return out;
}

void RoutingPolicy::validate() const {
  if (!(lambda >= 0.0 && lambda <= 10.0)) throw ConfigError("routing lambda must be in [0, 10]");
}

double DeltaAvgState::mean(int layer) const {
  return count_[layer] == 0 ? 0.0 : sum_[layer] / static_cast<double>(count_[layer]);
}

void DeltaAvgState::observe(int layer, std::span<const float> logits) {
  for (float v : logits) sum_[layer] += v;
  count_[layer] += static_cast<long long>(logits.size());
}

RoutingDecision route(int layer, std::span<const float> logits_row, int k,
                      const std::vector<bool>& cached, const RoutingPolicy& policy,
                      DeltaAvgState& delta_state) {
  auto probs = softmax(logits_row);
  RoutingDecision d;
  d.original_selected = top_indices(probs, k);
  if (policy.kind == RoutingKind::standard) {
    d.selected = d.original_selected;
  } else {
    // The bias uses the mean before this row is folded in.
    auto biased = apply_cache_aware_bias(logits_row, cached, policy.lambda, delta_state.mean(layer));
    d.selected = top_indices(softmax(biased), k);
    delta_state.observe(layer, logits_row);
  }
  d.weights.reserve(d.selected.size());
  for (int e : d.selected) d.weights.push_back(probs[e]);
  d.modified = d.selected != d.original_selected;
  return d;
}

}  // namespace moesim
