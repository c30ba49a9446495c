#pragma once

#include <span>
#include <vector>

namespace moesim {

struct TopK {
  std::vector<int> indices;   // descending by score, ties to the lower index
  std::vector<float> scores;  // softmax over all experts, at indices
};

// Softmax in float32 over the whole row, then the k best entries.
std::vector<float> softmax(std::span<const float> logits);
TopK softmax_topk(std::span<const float> logits, int k);

// Indices of the k largest values of `scores`, ties to the lower index.
std::vector<int> top_indices(std::span<const float> scores, int k);

// z'[e] = z[e] + lambda * delta_avg for every cached e.
std::vector<float> apply_cache_aware_bias(std::span<const float> logits,
                                          const std::vector<bool>& cached, double lambda,
                                          double delta_avg);

enum class RoutingKind { standard, cache_aware };

struct RoutingPolicy {
  RoutingKind kind = RoutingKind::standard;
  double lambda = 0.0;  // [0, 10]

  void validate() const;
  bool operator==(const RoutingPolicy&) const = default;
};

// Per-layer running mean over every logit entry seen at that layer.
class DeltaAvgState {
 public:
  explicit DeltaAvgState(int num_layers = 0) : sum_(num_layers, 0.0), count_(num_layers, 0) {}

  double mean(int layer) const;
  long long count(int layer) const { return count_[layer]; }
  void observe(int layer, std::span<const float> logits);

 private:
  std::vector<double> sum_;
  std::vector<long long> count_;
};

struct RoutingDecision {
  std::vector<int> selected;           // by modified score, descending
  std::vector<float> weights;          // original softmax at `selected`
  std::vector<int> original_selected;  // top-k of the unmodified logits
  bool modified = false;               // selected != original_selected
};

// `cached` marks the experts of this layer currently resident.
RoutingDecision route(int layer, std::span<const float> logits_row, int k,
                      const std::vector<bool>& cached, const RoutingPolicy& policy,
                      DeltaAvgState& delta_state);

}  // namespace moesim
