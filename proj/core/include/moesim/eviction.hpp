#pragma once

#include <deque>
#include <compare>
#include <list>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "moesim/cache.hpp"
#include "moesim/model_spec.hpp"

namespace moesim {

enum class EvictionKind { lru, lfu, lhu, fld, sb, ls };

std::string_view to_string(EvictionKind kind);
EvictionKind parse_eviction(std::string_view token);

struct EvictionConfig {
  EvictionKind kind = EvictionKind::lru;
  double sb_decay = 0.9;  // per-pass decay of the score-based signal

  bool operator==(const EvictionConfig&) const = default;
};

struct AccessContext {
  int current_layer = 0;
  int pass_id = 0;
  float gate_score = 0.0f;
  Precision precision = Precision::fp16;
};

struct VictimContext {
  int current_layer = 0;
  int pass_id = 0;
  // Experts of current_layer still waiting to be served; never chosen.
  const std::vector<bool>* pending = nullptr;

  bool pinned(const ExpertKey& key) const {
    return pending && key.layer == current_layer && (*pending)[key.expert];
  }
};

class EvictionPolicy {
 public:
  virtual ~EvictionPolicy() = default;

  virtual EvictionKind kind() const = 0;

  // Demand use of a resident (or just-fetched) expert.
  virtual void note_access(const ExpertKey& key, const AccessContext& ctx) = 0;
  // A prefetch landed, or a prefetch prediction found the expert resident.
  virtual void note_prefetched(const ExpertKey& key, const AccessContext& ctx) = 0;
  virtual void note_evicted(const ExpertKey& key) = 0;

  // pass_id must strictly increase across calls.
  void begin_pass(int pass_id);

  // `forced` is true when a demand miss needs room; prefetch asks with false.
  virtual std::optional<ExpertKey> select_victim(const CacheState& cache, const VictimContext& ctx,
                                                 bool forced) = 0;

  // True for experts the policy protects from unforced eviction.
  virtual bool is_protected(const ExpertKey&) const { return false; }

 protected:
  virtual void on_begin_pass(int) {}

 private:
  std::optional<int> last_pass_;
};

std::unique_ptr<EvictionPolicy> make_eviction_policy(const EvictionConfig& config,
                                                     const ModelSpec& spec,
                                                     Precision high_precision);

class LruPolicy final : public EvictionPolicy {
 public:
  explicit LruPolicy(const ModelSpec& spec) : spec_(&spec) {}
  EvictionKind kind() const override { return EvictionKind::lru; }
  void note_access(const ExpertKey& key, const AccessContext& ctx) override;
  void note_prefetched(const ExpertKey& key, const AccessContext& ctx) override;
  void note_evicted(const ExpertKey& key) override;
  std::optional<ExpertKey> select_victim(const CacheState&, const VictimContext&, bool) override;

  // Oldest first.
  std::vector<ExpertKey> recency_order() const { return {order_.begin(), order_.end()}; }

 private:
  const ModelSpec* spec_;
  std::list<ExpertKey> order_;
  std::unordered_map<std::size_t, std::list<ExpertKey>::iterator> where_;
};

// LFU and LHU share the counting machinery; LHU only counts accesses served
// at the run's high precision.
class FrequencyPolicy final : public EvictionPolicy {
 public:
  FrequencyPolicy(const ModelSpec& spec, bool high_precision_only, Precision high_precision);
  EvictionKind kind() const override { return high_only_ ? EvictionKind::lhu : EvictionKind::lfu; }
  void note_access(const ExpertKey& key, const AccessContext& ctx) override;
  void note_prefetched(const ExpertKey& key, const AccessContext& ctx) override;
  void note_evicted(const ExpertKey&) override {}
  std::optional<ExpertKey> select_victim(const CacheState&, const VictimContext&, bool) override;

  std::uint64_t count(const ExpertKey& key) const { return count_[slot_of(*spec_, key)]; }

 private:
  const ModelSpec* spec_;
  bool high_only_;
  Precision high_;
  std::uint64_t tick_ = 0;
  std::vector<std::uint64_t> count_;
  std::vector<std::uint64_t> last_access_;
};

class FarthestLayerPolicy final : public EvictionPolicy {
 public:
  explicit FarthestLayerPolicy(const ModelSpec& spec) : spec_(&spec) {}
  EvictionKind kind() const override { return EvictionKind::fld; }
  void note_access(const ExpertKey&, const AccessContext&) override {}
  void note_prefetched(const ExpertKey&, const AccessContext&) override {}
  void note_evicted(const ExpertKey&) override {}
  std::optional<ExpertKey> select_victim(const CacheState&, const VictimContext&, bool) override;

 private:
  const ModelSpec* spec_;
};

class ScoreBasedPolicy final : public EvictionPolicy {
 public:
  ScoreBasedPolicy(const ModelSpec& spec, double decay);
  EvictionKind kind() const override { return EvictionKind::sb; }
  void note_access(const ExpertKey& key, const AccessContext& ctx) override;
  void note_prefetched(const ExpertKey&, const AccessContext&) override {}
  void note_evicted(const ExpertKey&) override {}
  std::optional<ExpertKey> select_victim(const CacheState&, const VictimContext&, bool) override;

  // Decayed signal as of `pass_id`.
  double signal(const ExpertKey& key, int pass_id) const;

 private:
  const ModelSpec* spec_;
  double decay_;
  std::vector<double> value_;
  std::vector<int> stamp_;
};

// Least-Stale: experts touched in the running pass sit in the current queue,
// everything older in the stale queue. An expert of a layer the pass has
// reached (at or before the running layer) is "reached"; the rest are ahead.
// Prefetch may only take a reached stale expert. A demand miss takes, in
// order: reached stale, reached current, ahead stale, ahead current.
// Reached experts leave lowest layer first, ahead experts farthest first;
// ties go to whichever entered its queue earlier.
class LeastStalePolicy final : public EvictionPolicy {
 public:
  explicit LeastStalePolicy(const ModelSpec& spec);
  EvictionKind kind() const override { return EvictionKind::ls; }
  void note_access(const ExpertKey& key, const AccessContext& ctx) override;
  void note_prefetched(const ExpertKey& key, const AccessContext& ctx) override;
  void note_evicted(const ExpertKey& key) override;
  std::optional<ExpertKey> select_victim(const CacheState&, const VictimContext&, bool forced) override;
  bool is_protected(const ExpertKey& key) const override;

  // Queue contents, head first.
  std::vector<ExpertKey> stale_queue() const;
  std::vector<ExpertKey> current_queue() const;
  bool in_stale(const ExpertKey& key) const;
  bool in_current(const ExpertKey& key) const;

 protected:
  void on_begin_pass(int pass_id) override;

 private:
  enum class Where : std::uint8_t { none, stale, current };
  struct Entry {
    int layer;
    std::uint64_t seq;
    int expert;
    auto operator<=>(const Entry&) const = default;
  };

  Entry entry_of(const ExpertKey& key) const;
  void remove(const ExpertKey& key);

  const ModelSpec* spec_;
  std::set<Entry> stale_;
  std::set<Entry> current_;
  std::vector<Where> where_;
  std::vector<std::uint64_t> seq_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace moesim
