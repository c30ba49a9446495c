#pragma once

#include <optional>
#include <set>
#include <vector>

#include "moesim/model_spec.hpp"

namespace moesim {

// Resident experts with byte accounting. Bytes reserved for in-flight
// transfers count against capacity until the transfer lands.
class CacheState {
 public:
  CacheState(const ModelSpec& spec, Bytes capacity);

  Bytes capacity() const { return capacity_; }
  Bytes used() const { return used_; }
  Bytes reserved() const { return reserved_; }
  Bytes free() const { return capacity_ - used_ - reserved_; }

  bool resident(int layer, int expert) const;
  bool resident(const ExpertKey& key) const { return resident(key.layer, key.expert); }
  std::optional<Precision> resident_precision(const ExpertKey& key) const;
  Bytes resident_bytes(const ExpertKey& key) const;

  // Ordered by (layer, expert).
  const std::set<ExpertKey>& residents() const { return residents_; }
  std::size_t size() const { return residents_.size(); }

  // Resident experts of one layer, indexed by expert.
  std::vector<bool> layer_mask(int layer) const;

  // Admits `key` with `bytes`; an existing copy of the same (layer, expert)
  // is replaced and its bytes freed in the same step.
  void admit(const ExpertKey& key, Bytes bytes);
  void evict(const ExpertKey& key);

  void reserve(Bytes bytes);
  void release(Bytes bytes);

 private:
  const ModelSpec* spec_;
  Bytes capacity_;
  Bytes used_ = 0;
  Bytes reserved_ = 0;
  std::vector<Bytes> bytes_;  // per slot; 0 when absent
  std::set<ExpertKey> residents_;
};

}  // namespace moesim
