#include "moesim/cache.hpp"

#include "moesim/error.hpp"

namespace moesim {

CacheState::CacheState(const ModelSpec& spec, Bytes capacity)
    : spec_(&spec),
      capacity_(capacity),
      bytes_(static_cast<std::size_t>(spec.num_layers) * spec.experts_per_layer, 0) {}

bool CacheState::resident(int layer, int expert) const {
  return bytes_[slot_of(*spec_, layer, expert)] != 0;
}

std::optional<Precision> CacheState::resident_precision(const ExpertKey& key) const {
  auto it = residents_.find(key);
  if (it == residents_.end()) return std::nullopt;
  return it->precision;
}

Bytes CacheState::resident_bytes(const ExpertKey& key) const { return bytes_[slot_of(*spec_, key)]; }

std::vector<bool> CacheState::layer_mask(int layer) const {
  std::vector<bool> mask(spec_->experts_per_layer, false);
  for (int e = 0; e < spec_->experts_per_layer; ++e) mask[e] = resident(layer, e);
  return mask;
}

void CacheState::admit(const ExpertKey& key, Bytes bytes) {
  if (bytes == 0) throw SimError("cache: admitting a zero-byte expert");
  auto& slot = bytes_[slot_of(*spec_, key)];
  Bytes after = used_ - slot + bytes;
  if (after + reserved_ > capacity_) throw SimError("cache: admission exceeds capacity");
  used_ = after;
  slot = bytes;
  residents_.erase(key);
  residents_.insert(key);
}

void CacheState::evict(const ExpertKey& key) {
  auto& slot = bytes_[slot_of(*spec_, key)];
  if (slot == 0) throw SimError("cache: evicting a non-resident expert");
  used_ -= slot;
  slot = 0;
  residents_.erase(key);
}

void CacheState::reserve(Bytes bytes) {
  if (bytes > free()) throw SimError("cache: reservation exceeds free space");
  reserved_ += bytes;
}

void CacheState::release(Bytes bytes) {
  if (bytes > reserved_) throw SimError("cache: releasing more than reserved");
  reserved_ -= bytes;
}

}  // namespace moesim
