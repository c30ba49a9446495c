#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "moesim/eviction.hpp"
#include "moesim/miss_handling.hpp"
#include "moesim/model_spec.hpp"
#include "moesim/prefetch.hpp"
#include "moesim/routing.hpp"

namespace moesim {

using Settings = std::vector<std::pair<std::string, std::string>>;

struct SimConfig {
  ModelSpec spec = builtin_spec("olmoe");
  HardwareSpec hardware{0.05, std::nullopt, 5 * kGB, 2000};
  Precision working_precision = Precision::int4;
  RoutingPolicy routing;
  EvictionConfig eviction;
  PrefetchConfig prefetch;
  MissConfig miss;
  std::uint64_t seed = 0;  // drives prefetch noise only

  void validate() const;
  bool operator==(const SimConfig&) const = default;
};

// Setting keys, one per SimConfig field:
//   model, capacity, capacity_bytes, bandwidth, compute_us, precision,
//   routing, lambda, eviction, sb_decay, prefetch, prefetch_noise, miss, seed
const std::vector<std::string>& setting_keys();
void apply_setting(SimConfig& config, std::string_view key, std::string_view value);

// Flat key/value view of a config, in setting_keys() order.
Settings describe(const SimConfig& config);

// `key = value` lines, '#' comments. Keys are checked, values are not.
Settings parse_config_text(std::string_view text);
Settings read_config_file(const std::string& path);
void apply_config_text(SimConfig& config, std::string_view text);
void apply_config_file(SimConfig& config, const std::string& path);

// The five named policy stacks, config1 .. config5.
std::vector<std::string> preset_names();
void apply_preset(SimConfig& config, std::string_view name);

// Warnings about legal but questionable combinations.
std::vector<std::string> config_warnings(const SimConfig& config);

}  // namespace moesim
