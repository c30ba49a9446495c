#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "moesim/metrics.hpp"
#include "moesim/sim_config.hpp"
#include "moesim/trace.hpp"

namespace moesim {

// Value lists for the swept dimensions. An empty list leaves the dimension
// at its base value; the eviction value "base" keeps the stack's own policy.
struct SweepSpec {
  std::vector<std::string> presets;
  std::vector<std::string> eviction;
  std::vector<std::string> prefetch;
  std::vector<std::string> miss;
  std::vector<std::string> lambda;
  std::vector<std::string> capacity;
  std::vector<std::string> bandwidth;
  std::size_t max_runs = 1000;
};

std::size_t sweep_size(const SweepSpec& sweep);

// Cartesian product in a fixed order: preset, eviction, prefetch, miss,
// lambda, capacity, bandwidth (last varies fastest). Each run starts from
// `base`, takes its preset, then `overrides`, then the swept values.
// Throws ConfigError naming the count when the product exceeds max_runs.
// Configs are not validated here; run_all reports invalid ones per row.
std::vector<SimConfig> expand_sweep(const SimConfig& base, const Settings& overrides,
                                    const SweepSpec& sweep);

struct RunFailure {
  std::string message;
};

using RunResult = std::variant<SimReport, RunFailure>;

// Runs every config against `trace` on up to `jobs` threads; results keep
// the input order.
std::vector<RunResult> run_all(const std::vector<SimConfig>& configs, const Trace& trace,
                               unsigned jobs);

}  // namespace moesim
