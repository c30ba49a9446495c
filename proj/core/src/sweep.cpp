#include "moesim/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "moesim/engine.hpp"
#include "moesim/error.hpp"

namespace moesim {

namespace {

std::size_t dim(const std::vector<std::string>& v) { return std::max<std::size_t>(v.size(), 1); }

}  // namespace

std::size_t sweep_size(const SweepSpec& s) {
  return dim(s.presets) * dim(s.eviction) * dim(s.prefetch) * dim(s.miss) * dim(s.lambda) *
         dim(s.capacity) * dim(s.bandwidth);
}

std::vector<SimConfig> expand_sweep(const SimConfig& base, const Settings& overrides,
                                    const SweepSpec& s) {
  const std::size_t n = sweep_size(s);
  if (n > s.max_runs)
    throw ConfigError("sweep would run " + std::to_string(n) + " configurations, above the cap of " +
                      std::to_string(s.max_runs));

  struct Dim {
    const char* key;
    const std::vector<std::string>* values;
  };
  const Dim dims[] = {{"eviction", &s.eviction}, {"prefetch", &s.prefetch}, {"miss", &s.miss},
                      {"lambda", &s.lambda},     {"capacity", &s.capacity}, {"bandwidth", &s.bandwidth}};

  const std::size_t per_stack = n / dim(s.presets);
  std::vector<SimConfig> out;
  out.reserve(n);
  for (std::size_t p = 0; p < dim(s.presets); ++p) {
    SimConfig stack = base;
    if (!s.presets.empty()) apply_preset(stack, s.presets[p]);
    for (const auto& [k, v] : overrides) apply_setting(stack, k, v);
    for (std::size_t i = 0; i < per_stack; ++i) {
      SimConfig c = stack;
      // Mixed-radix decode of i, last dimension fastest.
      std::size_t rest = i;
      std::size_t stride = per_stack;
      for (const auto& d : dims) {
        stride /= dim(*d.values);
        std::size_t k = rest / stride;
        rest %= stride;
        if (d.values->empty()) continue;
        const auto& v = (*d.values)[k];
        if (std::string_view(d.key) == "eviction" && v == "base") continue;
        apply_setting(c, d.key, v);
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<RunResult> run_all(const std::vector<SimConfig>& configs, const Trace& trace,
                               unsigned jobs) {
  std::vector<RunResult> results(configs.size(), RunFailure{"not run"});
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = run_simulation(configs[i], trace);
      } catch (const std::exception& e) {
        results[i] = RunFailure{e.what()};
      }
    }
  };
  jobs = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(std::max<std::size_t>(configs.size(), 1)));
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  return results;
}

}  // namespace moesim
