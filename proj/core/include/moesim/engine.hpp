#pragma once

#include <cstdint>

#include "moesim/event_log.hpp"
#include "moesim/eviction.hpp"
#include "moesim/metrics.hpp"
#include "moesim/miss_handling.hpp"
#include "moesim/model_spec.hpp"
#include "moesim/prefetch.hpp"
#include "moesim/routing.hpp"
#include "moesim/sim_config.hpp"
#include "moesim/trace.hpp"

namespace moesim {

// Cold-cache run of the whole trace. The report is a pure function of
// (config, trace). When `log` is given every event is recorded into it.
SimReport run_simulation(const SimConfig& config, const Trace& trace, EventLog* log = nullptr);

}  // namespace moesim
