#include "moesim/miss_handling.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "moesim/error.hpp"
#include "text_util.hpp"

namespace moesim {

void MissConfig::validate() const {
  if (drop_rank_threshold < 0) throw ConfigError("drop rank threshold must be >= 0");
  if (!(subst_tolerance >= 0.0)) throw ConfigError("substitution tolerance must be >= 0");
  if (!(degrade_percentile >= 0.0 && degrade_percentile <= 100.0))
    throw ConfigError("degradation percentile must be in [0, 100]");
}

MissConfig parse_miss(std::string_view token) {
  MissConfig c;
  auto colon = token.find(':');
  auto head = token.substr(0, colon);
  auto arg = colon == std::string_view::npos ? std::string_view{} : token.substr(colon + 1);
  const std::string where = "miss token '" + std::string(token) + "'";
  if (head == "fetch" && arg.empty()) {
    c.kind = MissKind::fetch;
  } else if (head == "fetch_low" && arg.empty()) {
    c.kind = MissKind::fetch_low;
  } else if (head == "fetch_priority" && arg.empty()) {
    c.kind = MissKind::fetch_priority;
  } else if (head == "fetch_priority") {
    c.kind = MissKind::fetch_priority;
    c.degrade_percentile = parse_real(arg, where);
  } else if (head == "drop") {
    c.kind = MissKind::drop;
    if (!arg.empty()) c.drop_rank_threshold = parse_int<int>(arg, where);
  } else if (head == "subst") {
    c.kind = MissKind::substitution;
    if (!arg.empty()) c.subst_tolerance = parse_real(arg, where);
  } else {
    throw ConfigError("unknown miss policy '" + std::string(token) +
                      "' (valid: fetch, fetch_low, fetch_priority, drop:<rank>, subst:<tolerance>)");
  }
  c.validate();
  return c;
}

std::string to_token(const MissConfig& c) {
  switch (c.kind) {
    case MissKind::fetch: return "fetch";
    case MissKind::fetch_low: return "fetch_low";
    case MissKind::fetch_priority: return "fetch_priority:" + format_real(c.degrade_percentile);
    case MissKind::drop: return "drop:" + std::to_string(c.drop_rank_threshold);
    case MissKind::substitution: return "subst:" + format_real(c.subst_tolerance);
  }
  return {};
}

std::vector<Precision> precision_ladder(const ModelSpec& spec, Precision working) {
  std::vector<Precision> ladder;
  for (auto p : spec.available_precisions)
    if (!higher_precision(p, working)) ladder.push_back(p);
  if (ladder.empty() || ladder.front() != working)
    throw ConfigError("working precision " + std::string(to_string(working)) +
                      " is not available for model '" + spec.name + "'");
  return ladder;
}

namespace {

MissOutcome fetch_at(const ExpertKey& key, Precision p, MissEnvironment& env) {
  MissOutcome out;
  out.kind = MissOutcomeKind::fetched;
  out.precision = p;
  ExpertKey k = key;
  k.precision = p;
  out.blocked_us = env.fetch(k);
  return out;
}

}  // namespace

MissOutcome handle_miss(const MissConfig& config, const MissRequest& request, const ModelSpec& spec,
                        Precision working, MissEnvironment& env) {
  const auto& key = request.key;
  switch (config.kind) {
    case MissKind::fetch:
      return fetch_at(key, working, env);

    case MissKind::fetch_low:
      return fetch_at(key, spec.smallest_precision(), env);

    case MissKind::fetch_priority: {
      auto ladder = precision_ladder(spec, working);
      std::size_t level = 0;
      if (request.gate_score < request.degrade_threshold && ladder.size() > 1) level = 1;
      while (level + 1 < ladder.size() && !env.admissible(expert_bytes(spec, ladder[level]))) ++level;
      return fetch_at(key, ladder[level], env);
    }

    case MissKind::drop:
      if (request.rank > config.drop_rank_threshold) {
        MissOutcome out;
        out.kind = MissOutcomeKind::dropped;
        out.weight_delta = -request.weight;
        return out;
      }
      return fetch_at(key, working, env);

    case MissKind::substitution:
      if (auto sub = env.substitute_for(key.layer, key.expert, request.gate_score,
                                        config.subst_tolerance)) {
        MissOutcome out;
        out.kind = MissOutcomeKind::substituted;
        out.substitute = ExpertKey{key.layer, *sub, working};
        out.weight_delta = -request.weight;
        return out;
      }
      return fetch_at(key, working, env);
  }
  throw ConfigError("unknown miss policy");
}

}  // namespace moesim
