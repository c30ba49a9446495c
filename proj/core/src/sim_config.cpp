#include "moesim/sim_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "moesim/error.hpp"
#include "text_util.hpp"

namespace moesim {

void SimConfig::validate() const {
  spec.validate();
  hardware.validate();
  if (!spec.has_precision(working_precision))
    throw ConfigError("working precision " + std::string(to_string(working_precision)) +
                      " is not available for model '" + spec.name + "'");
  routing.validate();
  if (!(eviction.sb_decay > 0.0 && eviction.sb_decay <= 1.0))
    throw ConfigError("sb_decay must be in (0, 1]");
  prefetch.validate();
  miss.validate();
  resolve_capacity(spec, hardware, working_precision);
}

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = {
      "model",   "capacity", "capacity_bytes", "bandwidth", "compute_us",     "precision", "routing",
      "lambda",  "eviction", "sb_decay",       "prefetch",  "prefetch_noise", "miss",      "seed"};
  return keys;
}

void apply_setting(SimConfig& c, std::string_view key, std::string_view raw) {
  auto value = trim(raw);
  const std::string where = "setting '" + std::string(key) + "'";
  if (key == "model") {
    c.spec = resolve_model_spec(std::string(value));
  } else if ((key == "capacity" || key == "capacity_bytes") && value.empty()) {
    // The unused form of capacity is written empty; nothing to apply.
  } else if (key == "capacity") {
    c.hardware.capacity_fraction = parse_real(value, where);
    c.hardware.capacity_bytes.reset();
  } else if (key == "capacity_bytes") {
    c.hardware.capacity_bytes = parse_int<Bytes>(value, where);
    c.hardware.capacity_fraction.reset();
  } else if (key == "bandwidth") {
    if (value == "inf" || value == "unlimited") {
      c.hardware.bandwidth_bytes_per_sec.reset();
    } else {
      double bw = parse_real(value, where);
      if (!(bw > 0.0)) throw ConfigError(where + ": bandwidth must be positive");
      c.hardware.bandwidth_bytes_per_sec = static_cast<std::uint64_t>(bw);
    }
  } else if (key == "compute_us") {
    c.hardware.per_layer_compute_us = parse_int<Micros>(value, where);
  } else if (key == "precision") {
    c.working_precision = parse_precision(value);
  } else if (key == "routing") {
    if (value == "standard") {
      c.routing.kind = RoutingKind::standard;
    } else if (value == "cache_aware") {
      c.routing.kind = RoutingKind::cache_aware;
    } else {
      throw ConfigError("unknown routing '" + std::string(value) + "' (valid: standard, cache_aware)");
    }
  } else if (key == "lambda") {
    c.routing.lambda = parse_real(value, where);
  } else if (key == "eviction") {
    c.eviction.kind = parse_eviction(value);
  } else if (key == "sb_decay") {
    c.eviction.sb_decay = parse_real(value, where);
  } else if (key == "prefetch") {
    double noise = c.prefetch.noise;
    c.prefetch = parse_prefetch(value);
    c.prefetch.noise = noise;
  } else if (key == "prefetch_noise") {
    c.prefetch.noise = parse_real(value, where);
  } else if (key == "miss") {
    c.miss = parse_miss(value);
  } else if (key == "seed") {
    c.seed = parse_int<std::uint64_t>(value, where);
  } else {
    std::string valid;
    for (const auto& k : setting_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw ConfigError("unknown setting '" + std::string(key) + "' (valid: " + valid + ")");
  }
}

std::vector<std::pair<std::string, std::string>> describe(const SimConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("model", c.spec.name);
  out.emplace_back("capacity",
                   c.hardware.capacity_fraction ? format_real(*c.hardware.capacity_fraction) : "");
  out.emplace_back("capacity_bytes",
                   c.hardware.capacity_bytes ? std::to_string(*c.hardware.capacity_bytes) : "");
  out.emplace_back("bandwidth", c.hardware.bandwidth_bytes_per_sec
                                    ? std::to_string(*c.hardware.bandwidth_bytes_per_sec)
                                    : "inf");
  out.emplace_back("compute_us", std::to_string(c.hardware.per_layer_compute_us));
  out.emplace_back("precision", std::string(to_string(c.working_precision)));
  out.emplace_back("routing", c.routing.kind == RoutingKind::standard ? "standard" : "cache_aware");
  out.emplace_back("lambda", format_real(c.routing.lambda));
  out.emplace_back("eviction", std::string(to_string(c.eviction.kind)));
  out.emplace_back("sb_decay", format_real(c.eviction.sb_decay));
  out.emplace_back("prefetch", to_token(c.prefetch));
  out.emplace_back("prefetch_noise", format_real(c.prefetch.noise));
  out.emplace_back("miss", to_token(c.miss));
  out.emplace_back("seed", std::to_string(c.seed));
  return out;
}

Settings parse_config_text(std::string_view text) {
  Settings out;
  int line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    auto body = trim(strip_comment(line));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key(trim(body.substr(0, eq)));
    const auto& keys = setting_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown setting '" + key + "'");
    out.emplace_back(std::move(key), std::string(trim(body.substr(eq + 1))));
  }
  return out;
}

void apply_config_text(SimConfig& c, std::string_view text) {
  for (const auto& [key, value] : parse_config_text(text)) {
    try {
      apply_setting(c, key, value);
    } catch (const std::runtime_error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
}

namespace {

std::string slurp_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Settings read_config_file(const std::string& path) {
  try {
    return parse_config_text(slurp_config(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_config_file(SimConfig& c, const std::string& path) {
  std::string text = slurp_config(path);
  try {
    apply_config_text(c, text);
  } catch (const std::runtime_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<std::string> preset_names() {
  return {"config1", "config2", "config3", "config4", "config5"};
}

void apply_preset(SimConfig& c, std::string_view name) {
  auto set = [&](const char* prefetch, const char* eviction, const char* miss, const char* routing,
                 double lambda) {
    apply_setting(c, "prefetch", prefetch);
    apply_setting(c, "eviction", eviction);
    apply_setting(c, "miss", miss);
    apply_setting(c, "routing", routing);
    c.routing.lambda = lambda;
  };
  if (name == "config1") {
    set("topk:1", "lru", "fetch", "standard", 0.0);
  } else if (name == "config2") {
    set("score:80", "sb", "subst", "standard", 0.0);
  } else if (name == "config3") {
    set("topk:1", "lhu", "fetch_priority", "standard", 0.0);
  } else if (name == "config4") {
    set("none", "lru", "fetch", "cache_aware", 0.3);
  } else if (name == "config5") {
    set("score:80", "ls", "fetch", "standard", 0.0);
  } else {
    throw ConfigError("unknown preset '" + std::string(name) +
                      "' (valid: config1, config2, config3, config4, config5)");
  }
}

std::vector<std::string> config_warnings(const SimConfig& c) {
  std::vector<std::string> out;
  if (c.eviction.kind == EvictionKind::lhu && c.miss.kind != MissKind::fetch_priority)
    out.push_back("lhu eviction is meant to pair with the fetch_priority cascade");
  if (c.routing.kind == RoutingKind::cache_aware && c.routing.lambda == 0.0)
    out.push_back("cache_aware routing with lambda 0 reduces to standard routing");
  return out;
}

}  // namespace moesim
