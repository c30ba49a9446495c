// moesim: trace generation, single runs and policy sweeps.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "moesim/engine.hpp"
#include "moesim/error.hpp"
#include "moesim/metrics.hpp"
#include "moesim/sim_config.hpp"
#include "moesim/sweep.hpp"
#include "moesim/trace.hpp"

namespace fs = std::filesystem;
using namespace moesim;

namespace {

std::string output_dir() {
  const char* env = std::getenv("MOESIM_OUTPUT_DIR");
  return env && *env ? env : ".";
}

std::string in_output_dir(const std::string& name) { return (fs::path(output_dir()) / name).string(); }

// Flags shared by run and sweep. Each maps onto one setting key.
struct SettingFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::vector<std::pair<std::string, std::string>> values;

  void add(CLI::App& app, bool lists) {
    app.add_option("--config", config_path, "key = value file applied after the preset");
    if (!lists) app.add_option("--preset", preset, "named policy stack: config1 .. config5");
    struct Flag {
      const char* key;
      const char* flag;
      const char* help;
      bool listable;
    };
    static const Flag flags[] = {
        {"capacity", "--capacity", "cache size as a fraction of the expert store", true},
        {"capacity_bytes", "--capacity-bytes", "cache size in bytes", false},
        {"bandwidth", "--bandwidth", "host-to-device bytes/sec, or inf", true},
        {"compute_us", "--compute-us", "compute time per layer in microseconds", false},
        {"precision", "--precision", "working precision: fp16|int8|int4|int2", false},
        {"routing", "--routing", "standard|cache_aware", false},
        {"lambda", "--lambda", "cache-aware routing strength", true},
        {"eviction", "--eviction", "lru|lfu|lhu|fld|sb|ls", true},
        {"sb_decay", "--sb-decay", "per-pass decay of the score-based signal", false},
        {"prefetch", "--prefetch", "none|topk:<overfetch>|score:<percentile>|oracle", true},
        {"prefetch_noise", "--prefetch-noise", "probability of swapping a predicted expert", false},
        {"miss", "--miss", "fetch|fetch_low|fetch_priority|drop:<rank>|subst:<tolerance>", true},
        {"seed", "--seed", "seed for prediction noise", false},
    };
    values.resize(std::size(flags));
    for (std::size_t i = 0; i < std::size(flags); ++i) {
      const auto& f = flags[i];
      std::string help = f.help;
      if (lists && f.listable) help += " (comma-separated list sweeps it)";
      values[i].first = f.key;
      options.emplace_back(f.key, app.add_option(f.flag, values[i].second, help));
    }
  }

  bool given(std::size_t i) const { return options[i].second->count() > 0; }

  // Config file settings, then explicit flags, in that order. Flags listed
  // in `skip` are left out.
  Settings overrides(const std::vector<std::string>& skip = {}) const {
    Settings out;
    if (!config_path.empty()) out = read_config_file(config_path);
    for (std::size_t i = 0; i < values.size(); ++i)
      if (given(i) && std::find(skip.begin(), skip.end(), values[i].first) == skip.end())
        out.push_back(values[i]);
    return out;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(',', start);
    if (pos == std::string::npos) pos = s.size();
    if (pos > start) out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

// The model comes from the trace; a config file naming another model is an error.
Settings take_model(Settings settings, const Trace& trace) {
  Settings out;
  for (auto& [k, v] : settings) {
    if (k == "model") {
      ModelSpec wanted = resolve_model_spec(v);
      if (!(wanted == trace.spec))
        throw ConfigError("configuration names model '" + v + "' but the trace was generated for '" +
                          trace.spec.name + "'");
      continue;
    }
    out.emplace_back(std::move(k), std::move(v));
  }
  return out;
}

void print_config(const SimConfig& c) {
  for (const auto& [k, v] : describe(c)) std::cout << k << " = " << v << "\n";
}

int cmd_gen_trace(const std::string& model, std::uint64_t seed, int prefill, int decode,
                  double affinity, double skew, std::string out) {
  ModelSpec spec = resolve_model_spec(model);
  SyntheticParams p;
  p.seed = seed;
  p.prefill_tokens = prefill;
  p.decode_tokens = decode;
  p.affinity = affinity;
  p.skew = skew;
  Trace trace = generate_synthetic(spec, p);
  if (out.empty()) out = in_output_dir(spec.name + "-s" + std::to_string(seed) + ".trc");
  write_trace(trace, out);
  std::cout << "model " << spec.name << ": " << spec.num_layers << " layers, "
            << spec.experts_per_layer << " experts/layer, top-" << spec.top_k << ", "
            << spec.expert_bytes_fp16 << " bytes/expert at fp16\n"
            << "wrote " << trace.passes.size() << " passes (1 prefill, " << decode << " decode) to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-driven simulator for expert caching in mixture-of-experts inference"};
  app.require_subcommand(1);

  // gen-trace
  auto* gen = app.add_subcommand("gen-trace", "generate a synthetic router-logit trace");
  std::string g_model, g_out;
  std::uint64_t g_seed = 1;
  int g_prefill = 64, g_decode = 64;
  SyntheticParams g_defaults;
  double g_affinity = g_defaults.affinity, g_skew = g_defaults.skew;
  gen->add_option("--model", g_model, "built-in model name or spec file")->required();
  gen->add_option("--seed", g_seed, "generator seed")->capture_default_str();
  gen->add_option("--prefill", g_prefill, "prompt tokens in the prefill pass")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--decode", g_decode, "decode passes")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--affinity", g_affinity, "token-to-token routing correlation in [0, 1)")
      ->capture_default_str();
  gen->add_option("--skew", g_skew, "spread of per-layer expert popularity")->capture_default_str();
  gen->add_option("--out", g_out, "trace path (default: $MOESIM_OUTPUT_DIR/<model>-s<seed>.trc)");

  // run
  auto* run = app.add_subcommand("run", "simulate one configuration over a trace");
  std::string r_trace, r_out, r_layers, r_csv;
  bool r_print = false;
  SettingFlags r_flags;
  run->add_option("--trace", r_trace, "trace file")->required();
  r_flags.add(*run, false);
  run->add_flag("--print-config", r_print, "print the resolved configuration");
  run->add_option("--out", r_out, "report path (default: $MOESIM_OUTPUT_DIR/report.json)");
  run->add_option("--layers-out", r_layers, "per-layer table path (default: next to the report)");
  run->add_option("--csv", r_csv, "also append a flat row to this file");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "simulate the Cartesian product of policy lists");
  std::string s_trace, s_out, s_presets;
  std::size_t s_max = 1000;
  unsigned s_jobs = std::max(1u, std::thread::hardware_concurrency());
  bool s_print = false;
  SettingFlags s_flags;
  sweep->add_option("--trace", s_trace, "trace file")->required();
  sweep->add_option("--preset", s_presets, "comma-separated named stacks (config1 .. config5)");
  s_flags.add(*sweep, true);
  sweep->add_option("--max-runs", s_max, "refuse sweeps larger than this")->capture_default_str();
  sweep->add_option("--jobs", s_jobs, "parallel runs")->capture_default_str();
  sweep->add_flag("--print-config", s_print, "print each resolved configuration");
  sweep->add_option("--out", s_out, "flat results file (default: $MOESIM_OUTPUT_DIR/sweep.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_trace(g_model, g_seed, g_prefill, g_decode, g_affinity, g_skew, g_out);

    if (run->parsed()) {
      Trace trace = read_trace(r_trace);
      SimConfig config;
      config.spec = trace.spec;
      if (!r_flags.preset.empty()) apply_preset(config, r_flags.preset);
      for (const auto& [k, v] : take_model(r_flags.overrides(), trace)) apply_setting(config, k, v);
      config.validate();
      if (r_print) print_config(config);
      for (const auto& w : config_warnings(config)) std::cerr << "moesim: warning: " << w << "\n";
      SimReport report = run_simulation(config, trace);
      if (r_out.empty()) r_out = in_output_dir("report.json");
      if (r_layers.empty()) r_layers = fs::path(r_out).replace_extension(".layers.csv").string();
      write_report_json(report, r_out);
      write_per_layer_table(report, r_layers);
      if (!r_csv.empty()) append_csv_rows({report}, r_csv);
      std::cout << summary_line(report) << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      Trace trace = read_trace(s_trace);
      SimConfig base;
      base.spec = trace.spec;
      SweepSpec spec;
      spec.max_runs = s_max;
      spec.presets = split_list(s_presets);
      for (std::size_t i = 0; i < s_flags.values.size(); ++i) {
        if (!s_flags.given(i)) continue;
        const auto& [key, value] = s_flags.values[i];
        auto list = split_list(value);
        if (key == "eviction") spec.eviction = list;
        else if (key == "prefetch") spec.prefetch = list;
        else if (key == "miss") spec.miss = list;
        else if (key == "lambda") spec.lambda = list;
        else if (key == "capacity") spec.capacity = list;
        else if (key == "bandwidth") spec.bandwidth = list;
      }
      const std::vector<std::string> swept = {"eviction", "prefetch", "miss", "lambda", "capacity", "bandwidth"};
      Settings fixed = take_model(s_flags.overrides(swept), trace);
      std::cout << "sweep: " << sweep_size(spec) << " configurations\n";
      std::vector<SimConfig> configs = expand_sweep(base, fixed, spec);
      if (s_print)
        for (std::size_t i = 0; i < configs.size(); ++i) {
          std::cout << "# run " << i << "\n";
          print_config(configs[i]);
        }
      std::vector<RunResult> results = run_all(configs, trace, s_jobs);
      std::vector<SimReport> done;
      int failures = 0;
      for (std::size_t i = 0; i < results.size(); ++i) {
        if (const auto* f = std::get_if<RunFailure>(&results[i])) {
          ++failures;
          std::cerr << "moesim: run " << i << " failed: " << f->message << "\n";
          continue;
        }
        const auto& r = std::get<SimReport>(results[i]);
        std::cout << "run " << i << ": " << to_string(r.config.eviction.kind) << " "
                  << to_token(r.config.prefetch) << " " << to_token(r.config.miss) << " "
                  << summary_line(r) << "\n";
        done.push_back(r);
      }
      if (s_out.empty()) s_out = in_output_dir("sweep.csv");
      append_csv_rows(done, s_out);
      std::cout << "wrote " << done.size() << " rows to " << s_out << "\n";
      return failures == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "moesim: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
