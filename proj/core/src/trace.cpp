#include "moesim/trace.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "moesim/error.hpp"
#include "text_util.hpp"

namespace moesim {

std::string_view to_string(PassKind kind) {
  return kind == PassKind::prefill ? "prefill" : "decode";
}

namespace {

std::string where(int pass_id, int layer) {
  return "pass " + std::to_string(pass_id) + " layer " + std::to_string(layer);
}

}  // namespace

void Trace::validate() const {
  spec.validate();
  const int E = spec.experts_per_layer;
  for (std::size_t i = 0; i < passes.size(); ++i) {
    const auto& pass = passes[i];
    if (pass.kind == PassKind::prefill && i != 0)
      throw ParseError("pass " + std::to_string(pass.pass_id) + ": only the first pass may be prefill");
    if (i > 0 && pass.pass_id <= passes[i - 1].pass_id)
      throw ParseError("pass " + std::to_string(pass.pass_id) + ": pass ids must increase");
    if (static_cast<int>(pass.events.size()) != spec.num_layers)
      throw ParseError("pass " + std::to_string(pass.pass_id) + ": expected " +
                       std::to_string(spec.num_layers) + " layer events, found " +
                       std::to_string(pass.events.size()));
    for (int l = 0; l < spec.num_layers; ++l) {
      const auto& ev = pass.events[l];
      if (ev.layer != l)
        throw ParseError(where(pass.pass_id, l) + ": layer events out of order (found layer " +
                         std::to_string(ev.layer) + ")");
      if (ev.tokens < 1) throw ParseError(where(pass.pass_id, l) + ": no token rows");
      if (pass.kind == PassKind::decode && ev.tokens != 1)
        throw ParseError(where(pass.pass_id, l) + ": decode passes carry exactly one token row");
      if (ev.logits.size() != static_cast<std::size_t>(ev.tokens) * E)
        throw ParseError(where(pass.pass_id, l) + ": logits shape does not match " +
                         std::to_string(ev.tokens) + " x " + std::to_string(E));
      for (float v : ev.logits)
        if (!std::isfinite(v)) throw ParseError(where(pass.pass_id, l) + ": non-finite logit");
    }
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Box-Muller over mt19937_64; std::normal_distribution is not portable across
// standard libraries and traces must be reproducible everywhere.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

Trace generate_synthetic(const ModelSpec& spec, const SyntheticParams& params) {
  spec.validate();
  if (params.prefill_tokens < 1) throw ConfigError("prefill_tokens must be >= 1");
  if (params.decode_tokens < 0) throw ConfigError("decode_tokens must be >= 0");
  if (!(params.affinity >= 0.0 && params.affinity <= 1.0))
    throw ConfigError("affinity must be in [0, 1]");
  if (!(params.skew >= 0.0)) throw ConfigError("skew must be >= 0");

  const int L = spec.num_layers;
  const int E = spec.experts_per_layer;
  Trace trace;
  trace.spec = spec;
  trace.passes.resize(1 + static_cast<std::size_t>(params.decode_tokens));
  trace.passes[0].pass_id = 0;
  trace.passes[0].kind = PassKind::prefill;
  for (int d = 0; d < params.decode_tokens; ++d) {
    trace.passes[d + 1].pass_id = d + 1;
    trace.passes[d + 1].kind = PassKind::decode;
  }
  for (auto& pass : trace.passes) pass.events.resize(L);

  std::uint64_t seeder = params.seed;
  std::vector<double> base(E), dev(E);
  for (int l = 0; l < L; ++l) {
    Gaussian rng(splitmix64(seeder));
    for (int e = 0; e < E; ++e) base[e] = params.skew * rng.next();
    std::fill(dev.begin(), dev.end(), 0.0);

    auto next_row = [&](float* out) {
      for (int e = 0; e < E; ++e) {
        dev[e] = params.affinity * dev[e] + (1.0 - params.affinity) * rng.next();
        out[e] = static_cast<float>(base[e] + dev[e]);
      }
    };

    auto& prefill = trace.passes[0].events[l];
    prefill.layer = l;
    prefill.tokens = params.prefill_tokens;
    prefill.logits.resize(static_cast<std::size_t>(params.prefill_tokens) * E);
    for (int t = 0; t < params.prefill_tokens; ++t) next_row(prefill.logits.data() + t * E);

    for (int d = 0; d < params.decode_tokens; ++d) {
      auto& ev = trace.passes[d + 1].events[l];
      ev.layer = l;
      ev.tokens = 1;
      ev.logits.resize(E);
      next_row(ev.logits.data());
    }
  }
  return trace;
}

// File layout:
//   moe-trace v1 name=<n> layers=<L> experts=<E> top_k=<k> expert_bytes_fp16=<b> precisions=<p,...>
//   <pass_id> <prefill|decode> <layer> <tokens> | <E floats> | <E floats> ...
void write_trace(const Trace& trace, std::ostream& out) {
  trace.validate();
  const auto& s = trace.spec;
  out << "moe-trace v1 name=" << s.name << " layers=" << s.num_layers
      << " experts=" << s.experts_per_layer << " top_k=" << s.top_k
      << " expert_bytes_fp16=" << s.expert_bytes_fp16 << " precisions=";
  for (std::size_t i = 0; i < s.available_precisions.size(); ++i)
    out << (i ? "," : "") << to_string(s.available_precisions[i]);
  out << '\n';

  const int E = s.experts_per_layer;
  std::string line;
  char buf[32];
  for (const auto& pass : trace.passes) {
    for (const auto& ev : pass.events) {
      line.clear();
      line += std::to_string(pass.pass_id);
      line += ' ';
      line += to_string(pass.kind);
      line += ' ';
      line += std::to_string(ev.layer);
      line += ' ';
      line += std::to_string(ev.tokens);
      for (int t = 0; t < ev.tokens; ++t) {
        line += " |";
        for (int e = 0; e < E; ++e) {
          auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ev.logits[static_cast<std::size_t>(t) * E + e]);
          line += ' ';
          line.append(buf, ptr);
        }
      }
      line += '\n';
      out << line;
    }
  }
}

void write_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_trace(trace, out);
  if (!out) throw IoError("write to '" + path + "' failed");
}

namespace {

ModelSpec parse_header(std::string_view line) {
  auto fields = split(trim(line), ' ');
  if (fields.size() < 2 || fields[0] != "moe-trace" || fields[1] != "v1")
    throw ParseError("trace header: expected 'moe-trace v1'");
  ModelSpec spec;
  for (std::size_t i = 2; i < fields.size(); ++i) {
    auto f = fields[i];
    if (f.empty()) continue;
    auto eq = f.find('=');
    if (eq == std::string_view::npos) throw ParseError("trace header: malformed field '" + std::string(f) + "'");
    auto key = f.substr(0, eq);
    auto value = f.substr(eq + 1);
    const std::string w = "trace header field " + std::string(key);
    if (key == "name") spec.name = std::string(value);
    else if (key == "layers") spec.num_layers = parse_int<int>(value, w);
    else if (key == "experts") spec.experts_per_layer = parse_int<int>(value, w);
    else if (key == "top_k") spec.top_k = parse_int<int>(value, w);
    else if (key == "expert_bytes_fp16") spec.expert_bytes_fp16 = parse_int<Bytes>(value, w);
    else if (key == "precisions") {
      for (auto p : split(value, ',')) spec.available_precisions.push_back(parse_precision(p));
    } else throw ParseError("trace header: unknown field '" + std::string(key) + "'");
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("trace header: ") + e.what());
  }
  return spec;
}

}  // namespace

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("trace: empty file");
  trace.spec = parse_header(line);
  const int E = trace.spec.experts_per_layer;
  const int L = trace.spec.num_layers;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    auto segments = split(sv, '|');
    auto head = split(trim(segments[0]), ' ');
    const std::string at = "trace line " + std::to_string(line_no);
    if (head.size() != 4) throw ParseError(at + ": expected '<pass> <kind> <layer> <tokens>'");
    int pass_id = parse_int<int>(head[0], at);
    PassKind kind;
    if (head[1] == "prefill") kind = PassKind::prefill;
    else if (head[1] == "decode") kind = PassKind::decode;
    else throw ParseError(at + ": unknown pass kind '" + std::string(head[1]) + "'");
    int layer = parse_int<int>(head[2], at);
    int tokens = parse_int<int>(head[3], at);
    const std::string loc = at + " (" + where(pass_id, layer) + ")";

    if (trace.passes.empty() || trace.passes.back().pass_id != pass_id) {
      if (!trace.passes.empty() && static_cast<int>(trace.passes.back().events.size()) != L)
        throw ParseError(where(trace.passes.back().pass_id, static_cast<int>(trace.passes.back().events.size())) +
                         ": truncated pass");
      trace.passes.push_back(ForwardPass{pass_id, kind, {}});
    } else if (trace.passes.back().kind != kind) {
      throw ParseError(loc + ": pass kind changes mid-pass");
    }
    if (tokens < 1 || static_cast<std::size_t>(tokens) + 1 != segments.size())
      throw ParseError(loc + ": expected " + std::to_string(tokens) + " logits rows, found " +
                       std::to_string(segments.size() - 1));

    LayerEvent ev;
    ev.layer = layer;
    ev.tokens = tokens;
    ev.logits.reserve(static_cast<std::size_t>(tokens) * E);
    for (int t = 0; t < tokens; ++t) {
      int count = 0;
      for (auto tok : split(trim(segments[t + 1]), ' ')) {
        if (tok.empty()) continue;
        float v = 0.0f;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size())
          throw ParseError(loc + ": bad logit '" + std::string(tok) + "'");
        if (!std::isfinite(v)) throw ParseError(loc + ": non-finite logit");
        ev.logits.push_back(v);
        ++count;
      }
      if (count != E)
        throw ParseError(loc + ": token row " + std::to_string(t) + " has " + std::to_string(count) +
                         " logits, expected " + std::to_string(E));
    }
    trace.passes.back().events.push_back(std::move(ev));
  }
  if (trace.passes.empty()) throw ParseError("trace: no layer events");
  trace.validate();
  return trace;
}

Trace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace '" + path + "'");
  try {
    return read_trace(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace moesim
