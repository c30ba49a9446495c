#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "moesim/model_spec.hpp"

namespace moesim {

// Router logits of one layer for every token row in a pass, row-major [tokens][E].
struct LayerEvent {
  int layer = 0;
  int tokens = 0;
  std::vector<float> logits;

  std::span<const float> row(int token, int experts) const {
    return {logits.data() + static_cast<std::size_t>(token) * experts,
            static_cast<std::size_t>(experts)};
  }
  bool operator==(const LayerEvent&) const = default;
};

enum class PassKind : std::uint8_t { prefill, decode };

std::string_view to_string(PassKind kind);

struct ForwardPass {
  int pass_id = 0;
  PassKind kind = PassKind::decode;
  std::vector<LayerEvent> events;  // one per layer, ascending

  bool operator==(const ForwardPass&) const = default;
};

struct Trace {
  ModelSpec spec;
  std::vector<ForwardPass> passes;

  // Throws ParseError naming the offending pass/layer.
  void validate() const;
  bool operator==(const Trace&) const = default;
};

struct SyntheticParams {
  std::uint64_t seed = 1;
  int prefill_tokens = 64;
  int decode_tokens = 64;
  // Weight on the previous token's deviation from the layer base logits.
  double affinity = 0.6;
  // Scale of the per-layer base logits; 0 gives uniform expert popularity.
  double skew = 1.0;
};

// One prefill pass with prefill_tokens rows, then decode_tokens single-row passes.
Trace generate_synthetic(const ModelSpec& spec, const SyntheticParams& params);

void write_trace(const Trace& trace, std::ostream& out);
void write_trace(const Trace& trace, const std::string& path);
Trace read_trace(std::istream& in);
Trace read_trace(const std::string& path);

}  // namespace moesim
