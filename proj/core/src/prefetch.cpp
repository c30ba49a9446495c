#include "moesim/prefetch.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "moesim/error.hpp"
#include "moesim/routing.hpp"
#include "text_util.hpp"

namespace moesim {

void PrefetchConfig::validate() const {
  if (mode == PrefetchMode::topk && !(overfetch >= 1.0 && std::isfinite(overfetch)))
    throw ConfigError("prefetch overfetch must be >= 1");
  if (mode == PrefetchMode::score && !(percentile >= 0.0 && percentile < 100.0))
    throw ConfigError("prefetch percentile must be in [0, 100)");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("prefetch noise must be in [0, 1]");
}

PrefetchConfig parse_prefetch(std::string_view token) {
  PrefetchConfig c;
  auto colon = token.find(':');
  auto head = token.substr(0, colon);
  auto arg = colon == std::string_view::npos ? std::string_view{} : token.substr(colon + 1);
  const std::string where = "prefetch token '" + std::string(token) + "'";
  if (head == "none" && arg.empty()) {
    c.mode = PrefetchMode::none;
  } else if (head == "oracle" && arg.empty()) {
    c.mode = PrefetchMode::oracle;
  } else if (head == "topk") {
    c.mode = PrefetchMode::topk;
    c.overfetch = arg.empty() ? 1.0 : parse_real(arg, where);
  } else if (head == "score") {
    c.mode = PrefetchMode::score;
    c.percentile = arg.empty() ? 80.0 : parse_real(arg, where);
  } else {
    throw ConfigError("unknown prefetch policy '" + std::string(token) +
                      "' (valid: none, topk:<overfetch>, score:<percentile>, oracle)");
  }
  c.validate();
  return c;
}

std::string to_token(const PrefetchConfig& c) {
  switch (c.mode) {
    case PrefetchMode::none: return "none";
    case PrefetchMode::oracle: return "oracle";
    case PrefetchMode::topk: return "topk:" + format_real(c.overfetch);
    case PrefetchMode::score: return "score:" + format_real(c.percentile);
  }
  return {};
}

namespace {

Prediction from_indices(const std::vector<float>& probs, const std::vector<int>& idx) {
  Prediction p;
  p.experts.reserve(idx.size());
  for (int e : idx) p.experts.push_back({e, probs[e]});
  return p;
}

}  // namespace

Prediction predict_topk(std::span<const float> logits_row, int k, double overfetch) {
  const int E = static_cast<int>(logits_row.size());
  // Guard against 8 * 1.5 landing a hair above 12.
  auto want = static_cast<long long>(std::ceil(k * overfetch - 1e-9));
  bool clamped = want > E;
  int count = static_cast<int>(std::min<long long>(want, E));
  auto probs = softmax(logits_row);
  auto p = from_indices(probs, top_indices(probs, count));
  p.clamped = clamped;
  return p;
}

float nearest_rank_percentile(std::vector<float> values, double percentile) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

Prediction predict_score_percentile(std::span<const float> logits_row, double percentile) {
  auto probs = softmax(logits_row);
  float threshold = nearest_rank_percentile(probs, percentile);
  std::vector<int> idx;
  for (int e = 0; e < static_cast<int>(probs.size()); ++e)
    if (probs[e] > threshold) idx.push_back(e);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  auto p = from_indices(probs, idx);
  p.degenerate = idx.empty();
  return p;
}

Prediction merge_predictions(const std::vector<Prediction>& per_token) {
  std::map<int, float> best;
  Prediction out;
  for (const auto& p : per_token) {
    out.clamped = out.clamped || p.clamped;
    for (const auto& s : p.experts) {
      auto [it, inserted] = best.emplace(s.expert, s.score);
      if (!inserted) it->second = std::max(it->second, s.score);
    }
  }
  for (auto [e, s] : best) out.experts.push_back({e, s});
  std::stable_sort(out.experts.begin(), out.experts.end(),
                   [](const ScoredExpert& a, const ScoredExpert& b) { return a.score > b.score; });
  out.degenerate = out.experts.empty();
  return out;
}

}  // namespace moesim
