#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "attnlab/attn_model.hpp"
#include "attnlab/rng.hpp"

namespace attnlab::testing {

// Visual tokens with the given bins, then `others` filler tokens, then text
// tokens tagged with the given events.
inline TokenLayout make_layout(const std::vector<std::size_t>& visual_bins, std::size_t num_bins,
                               const std::vector<std::optional<EventId>>& text, std::size_t others = 0) {
  TokenLayout layout(num_bins);
  for (std::size_t b : visual_bins) layout.push_visual(b);
  for (std::size_t i = 0; i < others; ++i) layout.push_other();
  for (const auto& e : text) layout.push_text(e);
  return layout;
}

// Causal row-stochastic weights with strictly positive admissible entries.
inline AttentionRecord random_record(HeadId id, std::size_t n, Rng& rng) {
  AttentionRecord r(id, n);
  for (std::size_t q = 0; q < n; ++q) {
    double sum = 0.0;
    for (std::size_t k = 0; k <= q; ++k) {
      r.at(q, k) = 0.05 + rng.uniform();
      sum += r.at(q, k);
    }
    for (std::size_t k = 0; k <= q; ++k) r.at(q, k) /= sum;
  }
  return r;
}

inline Capture random_capture(std::size_t layers, std::size_t heads, std::size_t n, Rng& rng) {
  Capture c;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) c.push_back(random_record({l, h}, n, rng));
  }
  return c;
}

// Sets row `q` of `r` to `values` followed by zeros.
inline void set_row(AttentionRecord& r, std::size_t q, const std::vector<double>& values) {
  auto row = r.row(q);
  for (std::size_t k = 0; k < row.size(); ++k) row[k] = k < values.size() ? values[k] : 0.0;
}

}  // namespace attnlab::testing
