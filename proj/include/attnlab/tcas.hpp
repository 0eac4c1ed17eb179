#pragma once

// Temporally conditioned attention sharpening: a margin loss that asks each
// sufficiently focused text token of a cross-modal head to keep its weakest
// above-mean time bin at least `margin` above its strongest below-mean bin.

#include <cstddef>
#include <span>
#include <vector>

#include "attnlab/attn_model.hpp"

namespace attnlab {

struct TcasConfig {
  std::size_t top_heads = 32;
  double margin = 0.2;
  double threshold = 0.1;
  double weight = 0.5;

  void validate() const;
  bool operator==(const TcasConfig&) const = default;
};

// Text positions (rows of `agg_rows`, keyed by `positions`) whose largest
// aggregated bin strictly exceeds `threshold`.
std::vector<std::size_t> valid_tokens(std::span<const std::vector<double>> agg_rows,
                                      std::span<const std::size_t> positions, double threshold);

struct PosNegSplit {
  double mean = 0.0;
  std::vector<std::size_t> pos;  // bin indices strictly above the mean
  std::vector<std::size_t> neg;  // bin indices strictly below the mean
};

PosNegSplit split_pos_neg(std::span<const double> row);

std::vector<double> gather(std::span<const double> row, std::span<const std::size_t> bins);

// max(margin + max(neg) - min(pos), 0); zero when either side is empty.
double token_loss(std::span<const double> pos, std::span<const double> neg, double margin);

struct TokenTerm {
  HeadId head;
  std::size_t query = 0;
  double loss = 0.0;
  std::size_t pos_count = 0;
  std::size_t neg_count = 0;
  double mean = 0.0;
  // Bins carrying the gradient when the hinge is active: lowest index among ties.
  std::size_t argmin_pos = 0;
  std::size_t argmax_neg = 0;
  bool active = false;
};

struct TcasDiagnostics {
  std::vector<HeadId> heads;
  std::vector<std::size_t> valid_counts;  // parallel to `heads`
  std::vector<TokenTerm> terms;
  std::size_t total_valid = 0;
  std::size_t active_terms = 0;

  double active_fraction() const noexcept {
    return total_valid == 0 ? 0.0 : static_cast<double>(active_terms) / static_cast<double>(total_valid);
  }
};

struct TcasResult {
  double loss = 0.0;
  TcasDiagnostics diagnostics;
};

TcasResult tcas_loss(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                     const TcasConfig& config);

// d loss / d attention for every record of the capture, same shapes and order.
// Head selection is held fixed; a bin's gradient lands on each of its visual keys.
std::vector<std::vector<double>> tcas_grad(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                                           const TcasConfig& config);

// Same gradient from an already evaluated loss, for callers that need both.
std::vector<std::vector<double>> tcas_grad(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                                           const TcasResult& evaluated);

}  // namespace attnlab
