#include "attnlab/tcas.hpp"

#include <algorithm>
#include <cmath>

#include "attnlab/error.hpp"

namespace attnlab {

void TcasConfig::validate() const {
  require(top_heads > 0, ErrorCode::config, "tcas top_heads must be positive");
  require(margin > 0.0, ErrorCode::config, "tcas margin must be positive");
  require(threshold > 0.0 && threshold < 1.0, ErrorCode::config, "tcas threshold must lie in (0,1)");
  require(weight >= 0.0 && std::isfinite(weight), ErrorCode::config, "tcas weight must be >= 0");
}

std::vector<std::size_t> valid_tokens(std::span<const std::vector<double>> agg_rows,
                                      std::span<const std::size_t> positions, double threshold) {
  require(agg_rows.size() == positions.size(), ErrorCode::dimension_mismatch,
          "one position per aggregated row expected");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < agg_rows.size(); ++i) {
    const auto& row = agg_rows[i];
    if (!row.empty() && *std::max_element(row.begin(), row.end()) > threshold) out.push_back(positions[i]);
  }
  return out;
}

PosNegSplit split_pos_neg(std::span<const double> row) {
  require(row.size() >= 2, ErrorCode::invalid_argument, "pos/neg split needs at least two bins");
  PosNegSplit out;
  double sum = 0.0;
  for (double v : row) sum += v;
  out.mean = sum / static_cast<double>(row.size());
  for (std::size_t b = 0; b < row.size(); ++b) {
    if (row[b] > out.mean) {
      out.pos.push_back(b);
    } else if (row[b] < out.mean) {
      out.neg.push_back(b);
    }
  }
  return out;
}

std::vector<double> gather(std::span<const double> row, std::span<const std::size_t> bins) {
  std::vector<double> out;
  out.reserve(bins.size());
  for (std::size_t b : bins) out.push_back(row[b]);
  return out;
}

double token_loss(std::span<const double> pos, std::span<const double> neg, double margin) {
  if (pos.empty() || neg.empty()) return 0.0;
  const double max_neg = *std::max_element(neg.begin(), neg.end());
  const double min_pos = *std::min_element(pos.begin(), pos.end());
  return std::max(margin + max_neg - min_pos, 0.0);
}

TcasResult tcas_loss(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                     const TcasConfig& config) {
  config.validate();
  require(!capture.empty(), ErrorCode::invalid_argument, "tcas loss needs a nonempty capture");
  require(layout.num_bins() >= 2, ErrorCode::invalid_argument, "tcas loss needs at least two time bins");

  const HeadScoreTable scores = cross_modal_scores(capture, layout);
  require(config.top_heads <= scores.size(), ErrorCode::invalid_argument,
          "tcas top_heads " + std::to_string(config.top_heads) + " exceeds " +
              std::to_string(scores.size()) + " heads");

  TcasResult result;
  auto& diag = result.diagnostics;
  diag.heads = select_top_heads(scores, config.top_heads);
  const auto text = layout.text_positions();

  double total = 0.0;
  for (const HeadId& id : diag.heads) {
    const AttentionRecord& record = find_head(capture, id);
    std::vector<std::vector<double>> agg;
    agg.reserve(text.size());
    for (std::size_t q : text) agg.push_back(aggregate_by_timestamp(record.row(q), layout));

    std::size_t valid = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const auto& row = agg[i];
      if (!(*std::max_element(row.begin(), row.end()) > config.threshold)) continue;
      ++valid;

      const PosNegSplit split = split_pos_neg(row);
      TokenTerm term;
      term.head = id;
      term.query = text[i];
      term.mean = split.mean;
      term.pos_count = split.pos.size();
      term.neg_count = split.neg.size();
      if (!split.pos.empty() && !split.neg.empty()) {
        // Strict comparisons keep the first index among tied values.
        term.argmin_pos = split.pos.front();
        for (std::size_t b : split.pos) {
          if (row[b] < row[term.argmin_pos]) term.argmin_pos = b;
        }
        term.argmax_neg = split.neg.front();
        for (std::size_t b : split.neg) {
          if (row[b] > row[term.argmax_neg]) term.argmax_neg = b;
        }
        const double hinge = config.margin + row[term.argmax_neg] - row[term.argmin_pos];
        term.active = hinge > 0.0;
        term.loss = term.active ? hinge : 0.0;
      }
      if (term.active) ++diag.active_terms;
      total += term.loss;
      diag.terms.push_back(term);
    }
    diag.valid_counts.push_back(valid);
    diag.total_valid += valid;
  }
  result.loss = diag.total_valid == 0 ? 0.0 : total / static_cast<double>(diag.total_valid);
  return result;
}

std::vector<std::vector<double>> tcas_grad(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                                           const TcasResult& evaluated) {
  std::vector<std::vector<double>> grad;
  grad.reserve(capture.size());
  for (const auto& record : capture) grad.emplace_back(record.weights().size(), 0.0);

  const auto& diag = evaluated.diagnostics;
  if (diag.total_valid == 0) return grad;
  const double scale = 1.0 / static_cast<double>(diag.total_valid);
  const std::size_t n = layout.size();

  for (const TokenTerm& term : diag.terms) {
    if (!term.active) continue;
    std::size_t index = capture.size();
    for (std::size_t i = 0; i < capture.size(); ++i) {
      if (capture[i].head() == term.head) {
        index = i;
        break;
      }
    }
    require(index < capture.size(), ErrorCode::not_found, "diagnostics reference a head outside the capture");
    auto& g = grad[index];
    for (std::size_t k = 0; k < n; ++k) {
      const auto bin = layout.time_bin(k);
      if (!bin) continue;
      if (*bin == term.argmax_neg) g[term.query * n + k] += scale;
      if (*bin == term.argmin_pos) g[term.query * n + k] -= scale;
    }
  }
  return grad;
}

std::vector<std::vector<double>> tcas_grad(std::span<const AttentionRecord> capture, const TokenLayout& layout,
                                           const TcasConfig& config) {
  return tcas_grad(capture, layout, tcas_loss(capture, layout, config));
}

}  // namespace attnlab
