#include "attnlab/attn_model.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "attnlab/error.hpp"
#include "attnlab/io.hpp"

namespace attnlab {

std::string to_string(const HeadId& id) {
  return "(" + std::to_string(id.layer) + "," + std::to_string(id.head) + ")";
}

AttentionRecord::AttentionRecord(HeadId head, std::size_t seq_len)
    : head_(head), seq_len_(seq_len), weights_(seq_len * seq_len, 0.0) {}

AttentionRecord::AttentionRecord(HeadId head, std::size_t seq_len, std::vector<double> weights)
    : head_(head), seq_len_(seq_len), weights_(std::move(weights)) {
  require(weights_.size() == seq_len * seq_len, ErrorCode::dimension_mismatch,
          "attention weights for head " + to_string(head) + " are not " + std::to_string(seq_len) +
              "x" + std::to_string(seq_len));
}

void check_row_stochastic(const AttentionRecord& record, double tolerance) {
  const std::size_t n = record.size();
  for (std::size_t q = 0; q < n; ++q) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = record.at(q, k);
      if (!(w >= 0.0)) {
        fail(ErrorCode::numerical, "negative or NaN attention at head " + to_string(record.head()) +
                                       " row " + std::to_string(q));
      }
      if (k > q && w != 0.0) {
        fail(ErrorCode::numerical, "attention outside the causal prefix at head " +
                                       to_string(record.head()) + " row " + std::to_string(q));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > tolerance) {
      fail(ErrorCode::numerical, "row " + std::to_string(q) + " of head " + to_string(record.head()) +
                                     " sums to " + format_real(sum, 17));
    }
  }
}

void check_capture(std::span<const AttentionRecord> capture, double tolerance) {
  for (const auto& record : capture) check_row_stochastic(record, tolerance);
}

const AttentionRecord& find_head(std::span<const AttentionRecord> capture, const HeadId& id) {
  for (const auto& record : capture) {
    if (record.head() == id) return record;
  }
  fail(ErrorCode::not_found, "head " + to_string(id) + " is not in the capture");
}

void TokenLayout::push_visual(std::size_t time_bin) {
  require(time_bin < num_bins_, ErrorCode::invalid_argument,
          "time bin " + std::to_string(time_bin) + " >= num_bins " + std::to_string(num_bins_));
  roles_.push_back(TokenRole::visual);
  time_bin_.emplace_back(time_bin);
  event_of_.emplace_back(std::nullopt);
}

void TokenLayout::push_text(std::optional<EventId> event) {
  roles_.push_back(TokenRole::text);
  time_bin_.emplace_back(std::nullopt);
  event_of_.push_back(event);
}

void TokenLayout::push_other() {
  roles_.push_back(TokenRole::other);
  time_bin_.emplace_back(std::nullopt);
  event_of_.emplace_back(std::nullopt);
}

std::vector<std::size_t> TokenLayout::visual_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == TokenRole::visual) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TokenLayout::text_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == TokenRole::text) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TokenLayout::event_positions(EventId event) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == TokenRole::text && event_of_[i] == event) out.push_back(i);
  }
  return out;
}

void TokenLayout::validate() const {
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    const bool visual = roles_[i] == TokenRole::visual;
    require(visual == time_bin_[i].has_value(), ErrorCode::invalid_argument,
            "time bin must be set exactly for visual positions (position " + std::to_string(i) + ")");
    require(!time_bin_[i] || *time_bin_[i] < num_bins_, ErrorCode::invalid_argument,
            "time bin out of range at position " + std::to_string(i));
    require(!event_of_[i] || roles_[i] == TokenRole::text, ErrorCode::invalid_argument,
            "event membership on a non-text position " + std::to_string(i));
  }
}

std::vector<std::size_t> ground_truth_positions(const TokenLayout& layout, const EventSpan& span) {
  require(span.start_bin <= span.end_bin && span.end_bin < layout.num_bins(), ErrorCode::invalid_argument,
          "event span [" + std::to_string(span.start_bin) + "," + std::to_string(span.end_bin) +
              "] outside " + std::to_string(layout.num_bins()) + " bins");
  std::vector<std::size_t> out;
  for (std::size_t pos : layout.visual_positions()) {
    if (span.contains(*layout.time_bin(pos))) out.push_back(pos);
  }
  require(!out.empty(), ErrorCode::invalid_argument, "event span covers no visual token");
  return out;
}

namespace {

void require_matching(const AttentionRecord& record, const TokenLayout& layout) {
  require(record.size() == layout.size(), ErrorCode::dimension_mismatch,
          "capture of head " + to_string(record.head()) + " has " + std::to_string(record.size()) +
              " positions, layout has " + std::to_string(layout.size()));
}

}  // namespace

HeadScoreTable cross_modal_scores(std::span<const AttentionRecord> capture, const TokenLayout& layout) {
  const auto text = layout.text_positions();
  const auto visual = layout.visual_positions();
  require(!text.empty(), ErrorCode::invalid_argument, "cross-modal score needs at least one text token");
  require(!visual.empty(), ErrorCode::invalid_argument, "cross-modal score needs at least one visual token");

  HeadScoreTable table;
  for (const auto& record : capture) {
    require_matching(record, layout);
    double total = 0.0;
    for (std::size_t q : text) {
      for (std::size_t k : visual) total += record.at(q, k);
    }
    const auto [it, inserted] = table.emplace(record.head(), total / static_cast<double>(text.size()));
    require(inserted, ErrorCode::invalid_argument, "duplicate head " + to_string(record.head()));
  }
  return table;
}

std::vector<HeadId> select_top_heads(const HeadScoreTable& table, std::size_t count) {
  require(count > 0 && count <= table.size(), ErrorCode::invalid_argument,
          "cannot select " + std::to_string(count) + " of " + std::to_string(table.size()) + " heads");
  std::vector<std::pair<HeadId, double>> ranked(table.begin(), table.end());
  // The map iterates in (layer, head) order, so a stable sort keeps that order among ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<HeadId> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<double> aggregate_by_timestamp(std::span<const double> row, const TokenLayout& layout) {
  require(row.size() == layout.size(), ErrorCode::dimension_mismatch,
          "attention row has " + std::to_string(row.size()) + " keys, layout has " +
              std::to_string(layout.size()));
  std::vector<double> bins(layout.num_bins(), 0.0);
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (const auto bin = layout.time_bin(k)) bins[*bin] += row[k];
  }
  return bins;
}

void write_attention_pattern(std::ostream& out, std::span<const AttentionRecord> capture,
                             const TokenLayout& layout, std::span<const HeadId> heads) {
  std::vector<HeadId> sorted(heads.begin(), heads.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<const AttentionRecord*> records;
  for (const auto& id : sorted) {
    records.push_back(&find_head(capture, id));
    require_matching(*records.back(), layout);
  }

  std::ostringstream body;
  body << "layer,head,query_index,time_bin,weight\n";
  const auto text = layout.text_positions();
  for (const AttentionRecord* record : records) {
    for (std::size_t q : text) {
      const auto bins = aggregate_by_timestamp(record->row(q), layout);
      for (std::size_t b = 0; b < bins.size(); ++b) {
        body << record->head().layer << ',' << record->head().head << ',' << q << ',' << b << ','
             << format_real(bins[b], 9) << '\n';
      }
    }
  }
  out << body.str();
}

void write_attention_pattern(const std::string& path, std::span<const AttentionRecord> capture,
                             const TokenLayout& layout, std::span<const HeadId> heads) {
  std::ostringstream out;
  write_attention_pattern(out, capture, layout, heads);
  write_file_atomic(path, out.str());
}

}  // namespace attnlab
