#pragma once

// Attention captures, token layouts and the cross-modal head analysis built
// on top of them.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace attnlab {

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(const HeadId& id);

// Row-stochastic query -> key weights of a single head. Queries and keys are
// both sequence positions, so the matrix is square; entries above the
// diagonal (future keys) are zero.
class AttentionRecord {
 public:
  AttentionRecord() = default;
  AttentionRecord(HeadId head, std::size_t seq_len);
  AttentionRecord(HeadId head, std::size_t seq_len, std::vector<double> weights);

  const HeadId& head() const noexcept { return head_; }
  std::size_t size() const noexcept { return seq_len_; }

  double at(std::size_t query, std::size_t key) const { return weights_[query * seq_len_ + key]; }
  double& at(std::size_t query, std::size_t key) { return weights_[query * seq_len_ + key]; }

  std::span<const double> row(std::size_t query) const {
    return {weights_.data() + query * seq_len_, seq_len_};
  }
  std::span<double> row(std::size_t query) { return {weights_.data() + query * seq_len_, seq_len_}; }

  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> weights() noexcept { return weights_; }

  bool operator==(const AttentionRecord&) const = default;

 private:
  HeadId head_;
  std::size_t seq_len_ = 0;
  std::vector<double> weights_;
};

// All heads of one forward pass, ordered by (layer, head).
using Capture = std::vector<AttentionRecord>;

// Throws if any row leaves its causal prefix, has a negative entry, or does
// not sum to one within `tolerance`.
void check_row_stochastic(const AttentionRecord& record, double tolerance = 1e-9);
void check_capture(std::span<const AttentionRecord> capture, double tolerance = 1e-9);

const AttentionRecord& find_head(std::span<const AttentionRecord> capture, const HeadId& id);

enum class TokenRole : std::uint8_t { visual, text, other };

using EventId = std::uint32_t;

class TokenLayout {
 public:
  TokenLayout() = default;
  explicit TokenLayout(std::size_t num_bins) : num_bins_(num_bins) {}

  void push_visual(std::size_t time_bin);
  void push_text(std::optional<EventId> event = std::nullopt);
  void push_other();

  std::size_t size() const noexcept { return roles_.size(); }
  std::size_t num_bins() const noexcept { return num_bins_; }

  TokenRole role(std::size_t pos) const { return roles_.at(pos); }
  std::optional<std::size_t> time_bin(std::size_t pos) const { return time_bin_.at(pos); }
  std::optional<EventId> event_of(std::size_t pos) const { return event_of_.at(pos); }

  std::vector<std::size_t> visual_positions() const;
  std::vector<std::size_t> text_positions() const;
  std::vector<std::size_t> event_positions(EventId event) const;

  void validate() const;

  bool operator==(const TokenLayout&) const = default;

 private:
  std::vector<TokenRole> roles_;
  std::vector<std::optional<std::size_t>> time_bin_;
  std::vector<std::optional<EventId>> event_of_;
  std::size_t num_bins_ = 0;
};

// Inclusive range of time bins covered by an event.
struct EventSpan {
  EventId event = 0;
  std::size_t start_bin = 0;
  std::size_t end_bin = 0;

  bool contains(std::size_t bin) const noexcept { return bin >= start_bin && bin <= end_bin; }
  bool operator==(const EventSpan&) const = default;
};

// Visual positions whose time bin falls inside the span. Throws when empty.
std::vector<std::size_t> ground_truth_positions(const TokenLayout& layout, const EventSpan& span);

using HeadScoreTable = std::map<HeadId, double>;

// Mean over text queries of the attention mass placed on visual keys.
HeadScoreTable cross_modal_scores(std::span<const AttentionRecord> capture, const TokenLayout& layout);

// Highest-scoring heads, descending; equal scores fall back to (layer, head).
std::vector<HeadId> select_top_heads(const HeadScoreTable& table, std::size_t count);

// Sums a row's visual-key mass per time bin. Output length is num_bins.
std::vector<double> aggregate_by_timestamp(std::span<const double> row, const TokenLayout& layout);

// CSV with header `layer,head,query_index,time_bin,weight`: one row per text
// query and time bin of each requested head, sorted, 9 significant digits.
void write_attention_pattern(std::ostream& out, std::span<const AttentionRecord> capture,
                             const TokenLayout& layout, std::span<const HeadId> heads);
void write_attention_pattern(const std::string& path, std::span<const AttentionRecord> capture,
                             const TokenLayout& layout, std::span<const HeadId> heads);

}  // namespace attnlab
