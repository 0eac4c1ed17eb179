#pragma once

// Scalar measures: grounding accuracy, consistency, temporal discriminability
// and correlation statistics. Batch variants take structure-of-arrays inputs
// and must agree bit-for-bit with the scalar functions.

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "attnlab/attn_model.hpp"

namespace attnlab {

struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const noexcept { return end - start; }
  bool operator==(const Interval&) const = default;
};

// Time bins are unit-width, so the inclusive bin span [s, e] covers [s, e + 1).
Interval to_interval(std::size_t start_bin, std::size_t end_bin);

double iou(const Interval& a, const Interval& b);

// Percentage of entries strictly greater than `threshold`.
double recall_at(std::span<const double> ious, double threshold);

double mean_of(std::span<const double> values);

double consistency_product(double i_ori, double i_variant);

struct ConsistencyScores {
  double i_ori = 0.0;
  double i_rg = 0.0;
  double i_sg = 0.0;
  double c_rg = 0.0;
  double c_sg = 0.0;
};

ConsistencyScores consistency_scores(double i_ori, double i_rg, double i_sg);

struct DiscriminabilityRatio {
  double score = 0.0;
  // Event rows dropped because they put no mass on visual keys.
  std::size_t excluded_rows = 0;
};

// Mean over the event's text rows of (mass on ground-truth visual keys) /
// (mass on all visual keys).
DiscriminabilityRatio discriminability_ratio(const AttentionRecord& record, const TokenLayout& layout,
                                             const EventSpan& span);

struct DiscriminabilitySummary {
  std::map<HeadId, double> per_head;
  double average = 0.0;
};

double discriminability_avg(const std::map<HeadId, double>& per_head, std::span<const HeadId> heads);

DiscriminabilitySummary discriminability_summary(std::span<const AttentionRecord> capture,
                                                 const TokenLayout& layout, const EventSpan& span,
                                                 std::span<const HeadId> heads);

inline constexpr double kKlSmoothing = 1e-9;

// Averaged visual-key distribution of an event's text rows: summed over the
// event tokens, normalized once, then smoothed and renormalized.
std::vector<double> event_distribution(const AttentionRecord& record, const TokenLayout& layout,
                                       EventId event, double smoothing = kKlSmoothing);

// KL(p || q) + KL(q || p) for strictly positive distributions of equal length.
double symmetric_kl(std::span<const double> p, std::span<const double> q);

double kl_discriminability(const AttentionRecord& record, const TokenLayout& layout, EventId first,
                           EventId second);

// Mean per-question F1; answers here are single labels so F1 is 0 or 1.
double eoj_consistency(std::span<const double> per_question_f1);

double pearson(std::span<const double> xs, std::span<const double> ys);

// Two-sided p-value of the t statistic r * sqrt((n - 2) / (1 - r^2)).
double pearson_p_value(double r, std::size_t n);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
};

// Equal-width bins over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

namespace batch {

std::vector<double> iou(std::span<const double> a_start, std::span<const double> a_end,
                        std::span<const double> b_start, std::span<const double> b_end);

std::vector<double> consistency_product(std::span<const double> i_ori, std::span<const double> i_variant);

struct RatioInput {
  const AttentionRecord* record = nullptr;
  const TokenLayout* layout = nullptr;
  EventSpan span;
};

std::vector<double> discriminability_ratio(std::span<const RatioInput> inputs);

struct KlInput {
  const AttentionRecord* record = nullptr;
  const TokenLayout* layout = nullptr;
  EventId first = 0;
  EventId second = 1;
};

std::vector<double> kl_discriminability(std::span<const KlInput> inputs);

// One F1 list per sample, flattened; `offsets` has one more entry than samples.
std::vector<double> eoj_consistency(std::span<const double> flat_f1, std::span<const std::size_t> offsets);

}  // namespace batch

}  // namespace attnlab
