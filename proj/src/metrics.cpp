#include "attnlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "attnlab/error.hpp"

namespace attnlab {

namespace {

void require_unit(double value, const char* what) {
  require(value >= 0.0 && value <= 1.0, ErrorCode::invalid_argument,
          std::string(what) + " must lie in [0,1]");
}

void require_interval(const Interval& x) {
  require(x.start >= 0.0 && x.start <= x.end, ErrorCode::invalid_argument,
          "interval needs 0 <= start <= end");
}

double iou_kernel(double as, double ae, double bs, double be) {
  const double inter = std::max(0.0, std::min(ae, be) - std::max(as, bs));
  const double uni = (ae - as) + (be - bs) - inter;
  if (uni <= 0.0) return (as == bs && ae == be) ? 1.0 : 0.0;
  return inter / uni;
}

// Accumulates ground-truth-to-visual mass ratios over the event rows of one head. The batch
// path calls this same kernel, which is what makes the two agree exactly.
DiscriminabilityRatio ratio_kernel(const AttentionRecord& record, const std::vector<std::size_t>& rows,
                                   const std::vector<std::size_t>& visual,
                                   const std::vector<char>& in_gt) {
  double total = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
  for (std::size_t q : rows) {
    double gt_mass = 0.0;
    double visual_mass = 0.0;
    for (std::size_t k : visual) {
      const double w = record.at(q, k);
      visual_mass += w;
      if (in_gt[k]) gt_mass += w;
    }
    if (visual_mass > 0.0) {
      total += gt_mass / visual_mass;
      ++used;
    } else {
      ++excluded;
    }
  }
  require(used > 0, ErrorCode::numerical, "every event row of head " + to_string(record.head()) +
                                              " has zero visual mass");
  return {total / static_cast<double>(used), excluded};
}

struct RatioPlan {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> visual;
  std::vector<char> in_gt;
};

RatioPlan plan_ratio(const AttentionRecord& record, const TokenLayout& layout, const EventSpan& span) {
  require(record.size() == layout.size(), ErrorCode::dimension_mismatch,
          "capture and layout lengths differ");
  RatioPlan plan;
  plan.rows = layout.event_positions(span.event);
  require(!plan.rows.empty(), ErrorCode::invalid_argument,
          "event " + std::to_string(span.event) + " has no text tokens");
  plan.visual = layout.visual_positions();
  require(!plan.visual.empty(), ErrorCode::invalid_argument, "layout has no visual tokens");
  plan.in_gt.assign(layout.size(), 0);
  for (std::size_t k : ground_truth_positions(layout, span)) plan.in_gt[k] = 1;
  return plan;
}

}  // namespace

Interval to_interval(std::size_t start_bin, std::size_t end_bin) {
  return {static_cast<double>(start_bin), static_cast<double>(end_bin) + 1.0};
}

double iou(const Interval& a, const Interval& b) {
  require_interval(a);
  require_interval(b);
  return iou_kernel(a.start, a.end, b.start, b.end);
}

double recall_at(std::span<const double> ious, double threshold) {
  require(!ious.empty(), ErrorCode::invalid_argument, "recall over an empty list");
  require(threshold > 0.0 && threshold < 1.0, ErrorCode::invalid_argument, "threshold must lie in (0,1)");
  std::size_t hits = 0;
  for (double v : ious) {
    require_unit(v, "IoU");
    if (v > threshold) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

double mean_of(std::span<const double> values) {
  require(!values.empty(), ErrorCode::invalid_argument, "mean of an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double consistency_product(double i_ori, double i_variant) {
  require_unit(i_ori, "original IoU");
  require_unit(i_variant, "variant IoU");
  return i_ori * i_variant;
}

ConsistencyScores consistency_scores(double i_ori, double i_rg, double i_sg) {
  return {i_ori, i_rg, i_sg, consistency_product(i_ori, i_rg), consistency_product(i_ori, i_sg)};
}

DiscriminabilityRatio discriminability_ratio(const AttentionRecord& record, const TokenLayout& layout,
                                             const EventSpan& span) {
  const RatioPlan plan = plan_ratio(record, layout, span);
  return ratio_kernel(record, plan.rows, plan.visual, plan.in_gt);
}

double discriminability_avg(const std::map<HeadId, double>& per_head, std::span<const HeadId> heads) {
  require(!heads.empty(), ErrorCode::invalid_argument, "discriminability average over no heads");
  double sum = 0.0;
  for (const auto& id : heads) {
    const auto it = per_head.find(id);
    require(it != per_head.end(), ErrorCode::not_found, "no discriminability for head " + to_string(id));
    sum += it->second;
  }
  return sum / static_cast<double>(heads.size());
}

DiscriminabilitySummary discriminability_summary(std::span<const AttentionRecord> capture,
                                                 const TokenLayout& layout, const EventSpan& span,
                                                 std::span<const HeadId> heads) {
  DiscriminabilitySummary out;
  for (const auto& id : heads) {
    out.per_head[id] = discriminability_ratio(find_head(capture, id), layout, span).score;
  }
  out.average = discriminability_avg(out.per_head, heads);
  return out;
}

std::vector<double> event_distribution(const AttentionRecord& record, const TokenLayout& layout,
                                       EventId event, double smoothing) {
  require(record.size() == layout.size(), ErrorCode::dimension_mismatch,
          "capture and layout lengths differ");
  const auto rows = layout.event_positions(event);
  require(!rows.empty(), ErrorCode::invalid_argument, "event " + std::to_string(event) + " has no text tokens");
  const auto visual = layout.visual_positions();
  require(!visual.empty(), ErrorCode::invalid_argument, "layout has no visual tokens");

  std::vector<double> dist(visual.size(), 0.0);
  for (std::size_t q : rows) {
    for (std::size_t i = 0; i < visual.size(); ++i) dist[i] += record.at(q, visual[i]);
  }
  double total = 0.0;
  for (double v : dist) total += v;
  require(total > 0.0, ErrorCode::numerical,
          "event " + std::to_string(event) + " puts no mass on visual tokens");

  const double renorm = 1.0 + smoothing * static_cast<double>(dist.size());
  for (double& v : dist) v = (v / total + smoothing) / renorm;
  return dist;
}

double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorCode::dimension_mismatch,
          "KL needs two distributions of equal nonzero length");
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] > 0.0 && q[i] > 0.0, ErrorCode::numerical, "KL needs strictly positive distributions");
    // Written as a product of differences so swapping p and q gives the same bits.
    out += (p[i] - q[i]) * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(out, 0.0);
}

double kl_discriminability(const AttentionRecord& record, const TokenLayout& layout, EventId first,
                           EventId second) {
  const auto p = event_distribution(record, layout, first);
  const auto q = event_distribution(record, layout, second);
  return symmetric_kl(p, q);
}

double eoj_consistency(std::span<const double> per_question_f1) {
  require(!per_question_f1.empty(), ErrorCode::invalid_argument, "EOJ consistency over no questions");
  for (double v : per_question_f1) require_unit(v, "F1");
  return mean_of(per_question_f1);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorCode::dimension_mismatch, "pearson needs equal-length series");
  require(xs.size() >= 2, ErrorCode::invalid_argument, "pearson needs at least two points");
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorCode::numerical, "pearson is undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson_p_value(double r, std::size_t n) {
  require(n >= 3, ErrorCode::invalid_argument, "p-value needs at least three points");
  if (std::abs(r) >= 1.0) return 0.0;
  const double dof = static_cast<double>(n - 2);
  const double t = std::abs(r) * std::sqrt(dof / (1.0 - r * r));
  const boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  require(bins > 0 && hi > lo, ErrorCode::invalid_argument, "histogram needs bins > 0 and hi > lo");
  Histogram out{lo, hi, std::vector<std::size_t>(bins, 0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    auto idx = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++out.counts[static_cast<std::size_t>(idx)];
  }
  return out;
}

namespace batch {

std::vector<double> iou(std::span<const double> a_start, std::span<const double> a_end,
                        std::span<const double> b_start, std::span<const double> b_end) {
  const std::size_t n = a_start.size();
  require(a_end.size() == n && b_start.size() == n && b_end.size() == n, ErrorCode::dimension_mismatch,
          "batch IoU columns differ in length");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(a_start[i] >= 0.0 && a_start[i] <= a_end[i] && b_start[i] >= 0.0 && b_start[i] <= b_end[i],
            ErrorCode::invalid_argument, "batch IoU row " + std::to_string(i) + " is not a valid interval");
    out[i] = iou_kernel(a_start[i], a_end[i], b_start[i], b_end[i]);
  }
  return out;
}

std::vector<double> consistency_product(std::span<const double> i_ori, std::span<const double> i_variant) {
  require(i_ori.size() == i_variant.size(), ErrorCode::dimension_mismatch,
          "batch consistency columns differ in length");
  std::vector<double> out(i_ori.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    require_unit(i_ori[i], "original IoU");
    require_unit(i_variant[i], "variant IoU");
    out[i] = i_ori[i] * i_variant[i];
  }
  return out;
}

std::vector<double> discriminability_ratio(std::span<const RatioInput> inputs) {
  std::vector<double> out;
  out.reserve(inputs.size());
  // Consecutive inputs usually share a layout and span (all heads of one
  // sample), so the key plan is rebuilt only when those change.
  const TokenLayout* cached_layout = nullptr;
  EventSpan cached_span{};
  RatioPlan plan;
  for (const auto& in : inputs) {
    require(in.record && in.layout, ErrorCode::invalid_argument, "null batch input");
    if (in.layout != cached_layout || !(in.span == cached_span)) {
      plan = plan_ratio(*in.record, *in.layout, in.span);
      cached_layout = in.layout;
      cached_span = in.span;
    }
    require(in.record->size() == in.layout->size(), ErrorCode::dimension_mismatch,
            "capture and layout lengths differ");
    out.push_back(ratio_kernel(*in.record, plan.rows, plan.visual, plan.in_gt).score);
  }
  return out;
}

std::vector<double> kl_discriminability(std::span<const KlInput> inputs) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    require(in.record && in.layout, ErrorCode::invalid_argument, "null batch input");
    const auto p = event_distribution(*in.record, *in.layout, in.first);
    const auto q = event_distribution(*in.record, *in.layout, in.second);
    out.push_back(symmetric_kl(p, q));
  }
  return out;
}

std::vector<double> eoj_consistency(std::span<const double> flat_f1, std::span<const std::size_t> offsets) {
  require(!offsets.empty() && offsets.back() == flat_f1.size(), ErrorCode::dimension_mismatch,
          "EOJ offsets do not cover the flattened answers");
  std::vector<double> out;
  out.reserve(offsets.size() - 1);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    require(offsets[i] <= offsets[i + 1], ErrorCode::invalid_argument, "EOJ offsets must be nondecreasing");
    out.push_back(attnlab::eoj_consistency(flat_f1.subspan(offsets[i], offsets[i + 1] - offsets[i])));
  }
  return out;
}

}  // namespace batch

}  // namespace attnlab
