#pragma once

// Causal intervention on attention: selected heads have the rows of chosen
// text queries mixed toward a ground-truth-aligned distribution with
// intensity alpha, after softmax, and inference is rerun with those rows.

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "attnlab/attn_model.hpp"
#include "attnlab/toymodel.hpp"

namespace attnlab {

enum class TargetKind : std::uint8_t { uniform_over_gt };

struct InterventionConfig {
  double alpha = 0.0;
  std::vector<HeadId> heads;
  TargetKind target_kind = TargetKind::uniform_over_gt;

  void validate() const;
};

struct TargetDistribution {
  std::size_t width = 0;
  std::map<std::size_t, std::vector<double>> rows;  // query position -> row over keys
};

// Rows uniform over the span's visual keys and zero elsewhere, one per query.
TargetDistribution build_target(const TokenLayout& layout, const EventSpan& span,
                                std::span<const std::size_t> queries);

// Mixes one record in place: row <- (1 - alpha) * row + alpha * target.
void mix_record(AttentionRecord& record, double alpha, const TargetDistribution& target);

Capture apply_intervention(std::span<const AttentionRecord> capture, const InterventionConfig& config,
                           const TargetDistribution& target);

// Hook that applies the intervention inside a forward pass.
AttentionHook intervention_hook(const InterventionConfig& config, TargetDistribution target);

struct InterventionRun {
  DecodedGrounding decoded;
  TargetDistribution target;
};

// Decodes a grounding prompt with the event-token rows of the configured heads
// intervened toward the gold span of `variant`.
InterventionRun intervened_forward(const ModelState& state, const Vocabulary& vocab,
                                   const GroundingSample& sample, Variant variant,
                                   const InterventionConfig& config);

// Evaluation hook factory used by the alpha sweep.
HookFactory intervention_hooks(const InterventionConfig& config);

}  // namespace attnlab
