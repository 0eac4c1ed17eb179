#include "attnlab/intervention.hpp"

#include <algorithm>
#include <cmath>

#include "attnlab/error.hpp"

namespace attnlab {

void InterventionConfig::validate() const {
  require(!heads.empty(), ErrorCode::config, "intervention needs at least one head");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::config, "intervention alpha must lie in [0,1]");
}

TargetDistribution build_target(const TokenLayout& layout, const EventSpan& span,
                                std::span<const std::size_t> queries) {
  require(!queries.empty(), ErrorCode::invalid_argument, "intervention target needs query positions");
  const auto gt = ground_truth_positions(layout, span);
  std::vector<double> row(layout.size(), 0.0);
  const double w = 1.0 / static_cast<double>(gt.size());
  for (std::size_t k : gt) row[k] = w;

  TargetDistribution out;
  out.width = layout.size();
  for (std::size_t q : queries) {
    require(q < layout.size(), ErrorCode::dimension_mismatch, "query position outside the layout");
    // Ground-truth keys must be visible to the query for the mixture to stay causal.
    require(gt.back() <= q, ErrorCode::invalid_argument,
            "query " + std::to_string(q) + " precedes ground-truth visual tokens");
    out.rows.emplace(q, row);
  }
  return out;
}

void mix_record(AttentionRecord& record, double alpha, const TargetDistribution& target) {
  require(record.size() == target.width, ErrorCode::dimension_mismatch,
          "target width " + std::to_string(target.width) + " differs from capture width " +
              std::to_string(record.size()));
  const double keep = 1.0 - alpha;
  for (const auto& [q, g] : target.rows) {
    auto row = record.row(q);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = keep * row[k] + alpha * g[k];
  }
}

Capture apply_intervention(std::span<const AttentionRecord> capture, const InterventionConfig& config,
                           const TargetDistribution& target) {
  config.validate();
  for (const auto& id : config.heads) find_head(capture, id);
  Capture out(capture.begin(), capture.end());
  for (auto& record : out) {
    if (std::find(config.heads.begin(), config.heads.end(), record.head()) != config.heads.end()) {
      mix_record(record, config.alpha, target);
    }
  }
  return out;
}

namespace {

void check_heads_exist(const ModelState& state, const InterventionConfig& config) {
  for (const auto& id : config.heads) {
    require(id.layer < state.config.layers && id.head < state.config.heads_per_layer, ErrorCode::not_found,
            "intervention head " + to_string(id) + " is not in the model");
  }
}

TargetDistribution target_for(const Sequence& prompt, const EventSpan& gold) {
  const auto queries = prompt.layout.event_positions(gold.event);
  return build_target(prompt.layout, gold, queries);
}

// The target covers the prompt; decoding appends positions, so rows are widened with zeros.
TargetDistribution widened(const TargetDistribution& target, std::size_t width) {
  TargetDistribution out;
  out.width = width;
  for (const auto& [q, row] : target.rows) {
    std::vector<double> wide(width, 0.0);
    std::copy(row.begin(), row.end(), wide.begin());
    out.rows.emplace(q, std::move(wide));
  }
  return out;
}

AttentionHook width_adapting_hook(const InterventionConfig& config, const TargetDistribution& target) {
  config.validate();
  return [heads = config.heads, alpha = config.alpha, target](AttentionRecord& record) {
    if (std::find(heads.begin(), heads.end(), record.head()) == heads.end()) return;
    if (record.size() == target.width) {
      mix_record(record, alpha, target);
    } else {
      mix_record(record, alpha, widened(target, record.size()));
    }
  };
}

}  // namespace

InterventionRun intervened_forward(const ModelState& state, const Vocabulary& vocab,
                                   const GroundingSample& sample, Variant variant,
                                   const InterventionConfig& config) {
  config.validate();
  check_heads_exist(state, config);
  const Sequence prompt = grounding_prompt(vocab, sample, variant);
  InterventionRun run;
  run.target = target_for(prompt, sample.query(variant).gold);
  run.decoded = decode_grounding(state, vocab, prompt, width_adapting_hook(config, run.target));
  return run;
}

AttentionHook intervention_hook(const InterventionConfig& config, TargetDistribution target) {
  return width_adapting_hook(config, target);
}

HookFactory intervention_hooks(const InterventionConfig& config) {
  config.validate();
  return [config](const GroundingSample& sample, Variant variant, const Sequence& prompt) -> AttentionHook {
    return width_adapting_hook(config, target_for(prompt, sample.query(variant).gold));
  };
}

}  // namespace attnlab
