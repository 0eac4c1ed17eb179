#pragma once

// Run configuration and its human-readable `key = value` file format.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnlab/intervention.hpp"
#include "attnlab/synthgen.hpp"
#include "attnlab/tcas.hpp"
#include "attnlab/toymodel.hpp"

namespace attnlab {

enum class ExperimentKind : std::uint8_t { correlate, intervene, train_compare, ablate, report, gen_data };

const char* to_string(ExperimentKind kind) noexcept;
ExperimentKind parse_experiment_kind(std::string_view name);

// Which grounding queries of the train split are used as training sequences.
enum class TrainingPool : std::uint8_t { original, all_variants };

const char* to_string(TrainingPool pool) noexcept;

struct TrainingConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer;
  TrainingPool pool = TrainingPool::original;
  // EOJ questions per two-event training sample, spread over the eight variants.
  std::size_t eoj_per_sample = 2;
  std::size_t log_every = 50;
  // Single-model experiments train with NTP only unless this is set.
  bool use_tcas = false;

  bool operator==(const TrainingConfig&) const = default;
};

struct RunConfig {
  ExperimentKind kind = ExperimentKind::correlate;
  // Master seed: data, model init and batch order derive from it.
  std::uint64_t seed = 1;
  ToyModelConfig model;
  SynthSpec data;
  TcasConfig tcas;
  TrainingConfig training;

  // Intervention sweep. Empty heads: top `tcas.top_heads` by mean cross-modal score.
  std::vector<HeadId> intervention_heads;
  std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

  // Training comparison: one baseline and one TCAS run per seed pair.
  std::vector<std::uint64_t> baseline_seeds{1, 2, 3};
  std::vector<std::uint64_t> tcas_seeds{1, 2, 3};
  double baseline_weight = 0.0;

  // One-at-a-time sensitivity grid around `tcas`.
  std::vector<std::size_t> ablate_top_heads{16, 48};
  std::vector<double> ablate_margin{0.15, 0.25};
  std::vector<double> ablate_threshold{0.05, 0.15};
  std::vector<double> ablate_weight{0.3, 0.7};

  std::size_t eval_threads = 1;
  std::size_t histogram_bins = 20;
  bool include_eoj = true;

  std::string checkpoint_load;
  std::string checkpoint_save;
  std::string report_input;
  std::string out_dir;

  // Fills derived fields (vocabulary size, data and model seeds) and validates.
  void resolve();
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

using ConfigPairs = std::vector<std::pair<std::string, std::string>>;

// Applies one `key = value` assignment; unknown keys and malformed values throw.
void apply_config_value(RunConfig& config, std::string_view key, std::string_view value);

// Parses the text of a config file. `#` starts a comment; blank lines are skipped.
RunConfig parse_config(std::string_view text, ExperimentKind kind);
RunConfig load_config(const std::string& path, ExperimentKind kind);

// Every settable key with its current value, in a fixed order.
ConfigPairs config_pairs(const RunConfig& config);
std::string format_config(const RunConfig& config);

}  // namespace attnlab
