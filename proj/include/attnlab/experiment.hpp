#pragma once

// Experiment drivers behind the command-line tool. Each one is a pure
// function of its RunConfig and the build, apart from the wall-clock field.

#include <cstdint>
#include <span>
#include <vector>

#include "attnlab/config.hpp"
#include "attnlab/report.hpp"
#include "attnlab/toymodel.hpp"

namespace attnlab {

// Training sequences drawn from the train split, in a fixed order.
std::vector<Sequence> training_pool(const RunConfig& config, const Dataset& data);

// Trains a fresh model whose init and batch order come from `model_seed`.
// Appends one row per `log_every` steps to `log` when given.
ModelState train_model(const RunConfig& config, const Dataset& data, const TcasConfig& tcas,
                       std::uint64_t model_seed, Table* log = nullptr);

// Loads `checkpoint.load` when set, otherwise trains with the run seed (NTP
// only unless `train.use_tcas`); saves to `checkpoint.save` when set.
ModelState obtain_model(const RunConfig& config, const Dataset& data, Table* log = nullptr);

// Heads ranked by cross-modal score averaged over the original prompts of `samples`.
std::vector<HeadId> top_cross_modal_heads(const ModelState& state, const Vocabulary& vocab,
                                          std::span<const GroundingSample> samples, std::size_t count);

Table training_log_table(const std::string& name);

// Correlation scalars, per-sample table and scatter/histogram plots for one
// evaluation. A constant series is noted and its correlation omitted.
void add_correlation_section(RunReport& report, const EvalBundle& bundle, std::size_t histogram_bins);

RunReport run_correlation_study(const RunConfig& config);
RunReport run_intervention_sweep(const RunConfig& config);
RunReport run_training_comparison(const RunConfig& config);
RunReport run_ablation(const RunConfig& config);
RunReport run_gen_data(const RunConfig& config);
// Reloads `report.input` so it can be re-emitted elsewhere.
RunReport run_report(const RunConfig& config);

// Resolves the config, dispatches on its kind and stamps version, config echo
// and wall clock. Does not write files.
RunReport run_experiment(RunConfig config);

}  // namespace attnlab
