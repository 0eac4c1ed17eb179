#include "attnlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "attnlab/error.hpp"
#include "attnlab/intervention.hpp"
#include "attnlab/io.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

namespace {

constexpr Variant kVariants[] = {Variant::original, Variant::rephrased, Variant::shifted};

Dataset make_dataset(const RunConfig& config) { return generate_dataset(config.data); }

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions o;
  o.analysis_top_heads = config.tcas.top_heads;
  o.include_eoj = config.include_eoj;
  o.threads = config.eval_threads;
  return o;
}

const SubsetMetrics& subset(const EvalBundle& b, Variant v) {
  switch (v) {
    case Variant::original: return b.original;
    case Variant::rephrased: return b.rephrased;
    case Variant::shifted: return b.shifted;
  }
  return b.original;
}

Table metrics_table(const std::string& name) {
  return Table{name, {"subset", "r_at_05", "r_at_07", "miou", "s_disc"}, {}};
}

void add_metric_rows(Table& t, const EvalBundle& b) {
  for (Variant v : kVariants) {
    const SubsetMetrics& m = subset(b, v);
    t.add_row({std::string(to_string(v)), m.r_at_05, m.r_at_07, m.miou, m.s_disc});
  }
}

std::optional<double> try_pearson(std::span<const double> xs, std::span<const double> ys) {
  try {
    return pearson(xs, ys);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::numerical) return std::nullopt;
    throw;
  }
}

void add_pearson(RunReport& report, const std::string& name, std::span<const double> xs,
                 std::span<const double> ys) {
  const auto r = try_pearson(xs, ys);
  if (!r) {
    report.notes.push_back("correlation " + name + " omitted: one of the series is constant");
    return;
  }
  report.set_scalar("pearson_" + name, *r);
  if (xs.size() >= 3) report.set_scalar("p_value_" + name, pearson_p_value(*r, xs.size()));
}

Table histogram_plot(const std::string& name, const std::vector<std::string>& series,
                     const std::vector<std::vector<double>>& values, std::size_t bins) {
  std::vector<std::string> cols{"bin_lo", "bin_hi"};
  cols.insert(cols.end(), series.begin(), series.end());
  Table t{name, cols, {}};
  std::vector<Histogram> hs;
  for (const auto& v : values) hs.push_back(histogram(v, 0.0, 1.0, bins));
  for (std::size_t i = 0; i < bins; ++i) {
    std::vector<Cell> row{static_cast<double>(i) / static_cast<double>(bins),
                          static_cast<double>(i + 1) / static_cast<double>(bins)};
    for (const auto& h : hs) row.emplace_back(static_cast<std::int64_t>(h.counts[i]));
    t.add_row(std::move(row));
  }
  return t;
}

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// Percentage of the original-grounding value, as a one-decimal string.
std::string relative(double variant, double original) {
  if (original == 0.0) return "n/a";
  return fixed1(100.0 * variant / original);
}

std::vector<Cell> arm_row(std::int64_t seed, const std::string& arm, double weight, const EvalBundle& b) {
  return {seed,         arm,          weight,         b.original.r_at_05,  b.original.r_at_07,
          b.original.miou, b.rephrased.r_at_05, b.rephrased.r_at_07, b.rephrased.miou, b.shifted.r_at_05,
          b.shifted.r_at_07, b.shifted.miou, b.mean_c_rg,       b.mean_c_sg,         b.s_disc,
          b.eoj_consistency, b.eoj_kl};
}

const std::vector<std::string> kArmColumns = {
    "seed",          "arm",           "weight",     "g_r_at_05",  "g_r_at_07",  "g_miou",
    "rg_r_at_05",    "rg_r_at_07",    "rg_miou",    "sg_r_at_05", "sg_r_at_07", "sg_miou",
    "c_rg",          "c_sg",          "s_disc",     "eoj_consistency", "eoj_kl"};

std::vector<double> sample_column(const EvalBundle& b, double SampleRecord::*field) {
  std::vector<double> out;
  out.reserve(b.samples.size());
  for (const auto& s : b.samples) out.push_back(s.*field);
  return out;
}

}  // namespace

std::vector<Sequence> training_pool(const RunConfig& config, const Dataset& data) {
  const Vocabulary vocab = config.data.vocabulary();
  std::vector<Sequence> pool;
  for (const GroundingSample& s : data.train) {
    pool.push_back(grounding_training_sequence(vocab, s, Variant::original));
    if (config.training.pool == TrainingPool::all_variants) {
      pool.push_back(grounding_training_sequence(vocab, s, Variant::rephrased));
      pool.push_back(grounding_training_sequence(vocab, s, Variant::shifted));
    }
    const std::size_t k = std::min(config.training.eoj_per_sample, s.eoj.size());
    for (std::size_t i = 0; i < k; ++i) {
      pool.push_back(eoj_training_sequence(vocab, s, s.eoj[i * s.eoj.size() / k]));
    }
  }
  return pool;
}

Table training_log_table(const std::string& name) {
  return Table{name,
               {"run", "step", "ntp_loss", "tcas_loss", "total_loss", "grad_norm", "valid_tokens", "active_terms"},
               {}};
}

ModelState train_model(const RunConfig& config, const Dataset& data, const TcasConfig& tcas,
                       std::uint64_t model_seed, Table* log) {
  ToyModelConfig mc = config.model;
  mc.seed = model_seed;
  ModelState state = init_model(mc);
  const std::vector<Sequence> pool = training_pool(config, data);
  require(!pool.empty(), ErrorCode::config, "training pool is empty");
  OptimizerState optimizer;
  const std::string run = "seed=" + std::to_string(model_seed) + ",w=" + format_real(tcas.weight, 6);
  std::vector<Sequence> batch(config.training.batch_size);
  for (std::size_t step = 0; step < config.training.steps; ++step) {
    Rng rng(state.rng_state);
    for (auto& seq : batch) seq = pool[rng.uniform_int(0, pool.size() - 1)];
    const TrainStepReport r = train_step(state, optimizer, batch, tcas, config.training.optimizer);
    state.rng_state = rng.state();
    if (log != nullptr && ((step + 1) % config.training.log_every == 0 || step + 1 == config.training.steps)) {
      log->add_row({run, static_cast<std::int64_t>(step + 1), r.ntp_loss, r.tcas_loss, r.total_loss, r.grad_norm,
                    static_cast<std::int64_t>(r.valid_tokens), static_cast<std::int64_t>(r.active_terms)});
    }
  }
  return state;
}

ModelState obtain_model(const RunConfig& config, const Dataset& data, Table* log) {
  ModelState state;
  if (!config.checkpoint_load.empty()) {
    state = load_checkpoint(config.checkpoint_load);
    require(state.config.vocab_size == config.model.vocab_size && state.config.max_bins == config.model.max_bins,
            ErrorCode::config, "checkpoint " + config.checkpoint_load + " was trained on a different vocabulary");
  } else {
    TcasConfig tcas = config.tcas;
    if (!config.training.use_tcas) tcas.weight = 0.0;
    state = train_model(config, data, tcas, config.seed, log);
  }
  if (!config.checkpoint_save.empty()) save_checkpoint(state, config.checkpoint_save);
  return state;
}

std::vector<HeadId> top_cross_modal_heads(const ModelState& state, const Vocabulary& vocab,
                                          std::span<const GroundingSample> samples, std::size_t count) {
  require(!samples.empty(), ErrorCode::invalid_argument, "head ranking needs samples");
  HeadScoreTable total;
  for (const GroundingSample& s : samples) {
    const Sequence prompt = grounding_prompt(vocab, s, Variant::original);
    const ForwardResult fr = forward(state, prompt.tokens, prompt.layout);
    for (const auto& [id, score] : cross_modal_scores(fr.capture, prompt.layout)) total[id] += score;
  }
  for (auto& [id, score] : total) score /= static_cast<double>(samples.size());
  return select_top_heads(total, count);
}

void add_correlation_section(RunReport& report, const EvalBundle& bundle, std::size_t histogram_bins) {
  const auto s_disc = sample_column(bundle, &SampleRecord::s_disc);
  const auto c_rg = sample_column(bundle, &SampleRecord::c_rg);
  const auto c_sg = sample_column(bundle, &SampleRecord::c_sg);
  report.set_scalar("samples", static_cast<double>(bundle.samples.size()));
  report.set_scalar("mean_s_disc", bundle.s_disc);
  report.set_scalar("mean_c_rg", bundle.mean_c_rg);
  report.set_scalar("mean_c_sg", bundle.mean_c_sg);
  add_pearson(report, "s_disc_c_rg", s_disc, c_rg);
  add_pearson(report, "s_disc_c_sg", s_disc, c_sg);

  std::vector<double> eoj_kl, eoj_cons;
  for (const auto& s : bundle.samples) {
    if (!s.has_eoj) continue;
    eoj_kl.push_back(s.eoj_kl);
    eoj_cons.push_back(s.eoj_consistency);
  }
  if (eoj_kl.size() >= 2) add_pearson(report, "eoj_kl_consistency", eoj_kl, eoj_cons);

  Table samples{"samples",
                {"index", "iou_ori", "iou_rg", "iou_sg", "c_rg", "c_sg", "s_disc", "s_disc_rg", "s_disc_sg",
                 "has_eoj", "eoj_consistency", "eoj_kl"},
                {}};
  Table scatter{"scatter", {"s_disc", "c_rg", "c_sg"}, {}};
  for (const auto& s : bundle.samples) {
    samples.add_row({static_cast<std::int64_t>(s.index), s.iou_ori, s.iou_rg, s.iou_sg, s.c_rg, s.c_sg, s.s_disc,
                     s.s_disc_rg, s.s_disc_sg, static_cast<std::int64_t>(s.has_eoj), s.eoj_consistency,
                     s.eoj_kl});
    scatter.add_row({s.s_disc, s.c_rg, s.c_sg});
  }
  report.tables.push_back(std::move(samples));
  report.plots.push_back(std::move(scatter));
  report.plots.push_back(histogram_plot("s_disc_histogram", {"count"}, {s_disc}, histogram_bins));
}

RunReport run_correlation_study(const RunConfig& config) {
  const Dataset data = make_dataset(config);
  const Vocabulary vocab = config.data.vocabulary();
  RunReport report;
  Table log = training_log_table("training");
  const ModelState state = obtain_model(config, data, &log);
  const EvalBundle bundle = evaluate(state, vocab, data.eval, eval_options(config));

  Table metrics = metrics_table("metrics");
  add_metric_rows(metrics, bundle);
  report.tables.push_back(std::move(metrics));
  report.set_scalar("eoj_consistency", bundle.eoj_consistency);
  report.set_scalar("eoj_kl", bundle.eoj_kl);
  report.set_scalar("non_bin_decodes", static_cast<double>(bundle.non_bin_decodes));
  report.set_scalar("swapped_decodes", static_cast<double>(bundle.swapped_decodes));
  add_correlation_section(report, bundle, config.histogram_bins);
  report.tables.push_back(std::move(log));
  return report;
}

RunReport run_intervention_sweep(const RunConfig& config) {
  require(!config.alphas.empty(), ErrorCode::config, "intervention sweep needs a nonempty alpha grid");
  const Dataset data = make_dataset(config);
  const Vocabulary vocab = config.data.vocabulary();
  RunReport report;
  Table log = training_log_table("training");
  const ModelState state = obtain_model(config, data, &log);

  InterventionConfig ic;
  ic.heads = config.intervention_heads.empty()
                 ? top_cross_modal_heads(state, vocab, data.eval, config.tcas.top_heads)
                 : config.intervention_heads;

  Table heads{"intervened_heads", {"layer", "head"}, {}};
  for (const auto& h : ic.heads) {
    heads.add_row({static_cast<std::int64_t>(h.layer), static_cast<std::int64_t>(h.head)});
  }

  Table sweep{"sweep", {"alpha", "s_disc", "r_at_05", "r_at_07", "miou", "subset"}, {}};
  for (double alpha : config.alphas) {
    ic.alpha = alpha;
    EvalOptions o = eval_options(config);
    o.include_eoj = false;
    o.analysis_heads = ic.heads;
    o.hook = intervention_hooks(ic);
    const EvalBundle b = evaluate(state, vocab, data.eval, o);
    for (Variant v : kVariants) {
      const SubsetMetrics& m = subset(b, v);
      sweep.add_row({alpha, m.s_disc, m.r_at_05, m.r_at_07, m.miou, std::string(to_string(v))});
    }
  }
  report.set_scalar("intervened_heads", static_cast<double>(ic.heads.size()));
  report.tables.push_back(std::move(sweep));
  report.tables.push_back(std::move(heads));
  report.tables.push_back(std::move(log));
  return report;
}

RunReport run_training_comparison(const RunConfig& config) {
  require(!config.baseline_seeds.empty(), ErrorCode::config, "training comparison needs at least one seed");
  require(config.baseline_seeds == config.tcas_seeds, ErrorCode::config,
          "training comparison needs matched seeds for the baseline and TCAS arms");
  const Dataset data = make_dataset(config);
  const Vocabulary vocab = config.data.vocabulary();
  RunReport report;
  Table log = training_log_table("training");
  Table arms{"arms", kArmColumns, {}};
  Table rel{"relative",
            {"seed", "arm", "rg_r_at_05", "rg_r_at_07", "rg_miou", "sg_r_at_05", "sg_r_at_07", "sg_miou"},
            {}};
  Table deltas{"deltas", {"seed", "s_disc", "c_rg", "c_sg", "g_r_at_05"}, {}};
  std::vector<double> base_disc, tcas_disc;
  double sums[2][4] = {};

  TcasConfig base_cfg = config.tcas;
  base_cfg.weight = config.baseline_weight;
  for (std::uint64_t seed : config.baseline_seeds) {
    EvalBundle arm[2];
    const TcasConfig* cfgs[2] = {&base_cfg, &config.tcas};
    const char* names[2] = {"baseline", "tcas"};
    for (int a = 0; a < 2; ++a) {
      const ModelState state = train_model(config, data, *cfgs[a], seed, &log);
      arm[a] = evaluate(state, vocab, data.eval, eval_options(config));
      const EvalBundle& b = arm[a];
      arms.add_row(arm_row(static_cast<std::int64_t>(seed), names[a], cfgs[a]->weight, b));
      rel.add_row({static_cast<std::int64_t>(seed), std::string(names[a]),
                   relative(b.rephrased.r_at_05, b.original.r_at_05), relative(b.rephrased.r_at_07, b.original.r_at_07),
                   relative(b.rephrased.miou, b.original.miou), relative(b.shifted.r_at_05, b.original.r_at_05),
                   relative(b.shifted.r_at_07, b.original.r_at_07), relative(b.shifted.miou, b.original.miou)});
      const double vals[4] = {b.s_disc, b.mean_c_rg, b.mean_c_sg, b.original.r_at_05};
      for (int k = 0; k < 4; ++k) sums[a][k] += vals[k];
      auto& pooled = a == 0 ? base_disc : tcas_disc;
      for (const auto& s : b.samples) pooled.push_back(s.s_disc);
    }
    deltas.add_row({static_cast<std::int64_t>(seed), arm[1].s_disc - arm[0].s_disc,
                    arm[1].mean_c_rg - arm[0].mean_c_rg, arm[1].mean_c_sg - arm[0].mean_c_sg,
                    arm[1].original.r_at_05 - arm[0].original.r_at_05});
  }

  const double n = static_cast<double>(config.baseline_seeds.size());
  const char* keys[4] = {"s_disc", "c_rg", "c_sg", "g_r_at_05"};
  for (int k = 0; k < 4; ++k) {
    report.set_scalar(std::string("baseline_mean_") + keys[k], sums[0][k] / n);
    report.set_scalar(std::string("tcas_mean_") + keys[k], sums[1][k] / n);
  }
  report.tables.push_back(std::move(arms));
  report.tables.push_back(std::move(rel));
  report.tables.push_back(std::move(deltas));
  report.tables.push_back(std::move(log));
  report.plots.push_back(
      histogram_plot("s_disc_histogram", {"baseline", "tcas"}, {base_disc, tcas_disc}, config.histogram_bins));
  return report;
}

RunReport run_ablation(const RunConfig& config) {
  const Dataset data = make_dataset(config);
  const Vocabulary vocab = config.data.vocabulary();
  RunReport report;
  Table log = training_log_table("training");
  const std::vector<std::string> cols = {"value",  "is_default", "g_r_at_05", "g_r_at_07", "g_miou",
                                         "c_rg",   "c_sg",       "s_disc",    "eoj_consistency"};

  auto run_one = [&](const TcasConfig& tcas) {
    const ModelState state = train_model(config, data, tcas, config.seed, &log);
    return evaluate(state, vocab, data.eval, eval_options(config));
  };
  auto row = [](double value, bool is_default, const EvalBundle& b) -> std::vector<Cell> {
    return {value, static_cast<std::int64_t>(is_default), b.original.r_at_05, b.original.r_at_07, b.original.miou,
            b.mean_c_rg, b.mean_c_sg, b.s_disc, b.eoj_consistency};
  };

  const EvalBundle base = run_one(config.tcas);
  struct Axis {
    const char* name;
    std::vector<double> values;
    double current;
    void (*set)(TcasConfig&, double);
  };
  std::vector<double> top_heads(config.ablate_top_heads.begin(), config.ablate_top_heads.end());
  const Axis axes[] = {
      {"top_heads", top_heads, static_cast<double>(config.tcas.top_heads),
       [](TcasConfig& c, double v) { c.top_heads = static_cast<std::size_t>(v); }},
      {"margin", config.ablate_margin, config.tcas.margin, [](TcasConfig& c, double v) { c.margin = v; }},
      {"threshold", config.ablate_threshold, config.tcas.threshold, [](TcasConfig& c, double v) { c.threshold = v; }},
      {"weight", config.ablate_weight, config.tcas.weight, [](TcasConfig& c, double v) { c.weight = v; }},
  };
  for (const Axis& axis : axes) {
    std::vector<double> values = axis.values;
    values.push_back(axis.current);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    Table t{std::string("ablation_") + axis.name, cols, {}};
    for (double v : values) {
      if (v == axis.current) {
        t.add_row(row(v, true, base));
        continue;
      }
      TcasConfig tcas = config.tcas;
      axis.set(tcas, v);
      tcas.validate();
      t.add_row(row(v, false, run_one(tcas)));
    }
    report.tables.push_back(std::move(t));
  }
  report.tables.push_back(std::move(log));
  return report;
}

RunReport run_gen_data(const RunConfig& config) {
  require(!config.out_dir.empty(), ErrorCode::config, "gen-data needs an output directory");
  const Dataset data = make_dataset(config);
  write_dataset(data, config.out_dir);
  RunReport report;
  std::size_t two_event = 0;
  for (const auto& s : data.train) two_event += s.events.size() == 2 ? 1 : 0;
  for (const auto& s : data.eval) two_event += s.events.size() == 2 ? 1 : 0;
  report.set_scalar("train_samples", static_cast<double>(data.train.size()));
  report.set_scalar("eval_samples", static_cast<double>(data.eval.size()));
  report.set_scalar("two_event_samples", static_cast<double>(two_event));
  report.set_scalar("vocabulary_size", static_cast<double>(config.data.vocabulary().size()));
  report.notes.push_back("wrote train.jsonl and eval.jsonl");
  return report;
}

RunReport run_report(const RunConfig& config) {
  require(!config.report_input.empty(), ErrorCode::config, "report needs report.input");
  return load_report(config.report_input);
}

RunReport run_experiment(RunConfig config) {
  config.resolve();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  switch (config.kind) {
    case ExperimentKind::correlate: report = run_correlation_study(config); break;
    case ExperimentKind::intervene: report = run_intervention_sweep(config); break;
    case ExperimentKind::train_compare: report = run_training_comparison(config); break;
    case ExperimentKind::ablate: report = run_ablation(config); break;
    case ExperimentKind::gen_data: report = run_gen_data(config); break;
    case ExperimentKind::report: return run_report(config);
  }
  report.tool_version = ATTNLAB_VERSION;
  report.kind = to_string(config.kind);
  report.config = config_pairs(config);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace attnlab
