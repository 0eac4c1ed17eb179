#include "attnlab/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "attnlab/error.hpp"
#include "attnlab/io.hpp"

namespace attnlab {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  fail(ErrorCode::config, "config key '" + std::string(key) + "': expected " + expected + ", got '" +
                              std::string(value) + "'");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a real number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

template <typename F>
auto parse_list(std::string_view key, std::string_view v, F item) {
  std::vector<decltype(item(key, v))> out;
  if (v.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = v.find(',', pos);
    out.push_back(item(key, trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos))));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

HeadId parse_head(std::string_view key, std::string_view v) {
  const auto colon = v.find(':');
  if (colon == std::string_view::npos) bad_value(key, v, "heads written layer:head");
  return {parse_size(key, trim(v.substr(0, colon))), parse_size(key, trim(v.substr(colon + 1)))};
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

std::string fmt_heads(const std::vector<HeadId>& heads) {
  std::string out;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(heads[i].layer) + ":" + std::to_string(heads[i].head);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                                   \
  Field {                                                                                          \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_size(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.member)); }               \
  }
#define REAL_FIELD(name, member)                                                                   \
  Field {                                                                                          \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_real(k, v); }, \
        [](const RunConfig& c) { return fmt(c.member); }                                           \
  }
#define STRING_FIELD(name, member)                                                                  \
  Field {                                                                                           \
    name, [](RunConfig& c, std::string_view, std::string_view v) { c.member = std::string(v); },    \
        [](const RunConfig& c) { return c.member; }                                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](RunConfig& c, std::string_view k, std::string_view v) { c.seed = parse_u64(k, v); },
            [](const RunConfig& c) { return fmt(c.seed); }},
      SIZE_FIELD("model.layers", model.layers),
      SIZE_FIELD("model.heads_per_layer", model.heads_per_layer),
      SIZE_FIELD("model.model_dim", model.model_dim),
      SIZE_FIELD("model.mlp_dim", model.mlp_dim),
      SIZE_FIELD("model.max_seq_len", model.max_seq_len),
      SIZE_FIELD("data.num_bins", data.num_bins),
      SIZE_FIELD("data.num_event_classes", data.num_event_classes),
      SIZE_FIELD("data.min_events", data.min_events),
      SIZE_FIELD("data.max_events", data.max_events),
      SIZE_FIELD("data.min_event_len", data.min_event_len),
      SIZE_FIELD("data.max_event_len", data.max_event_len),
      SIZE_FIELD("data.templates_per_variant", data.templates_per_variant),
      SIZE_FIELD("data.template_len", data.template_len),
      SIZE_FIELD("data.train_size", data.train_size),
      SIZE_FIELD("data.eval_size", data.eval_size),
      SIZE_FIELD("tcas.top_heads", tcas.top_heads),
      REAL_FIELD("tcas.margin", tcas.margin),
      REAL_FIELD("tcas.threshold", tcas.threshold),
      REAL_FIELD("tcas.weight", tcas.weight),
      SIZE_FIELD("train.steps", training.steps),
      SIZE_FIELD("train.batch_size", training.batch_size),
      Field{"train.optimizer",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "adam") {
                c.training.optimizer.kind = OptimizerKind::adam;
              } else if (v == "sgd") {
                c.training.optimizer.kind = OptimizerKind::sgd;
              } else {
                bad_value(k, v, "adam or sgd");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.training.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd");
            }},
      REAL_FIELD("train.learning_rate", training.optimizer.learning_rate),
      REAL_FIELD("train.beta1", training.optimizer.beta1),
      REAL_FIELD("train.beta2", training.optimizer.beta2),
      REAL_FIELD("train.epsilon", training.optimizer.epsilon),
      Field{"train.pool",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "original") {
                c.training.pool = TrainingPool::original;
              } else if (v == "all_variants") {
                c.training.pool = TrainingPool::all_variants;
              } else {
                bad_value(k, v, "original or all_variants");
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.training.pool)); }},
      SIZE_FIELD("train.eoj_per_sample", training.eoj_per_sample),
      SIZE_FIELD("train.log_every", training.log_every),
      Field{"train.use_tcas",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.training.use_tcas = parse_bool(k, v); },
            [](const RunConfig& c) { return fmt(c.training.use_tcas); }},
      Field{"intervention.heads",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.intervention_heads = parse_list(k, v, parse_head);
            },
            [](const RunConfig& c) { return fmt_heads(c.intervention_heads); }},
      Field{"intervention.alphas",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.alphas = parse_list(k, v, parse_real); },
            [](const RunConfig& c) { return fmt_list(c.alphas); }},
      Field{"compare.baseline_seeds",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.baseline_seeds = parse_list(k, v, parse_u64);
            },
            [](const RunConfig& c) { return fmt_list(c.baseline_seeds); }},
      Field{"compare.tcas_seeds",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.tcas_seeds = parse_list(k, v, parse_u64); },
            [](const RunConfig& c) { return fmt_list(c.tcas_seeds); }},
      REAL_FIELD("compare.baseline_weight", baseline_weight),
      Field{"ablate.top_heads",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.ablate_top_heads = parse_list(k, v, parse_size);
            },
            [](const RunConfig& c) {
              std::vector<std::uint64_t> v(c.ablate_top_heads.begin(), c.ablate_top_heads.end());
              return fmt_list(v);
            }},
      Field{"ablate.margin",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.ablate_margin = parse_list(k, v, parse_real); },
            [](const RunConfig& c) { return fmt_list(c.ablate_margin); }},
      Field{"ablate.threshold",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.ablate_threshold = parse_list(k, v, parse_real);
            },
            [](const RunConfig& c) { return fmt_list(c.ablate_threshold); }},
      Field{"ablate.weight",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.ablate_weight = parse_list(k, v, parse_real); },
            [](const RunConfig& c) { return fmt_list(c.ablate_weight); }},
      SIZE_FIELD("eval.threads", eval_threads),
      SIZE_FIELD("eval.histogram_bins", histogram_bins),
      Field{"eval.include_eoj",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.include_eoj = parse_bool(k, v); },
            [](const RunConfig& c) { return fmt(c.include_eoj); }},
      STRING_FIELD("checkpoint.load", checkpoint_load),
      STRING_FIELD("checkpoint.save", checkpoint_save),
      STRING_FIELD("report.input", report_input),
      STRING_FIELD("out", out_dir),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef STRING_FIELD

}  // namespace

const char* to_string(ExperimentKind kind) noexcept {
  switch (kind) {
    case ExperimentKind::correlate: return "correlate";
    case ExperimentKind::intervene: return "intervene";
    case ExperimentKind::train_compare: return "train-compare";
    case ExperimentKind::ablate: return "ablate";
    case ExperimentKind::report: return "report";
    case ExperimentKind::gen_data: return "gen-data";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (auto k : {ExperimentKind::correlate, ExperimentKind::intervene, ExperimentKind::train_compare,
                 ExperimentKind::ablate, ExperimentKind::report, ExperimentKind::gen_data}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::config, "unknown experiment kind '" + std::string(name) + "'");
}

const char* to_string(TrainingPool pool) noexcept {
  return pool == TrainingPool::original ? "original" : "all_variants";
}

void RunConfig::resolve() {
  data.seed = seed;
  model.seed = seed;
  model.max_bins = data.num_bins;
  data.validate();
  model.vocab_size = data.vocabulary().size();
  validate();
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  tcas.validate();
  require(model.vocab_size == data.vocabulary().size(), ErrorCode::config,
          "model vocabulary does not match the data vocabulary");
  require(tcas.top_heads <= model.head_count(), ErrorCode::config,
          "tcas.top_heads exceeds the model's " + std::to_string(model.head_count()) + " heads");
  require(training.batch_size > 0, ErrorCode::config, "train.batch_size must be positive");
  require(training.optimizer.learning_rate > 0.0, ErrorCode::config, "train.learning_rate must be positive");
  require(training.log_every > 0, ErrorCode::config, "train.log_every must be positive");
  require(eval_threads > 0, ErrorCode::config, "eval.threads must be positive");
  require(histogram_bins > 0, ErrorCode::config, "eval.histogram_bins must be positive");
  for (double a : alphas) {
    require(a >= 0.0 && a <= 1.0, ErrorCode::config, "intervention alphas must lie in [0,1]");
  }
  for (const auto& h : intervention_heads) {
    require(h.layer < model.layers && h.head < model.heads_per_layer, ErrorCode::config,
            "intervention head " + to_string(h) + " is not in the model");
  }
  if (kind == ExperimentKind::ablate) {
    for (std::size_t t : ablate_top_heads) {
      require(t > 0 && t <= model.head_count(), ErrorCode::config, "ablate.top_heads value out of range");
    }
  }
  require(baseline_weight >= 0.0, ErrorCode::config, "compare.baseline_weight must be nonnegative");
}

void apply_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  fail(ErrorCode::config, "unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, ExperimentKind kind) {
  RunConfig config;
  config.kind = kind;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::config,
            "config line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::string& path, ExperimentKind kind) { return parse_config(read_file(path), kind); }

ConfigPairs config_pairs(const RunConfig& config) {
  ConfigPairs out;
  out.reserve(fields().size());
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& [k, v] : config_pairs(config)) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace attnlab
