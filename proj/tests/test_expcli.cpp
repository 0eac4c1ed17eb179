#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "attnlab/config.hpp"
#include "attnlab/error.hpp"
#include "attnlab/experiment.hpp"
#include "attnlab/report.hpp"

using namespace attnlab;

namespace {

std::optional<ErrorCode> code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Small enough to train in well under a second.
RunConfig tiny_run(ExperimentKind kind) {
  RunConfig c = parse_config(R"(
    # tiny model and data
    model.layers = 2
    model.heads_per_layer = 2
    model.model_dim = 16
    model.mlp_dim = 32
    model.max_seq_len = 24
    data.num_bins = 8
    data.num_event_classes = 3
    data.max_event_len = 3
    data.train_size = 16
    data.eval_size = 6
    tcas.top_heads = 2
    train.steps = 4
    train.batch_size = 4
    train.log_every = 2
    compare.baseline_seeds = 1,2
    compare.tcas_seeds = 1,2
    ablate.top_heads = 1,3
  )", kind);
  return c;
}

std::string without_wall_clock(RunReport r) {
  r.wall_clock_seconds = 0.0;
  return report_to_json(r);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config text round-trips through format and parse") {
  RunConfig c = tiny_run(ExperimentKind::train_compare);
  CHECK(c.model.layers == 2);
  CHECK(c.baseline_seeds == std::vector<std::uint64_t>{1, 2});
  c.intervention_heads = {{0, 1}, {1, 0}};
  c.alphas = {0.0, 0.25, 1.0};
  c.training.pool = TrainingPool::all_variants;
  c.training.optimizer.kind = OptimizerKind::sgd;
  c.tcas.margin = 0.1 + 0.2;
  c.include_eoj = false;
  c.out_dir = "some/dir";
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text, c.kind);
  CHECK(back == c);
  CHECK(format_config(back) == text);

  const auto pairs = config_pairs(c);
  CHECK(pairs.front().first == "seed");
  CHECK(std::find_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.first == "tcas.margin"; })->second ==
        "0.30000000000000004");
}

TEST_CASE("config errors name the problem") {
  CHECK(code_of([] { parse_config("nope = 1", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_config("seed", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_config("seed = -1", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_config("tcas.margin = abc", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_config("eval.include_eoj = maybe", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_config("intervention.heads = 0-1", ExperimentKind::correlate); }) == ErrorCode::config);
  CHECK(code_of([] { parse_experiment_kind("train"); }) == ErrorCode::config);
  CHECK(parse_experiment_kind("train-compare") == ExperimentKind::train_compare);

  RunConfig c = tiny_run(ExperimentKind::correlate);
  c.tcas.top_heads = 5;
  CHECK(code_of([&] { c.resolve(); }) == ErrorCode::config);
  c = tiny_run(ExperimentKind::correlate);
  c.alphas = {0.5, 1.5};
  CHECK(code_of([&] { c.resolve(); }) == ErrorCode::config);
  c = tiny_run(ExperimentKind::train_compare);
  c.tcas_seeds = {1, 3};
  CHECK(code_of([&] { run_experiment(c); }) == ErrorCode::config);

  try {
    parse_config("seed = 1\nbogus.key = 2\n", ExperimentKind::correlate);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bogus.key") != std::string::npos);
  }
}

TEST_CASE("resolve derives seeds and vocabulary") {
  RunConfig c = tiny_run(ExperimentKind::correlate);
  c.seed = 99;
  c.resolve();
  CHECK(c.data.seed == 99);
  CHECK(c.model.seed == 99);
  CHECK(c.model.max_bins == 8);
  CHECK(c.model.vocab_size == c.data.vocabulary().size());
}

TEST_CASE("report JSON and CSV emission") {
  RunReport r;
  r.tool_version = "x";
  r.kind = "correlate";
  r.config = {{"seed", "1"}, {"out", ""}};
  r.set_scalar("pearson", 0.25);
  r.set_scalar("pearson", 0.5);
  r.set_scalar("count", 3.0);
  Table t{"per_sample", {"index", "value", "label"}, {}};
  t.add_row({std::int64_t{1}, 0.1, std::string("plain")});
  t.add_row({std::int64_t{2}, 1e-300, std::string("has,comma \"q\"")});
  CHECK_THROWS_AS(t.add_row({std::int64_t{3}}), Error);
  r.tables.push_back(t);
  r.plots.push_back(Table{"hist", {"lo", "hi", "count"}, {{0.0, 0.5, std::int64_t{4}}}});
  r.notes = {"a note"};
  r.wall_clock_seconds = 1.25;

  CHECK(r.scalars.size() == 2);
  CHECK(*r.scalar("pearson") == 0.5);
  CHECK_FALSE(r.scalar("missing").has_value());
  CHECK(r.table("per_sample") != nullptr);
  CHECK(r.plot("nope") == nullptr);

  const std::string json = report_to_json(r);
  const RunReport back = report_from_json(json);
  CHECK(back == r);
  CHECK(report_to_json(back) == json);

  CHECK(table_to_csv(t) == "index,value,label\n1,0.1,plain\n2,1e-300,\"has,comma \"\"q\"\"\"\n");
  CHECK(table_to_tsv(r.plots[0]) == "lo\thi\tcount\n0\t0.5\t4\n");

  CHECK(code_of([] { report_from_json("{"); }) == ErrorCode::io);
  CHECK(code_of([] { report_from_json("{\"schema\": \"other\"}"); }) == ErrorCode::io);
  RunReport bad = r;
  bad.set_scalar("nan", std::nan(""));
  CHECK(code_of([&] { report_to_json(bad); }) == ErrorCode::numerical);

  const auto dir = std::filesystem::temp_directory_path() / "attnlab_report_test";
  std::filesystem::remove_all(dir);
  emit_report(r, dir.string());
  CHECK(slurp(dir / "report.json") == json);
  CHECK(slurp(dir / "per_sample.csv") == table_to_csv(t));
  CHECK(slurp(dir / "hist.tsv") == table_to_tsv(r.plots[0]));
  CHECK(load_report((dir / "report.json").string()) == r);
  std::filesystem::remove_all(dir);

  RunReport escape = r;
  escape.tables[0].name = "../evil";
  CHECK(code_of([&] { emit_report(escape, dir.string()); }) == ErrorCode::invalid_argument);
}

TEST_CASE("every experiment kind reruns byte-identically") {
  for (auto kind : {ExperimentKind::correlate, ExperimentKind::intervene, ExperimentKind::train_compare,
                    ExperimentKind::ablate}) {
    CAPTURE(to_string(kind));
    const RunConfig c = tiny_run(kind);
    const RunReport a = run_experiment(c);
    const RunReport b = run_experiment(c);
    CHECK(a.kind == to_string(kind));
    CHECK(a.schema_version == kReportSchemaVersion);
    CHECK(without_wall_clock(a) == without_wall_clock(b));
    CHECK_FALSE(a.tables.empty());

    RunConfig other = c;
    other.seed = 2;
    CHECK(without_wall_clock(run_experiment(other)) != without_wall_clock(a));
  }
}

TEST_CASE("training comparison reports both arms per seed") {
  const RunReport r = run_experiment(tiny_run(ExperimentKind::train_compare));
  const Table* arms = r.table("arms");
  REQUIRE(arms != nullptr);
  CHECK(arms->rows.size() == 4);
  const Table* deltas = r.table("deltas");
  REQUIRE(deltas != nullptr);
  CHECK(deltas->rows.size() == 2);
  CHECK(r.scalar("baseline_mean_s_disc").has_value());
  CHECK(r.scalar("tcas_mean_s_disc").has_value());
}

TEST_CASE("gen-data writes the splits and report reloads a saved report") {
  const auto dir = std::filesystem::temp_directory_path() / "attnlab_gen_data_test";
  std::filesystem::remove_all(dir);
  RunConfig c = tiny_run(ExperimentKind::gen_data);
  CHECK(code_of([&] { run_experiment(c); }) == ErrorCode::config);
  c.out_dir = dir.string();
  const RunReport r = run_experiment(c);
  CHECK(*r.scalar("train_samples") == 16.0);
  CHECK(*r.scalar("eval_samples") == 6.0);
  const std::string train = slurp(dir / "train.jsonl");
  CHECK(parse_samples(train).size() == 16);
  run_experiment(c);
  CHECK(slurp(dir / "train.jsonl") == train);

  emit_report(r, (dir / "out").string());
  RunConfig rc = tiny_run(ExperimentKind::report);
  rc.report_input = (dir / "out" / "report.json").string();
  CHECK(run_experiment(rc) == r);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints let a second run skip training") {
  const auto dir = std::filesystem::temp_directory_path() / "attnlab_ckpt_run_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  RunConfig c = tiny_run(ExperimentKind::correlate);
  c.checkpoint_save = (dir / "m.ckpt").string();
  const RunReport trained = run_experiment(c);
  RunConfig reload = tiny_run(ExperimentKind::correlate);
  reload.checkpoint_load = c.checkpoint_save;
  const RunReport loaded = run_experiment(reload);
  CHECK(trained.scalars == loaded.scalars);
  std::filesystem::remove_all(dir);
}
