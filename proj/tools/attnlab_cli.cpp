// attnlab command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnlab/attnlab.h"

namespace {

constexpr int kUsageExit = 64;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::vector<std::string> sets;
};

void print_error(const std::string& code, const std::string& message) {
  nlohmann::ordered_json line{{"status", "error"}, {"code", code}, {"message", message}};
  std::fprintf(stderr, "%s\n", line.dump().c_str());
}

int api_failure(attnlab_status status) {
  print_error(attnlab_status_name(status), attnlab_last_error());
  return static_cast<int>(status);
}

int run(const std::string& kind, const Options& opt) {
  attnlab_config* config = nullptr;
  attnlab_status st = opt.config.empty() ? attnlab_config_new(kind.c_str(), &config)
                                         : attnlab_config_load(kind.c_str(), opt.config.c_str(), &config);
  if (st != ATTNLAB_OK) return api_failure(st);

  auto set = [&](const std::string& key, const std::string& value) {
    return st == ATTNLAB_OK ? (st = attnlab_config_set(config, key.c_str(), value.c_str())) : st;
  };
  for (const std::string& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      attnlab_config_free(config);
      print_error("usage", "--set expects key=value, got '" + kv + "'");
      return kUsageExit;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed) set("seed", std::to_string(*opt.seed));
  if (!opt.out.empty()) set("out", opt.out);
  if (!opt.input.empty()) set("report.input", opt.input);
  if (st != ATTNLAB_OK) {
    attnlab_config_free(config);
    return api_failure(st);
  }

  attnlab_report* report = nullptr;
  st = attnlab_run(config, &report);
  attnlab_config_free(config);
  if (st != ATTNLAB_OK) return api_failure(st);

  st = attnlab_report_write(report, opt.out.c_str());
  double seconds = 0.0;
  attnlab_report_wall_clock(report, &seconds);
  attnlab_report_free(report);
  if (st != ATTNLAB_OK) return api_failure(st);

  nlohmann::ordered_json line{{"status", "ok"}, {"kind", kind}, {"out", opt.out}, {"wall_clock_seconds", seconds}};
  std::printf("%s\n", line.dump().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnlab: attention analysis and TCAS experiments on a synthetic grounding task"};
  app.set_version_flag("--version", std::string(attnlab_version()));
  app.require_subcommand(1);

  Options opt;
  const std::map<std::string, std::string> commands = {
      {"correlate", "train or load a model and correlate discriminability with consistency"},
      {"intervene", "sweep attention interventions over an alpha grid"},
      {"train-compare", "train baseline and TCAS arms on matched seeds"},
      {"ablate", "one-at-a-time sensitivity of the TCAS hyperparameters"},
      {"report", "re-emit a saved report.json into another directory"},
      {"gen-data", "write the synthetic dataset as JSONL"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--set", opt.sets, "override one config key (key=value), repeatable");
    if (name == "report") sub->add_option("--input", opt.input, "report.json to re-emit")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kUsageExit;
  }

  for (const auto& [name, help] : commands) {
    if (app.got_subcommand(name)) return run(name, opt);
  }
  return kUsageExit;
}
