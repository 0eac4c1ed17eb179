#pragma once

// Experiment reports: a versioned JSON document plus CSV tables and
// plot-ready TSV files derived from it.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace attnlab {

inline constexpr int kReportSchemaVersion = 1;

using Cell = std::variant<std::int64_t, double, std::string>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
  bool operator==(const Table&) const = default;
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string tool_version;
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<Table> tables;  // emitted as <name>.csv
  std::vector<Table> plots;   // emitted as <name>.tsv (histograms, scatter data)
  std::vector<std::string> notes;
  double wall_clock_seconds = 0.0;

  void set_scalar(const std::string& name, double value);
  std::optional<double> scalar(const std::string& name) const;
  const Table* table(const std::string& name) const;
  const Table* plot(const std::string& name) const;

  bool operator==(const RunReport&) const = default;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

std::string table_to_csv(const Table& table);
std::string table_to_tsv(const Table& table);

// Writes report.json, one CSV per table and one TSV per plot into `directory`
// (created if missing). Every file goes through a temp file and a rename.
void emit_report(const RunReport& report, const std::string& directory);

RunReport load_report(const std::string& path);

}  // namespace attnlab
