#include "attnlab/report.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "attnlab/error.hpp"
#include "attnlab/io.hpp"

namespace attnlab {

namespace {

using Json = nlohmann::ordered_json;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void require_finite(double v, const std::string& where) {
  require(std::isfinite(v), ErrorCode::numerical, "non-finite value in report " + where);
}

Json cell_to_json(const Cell& c, const std::string& where) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return *i;
  if (const auto* d = std::get_if<double>(&c)) {
    require_finite(*d, where);
    return *d;
  }
  return std::get<std::string>(c);
}

Cell cell_from_json(const Json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  fail(ErrorCode::io, "report cell must be a number or a string");
}

Json table_to_json(const Table& t) {
  Json rows = Json::array();
  for (const auto& row : t.rows) {
    Json r = Json::array();
    for (const auto& c : row) r.push_back(cell_to_json(c, "table " + t.name));
    rows.push_back(std::move(r));
  }
  return Json{{"name", t.name}, {"columns", t.columns}, {"rows", std::move(rows)}};
}

Table table_from_json(const Json& j) {
  Table t;
  t.name = j.at("name").get<std::string>();
  t.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& r : j.at("rows")) {
    std::vector<Cell> row;
    for (const auto& c : r) row.push_back(cell_from_json(c));
    t.add_row(std::move(row));
  }
  return t;
}

std::string cell_text(const Cell& c, char sep) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&c)) return shortest(*d);
  const std::string& s = std::get<std::string>(c);
  if (s.find_first_of(std::string{sep, '"', '\n'}) == std::string::npos) return s;
  std::string quoted = "\"";
  for (char ch : s) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  return quoted + '"';
}

std::string delimited(const Table& t, char sep) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i > 0) out += sep;
    out += cell_text(Cell{t.columns[i]}, sep);
  }
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out += sep;
      out += cell_text(row[i], sep);
    }
    out += '\n';
  }
  return out;
}

void check_file_name(const std::string& name) {
  require(!name.empty() && name.find_first_of("/\\") == std::string::npos && name != "." && name != "..",
          ErrorCode::invalid_argument, "report table name '" + name + "' is not a plain file name");
}

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  require(row.size() == columns.size(), ErrorCode::dimension_mismatch,
          "table " + name + " expects " + std::to_string(columns.size()) + " cells per row, got " +
              std::to_string(row.size()));
  rows.push_back(std::move(row));
}

void RunReport::set_scalar(const std::string& name, double value) {
  for (auto& [k, v] : scalars) {
    if (k == name) {
      v = value;
      return;
    }
  }
  scalars.emplace_back(name, value);
}

std::optional<double> RunReport::scalar(const std::string& name) const {
  for (const auto& [k, v] : scalars) {
    if (k == name) return v;
  }
  return std::nullopt;
}

const Table* RunReport::table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Table* RunReport::plot(const std::string& name) const {
  for (const auto& t : plots) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string report_to_json(const RunReport& report) {
  Json j;
  j["schema"] = "attnlab.report";
  j["schema_version"] = report.schema_version;
  j["tool_version"] = report.tool_version;
  j["kind"] = report.kind;
  Json config = Json::object();
  for (const auto& [k, v] : report.config) config[k] = v;
  j["config"] = std::move(config);
  Json scalars = Json::object();
  for (const auto& [k, v] : report.scalars) {
    require_finite(v, "scalar " + k);
    scalars[k] = v;
  }
  j["scalars"] = std::move(scalars);
  j["tables"] = Json::array();
  for (const auto& t : report.tables) j["tables"].push_back(table_to_json(t));
  j["plots"] = Json::array();
  for (const auto& t : report.plots) j["plots"].push_back(table_to_json(t));
  j["notes"] = report.notes;
  require_finite(report.wall_clock_seconds, "wall clock");
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::io, std::string("report is not valid JSON: ") + e.what());
  }
  try {
    require(j.value("schema", std::string{}) == "attnlab.report", ErrorCode::io, "not an attnlab report");
    RunReport r;
    r.schema_version = j.at("schema_version").get<int>();
    require(r.schema_version == kReportSchemaVersion, ErrorCode::io,
            "unsupported report schema version " + std::to_string(r.schema_version));
    r.tool_version = j.at("tool_version").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
    for (const auto& [k, v] : j.at("scalars").items()) r.scalars.emplace_back(k, v.get<double>());
    for (const auto& t : j.at("tables")) r.tables.push_back(table_from_json(t));
    for (const auto& t : j.at("plots")) r.plots.push_back(table_from_json(t));
    r.notes = j.at("notes").get<std::vector<std::string>>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
  } catch (const Json::exception& e) {
    fail(ErrorCode::io, std::string("malformed report: ") + e.what());
  }
}

std::string table_to_csv(const Table& table) { return delimited(table, ','); }

std::string table_to_tsv(const Table& table) { return delimited(table, '\t'); }

void emit_report(const RunReport& report, const std::string& directory) {
  require(!directory.empty(), ErrorCode::invalid_argument, "report output directory is empty");
  const std::string json = report_to_json(report);
  for (const auto& t : report.tables) check_file_name(t.name);
  for (const auto& t : report.plots) check_file_name(t.name);
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  require(!ec, ErrorCode::io, "cannot create output directory " + directory + ": " + ec.message());
  const std::filesystem::path dir(directory);
  for (const auto& t : report.tables) write_file_atomic((dir / (t.name + ".csv")).string(), table_to_csv(t));
  for (const auto& t : report.plots) write_file_atomic((dir / (t.name + ".tsv")).string(), table_to_tsv(t));
  write_file_atomic((dir / "report.json").string(), json);
}

RunReport load_report(const std::string& path) { return report_from_json(read_file(path)); }

}  // namespace attnlab
