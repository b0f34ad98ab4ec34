#include "mvr/bench/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mvr::bench {

std::string emit_csv(const std::vector<ResultRow>& rows) {
  require(!rows.empty(), errc::parameter, "report: no rows");
  std::string out = "method,scenario,view_mask,mae,rmse,r,n,seed\n";
  char line[256];
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%s,%.4f,%.4f,%.4f,%zu,%llu\n", row.method.c_str(),
                  row.scenario.c_str(), row.view_mask.c_str(), row.metrics.mae, row.metrics.rmse,
                  row.metrics.r, row.metrics.n, static_cast<unsigned long long>(row.seed));
    out += line;
  }
  return out;
}

std::vector<ResultRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), errc::data, "report: empty CSV");
  require(line == "method,scenario,view_mask,mae,rmse,r,n,seed", errc::data,
          "report: unexpected CSV header");
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ResultRow row;
    std::string field;
    auto next = [&]() {
      require(static_cast<bool>(std::getline(ls, field, ',')), errc::data,
              "report: malformed CSV row: " + line);
      return field;
    };
    row.method = next();
    row.scenario = next();
    row.view_mask = next();
    row.metrics.mae = std::stod(next());
    row.metrics.rmse = std::stod(next());
    row.metrics.r = std::stod(next());
    row.metrics.n = static_cast<std::size_t>(std::stoull(next()));
    row.seed = std::stoull(next());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string human_table(const std::vector<ResultRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-11s %-5s %8s %8s %7s %5s %6s\n", "method", "scenario",
                "views", "MAE", "RMSE", "R", "n", "seed");
  out += line;
  out += std::string(66, '-') + "\n";
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-10s %-11s %-5s %8.4f %8.4f %7.4f %5zu %6llu\n",
                  row.method.c_str(), row.scenario.c_str(), row.view_mask.c_str(), row.metrics.mae,
                  row.metrics.rmse, row.metrics.r, row.metrics.n,
                  static_cast<unsigned long long>(row.seed));
    out += line;
  }
  return out;
}

void write_report(const std::filesystem::path& csv_file, const std::vector<ResultRow>& rows) {
  std::ofstream os(csv_file, std::ios::binary);
  require(os.good(), errc::data, "report: cannot write " + csv_file.string());
  os << emit_csv(rows);
}

std::vector<ResultRow> read_report(const std::filesystem::path& csv_file) {
  std::ifstream is(csv_file, std::ios::binary);
  require(is.good(), errc::data, "report: cannot read " + csv_file.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_csv(text);
}

}  // namespace mvr::bench
