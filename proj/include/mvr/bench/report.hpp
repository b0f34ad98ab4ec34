#pragma once

#include <filesystem>

#include "mvr/signal.hpp"

namespace mvr::bench {

/// One line of a results table.
struct ResultRow {
  std::string method;
  std::string scenario;
  std::string view_mask;  // subset of "lcr"
  signal::MetricsReport metrics;
  std::uint64_t seed = 0;
};

/// CSV with header method,scenario,view_mask,mae,rmse,r,n,seed; metric
/// columns fixed to four decimals so emission is byte-deterministic.
std::string emit_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_csv(const std::string& text);

/// Fixed-width human-readable table of the same rows.
std::string human_table(const std::vector<ResultRow>& rows);

void write_report(const std::filesystem::path& csv_file, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_report(const std::filesystem::path& csv_file);

}  // namespace mvr::bench
