#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/orchestrator.hpp"

namespace pflego {

// 17 significant digits: enough for a double to round-trip bit-exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline constexpr const char* kRoundsCsvHeader =
    "round,global_train_loss,mean_test_accuracy,participants,"
    "forward_passes_total,wall_time_s";

inline std::string rounds_csv(const std::vector<RoundReport>& reports) {
  std::string out = kRoundsCsvHeader;
  out += '\n';
  for (const auto& r : reports) {
    out += std::to_string(r.round);
    out += ',';
    out += format_double(r.global_train_loss);
    out += ',';
    out += format_double(r.mean_test_accuracy);
    out += ',';
    out += std::to_string(r.participants.size());
    out += ',';
    out += std::to_string(r.forward_passes_total());
    out += ',';
    out += format_double(r.wall_time_s);
    out += '\n';
  }
  return out;
}

struct CsvRow {
  std::size_t round = 0;
  double global_train_loss = 0.0;
  double mean_test_accuracy = 0.0;
  std::size_t participants = 0;
  long long forward_passes_total = 0;
  double wall_time_s = 0.0;
};

inline std::vector<CsvRow> parse_rounds_csv(const std::string& content) {
  std::vector<CsvRow> rows;
  std::size_t pos = 0;
  bool first = true;
  while (pos < content.size()) {
    std::size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) eol = content.size();
    const std::string line = content.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (first) {
      if (line != kRoundsCsvHeader) {
        throw FormatError("rounds.csv: unexpected header: " + line);
      }
      first = false;
      continue;
    }
    CsvRow row;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%zu,%lld,%lf", &row.round,
                    &row.global_train_loss, &row.mean_test_accuracy,
                    &row.participants, &row.forward_passes_total,
                    &row.wall_time_s) != 6) {
      throw FormatError("rounds.csv: malformed row: " + line);
    }
    rows.push_back(row);
  }
  return rows;
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over the window
};

// Mean and stddev over the final `window` values (all of them when fewer),
// matching the convention of averaging the last rounds of a run.
inline MetricSummary summarize_final_window(const std::vector<double>& values,
                                            std::size_t window = 10) {
  if (values.empty()) throw InputError("summarize_final_window: no values");
  const std::size_t n = std::min(window, values.size());
  const std::size_t start = values.size() - n;
  MetricSummary s;
  for (std::size_t i = start; i < values.size(); ++i) s.mean += values[i];
  s.mean /= static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (std::size_t i = start; i < values.size(); ++i) {
      const double d = values[i] - s.mean;
      ss += d * d;
    }
    s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

}  // namespace pflego
