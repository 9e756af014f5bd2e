// SPDX-License-Identifier: Apache-2.0
//
// Merging metrics CSVs from several run directories into one comparison
// table, with per-metric deltas against the first (baseline) run.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rlbind/pipeline.hpp"

namespace rlbind {

// Parses a metrics CSV; the header must match kMetricsHeader exactly.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text, const std::string& origin);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct ReportRun {
  std::string label;
  std::vector<MetricsRow> rows;
};

// Rows are joined on (run_id, modality, epsilon), so runs of different
// stages compare side by side.
struct ReportLine {
  std::string run_id;
  std::string modality;
  std::string epsilon;
  std::vector<double> clean;   // one per run, in [0, 1]
  std::vector<double> robust;
};

struct Report {
  std::vector<std::string> labels;
  std::vector<ReportLine> lines;
};

// Every run must carry exactly the same join keys; otherwise FormatError.
Report build_report(const std::vector<ReportRun>& runs);
Report build_report(const std::vector<std::filesystem::path>& run_dirs);

// Percentages with two decimals; deltas (later runs minus the first) as
// signed numbers. A single run has no delta columns.
std::string report_csv(const Report& report);
// Aligned text; deltas rendered with arrows ("↑3.25", "↓1.10", "0.00").
std::string report_text(const Report& report);
// Whitespace-separated columns with a '#' header line, for gnuplot.
std::string report_gnuplot(const Report& report);

}  // namespace rlbind
