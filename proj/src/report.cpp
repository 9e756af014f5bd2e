// SPDX-License-Identifier: Apache-2.0
#include "rlbind/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include "rlbind/checkpoint.hpp"
#include "rlbind/error.hpp"

namespace rlbind {

namespace {

using Key = std::tuple<std::string, std::string, std::string>;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_acc(const std::string& v, const std::string& where) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !(out >= 0.0 && out <= 1.0)) {
    throw FormatError(where + ": accuracy '" + v + "' is not a number in [0, 1]");
  }
  return out;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

// Difference in percentage points, rounded to two decimals first so that
// equal values always print as zero.
double delta_points(double v, double base) { return std::round(100.0 * (100.0 * v - 100.0 * base)) / 100.0; }

std::string signed_delta(double d) {
  char buf[32];
  if (d == 0.0) return "0.00";
  std::snprintf(buf, sizeof buf, "%+.2f", d);
  return buf;
}

std::string arrow_delta(double d) {
  char buf[32];
  if (d == 0.0) return "0.00";
  std::snprintf(buf, sizeof buf, "%s%.2f", d > 0 ? "↑" : "↓", std::fabs(d));
  return buf;
}

// Display width, counting UTF-8 code points.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

std::vector<std::vector<std::string>> table_cells(const Report& report, bool arrows) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"run_id", "modality", "epsilon"};
  for (std::size_t r = 0; r < report.labels.size(); ++r) {
    header.push_back(report.labels[r] + ":clean");
    header.push_back(report.labels[r] + ":robust");
    if (r > 0) {
      header.push_back(report.labels[r] + ":d_clean");
      header.push_back(report.labels[r] + ":d_robust");
    }
  }
  rows.push_back(header);
  for (const ReportLine& line : report.lines) {
    std::vector<std::string> cells{line.run_id, line.modality, line.epsilon};
    for (std::size_t r = 0; r < report.labels.size(); ++r) {
      cells.push_back(pct(line.clean[r]));
      cells.push_back(pct(line.robust[r]));
      if (r > 0) {
        const double dc = delta_points(line.clean[r], line.clean[0]);
        const double dr = delta_points(line.robust[r], line.robust[0]);
        cells.push_back(arrows ? arrow_delta(dc) : signed_delta(dc));
        cells.push_back(arrows ? arrow_delta(dr) : signed_delta(dr));
      }
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError(origin + ": empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) {
    throw FormatError(origin + ": schema mismatch, header is '" + line + "', expected '" + kMetricsHeader + "'");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = origin + ":" + std::to_string(line_no);
    if (f.size() != 12) throw FormatError(where + ": expected 12 fields, got " + std::to_string(f.size()));
    MetricsRow r;
    r.run_id = f[0];
    r.stage = f[1];
    r.modality = f[2];
    r.scorer = f[3];
    r.alignment = f[4];
    r.lora = f[5];
    r.lambda = f[6];
    r.epsilon = f[7];
    r.clean_acc = parse_acc(f[8], where);
    r.robust_acc = parse_acc(f[9], where);
    try {
      std::size_t pos = 0;
      if (f[10].empty() || f[10][0] == '-') throw std::invalid_argument("seed");
      r.seed = std::stoull(f[10], &pos);
      if (pos != f[10].size()) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw FormatError(where + ": seed '" + f[10] + "' is not an unsigned integer");
    }
    r.config_hash = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  return parse_metrics_csv(read_file(path), path.string());
}

Report build_report(const std::vector<ReportRun>& runs) {
  if (runs.empty()) throw ArgumentError("report: at least one run is required");
  Report report;
  std::vector<Key> order;
  std::map<Key, std::size_t> index;
  for (const MetricsRow& r : runs.front().rows) {
    const Key k{r.run_id, r.modality, r.epsilon};
    if (index.count(k) != 0) {
      throw FormatError("report: run '" + runs.front().label + "' repeats row " + r.run_id + "/" + r.modality + "/" +
                        r.epsilon);
    }
    index[k] = order.size();
    order.push_back(k);
    report.lines.push_back({r.run_id, r.modality, r.epsilon, {}, {}});
  }
  for (const ReportRun& run : runs) {
    report.labels.push_back(run.label);
    if (run.rows.size() != order.size()) {
      throw FormatError("report: schema mismatch, run '" + run.label + "' has " + std::to_string(run.rows.size()) +
                        " rows, baseline has " + std::to_string(order.size()));
    }
    std::vector<bool> seen(order.size(), false);
    for (const MetricsRow& r : run.rows) {
      const auto it = index.find(Key{r.run_id, r.modality, r.epsilon});
      if (it == index.end() || seen[it->second]) {
        throw FormatError("report: schema mismatch, run '" + run.label + "' has unmatched row " + r.run_id + "/" +
                          r.modality + "/" + r.epsilon);
      }
      seen[it->second] = true;
      report.lines[it->second].clean.push_back(r.clean_acc);
      report.lines[it->second].robust.push_back(r.robust_acc);
    }
  }
  return report;
}

Report build_report(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<ReportRun> runs;
  for (const auto& dir : run_dirs) {
    const auto csv = dir / "metrics.csv";
    if (!std::filesystem::exists(csv)) throw FormatError("report: no metrics.csv in '" + dir.string() + "'");
    std::string label = dir.filename().string();
    if (label.empty()) label = dir.parent_path().filename().string();
    auto rows = read_metrics_csv(csv);
    // Tag the label with the run's stage when it has a single one.
    if (!rows.empty() && std::all_of(rows.begin(), rows.end(),
                                     [&](const MetricsRow& r) { return r.stage == rows.front().stage; })) {
      label += "(" + rows.front().stage + ")";
    }
    runs.push_back({label, std::move(rows)});
  }
  return build_report(runs);
}

std::string report_csv(const Report& report) {
  std::ostringstream os;
  for (const auto& row : table_cells(report, false)) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  return os.str();
}

std::string report_text(const Report& report) {
  const auto rows = table_cells(report, true);
  std::vector<std::size_t> widths(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const std::string& cell = rows[r][i];
      const std::string pad(widths[i] - width(cell), ' ');
      // Text columns left-aligned, numbers right-aligned.
      os << (i ? "  " : "") << (i < 3 ? cell + pad : pad + cell);
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w;
      os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

std::string report_gnuplot(const Report& report) {
  std::ostringstream os;
  os << "# index label";
  for (const auto& l : report.labels) os << ' ' << l << ":clean " << l << ":robust";
  os << '\n';
  for (std::size_t i = 0; i < report.lines.size(); ++i) {
    const ReportLine& line = report.lines[i];
    os << i << ' ' << line.run_id << '/' << line.modality << '@' << line.epsilon;
    for (std::size_t r = 0; r < report.labels.size(); ++r) os << ' ' << pct(line.clean[r]) << ' ' << pct(line.robust[r]);
    os << '\n';
  }
  return os.str();
}

}  // namespace rlbind
