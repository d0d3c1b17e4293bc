#pragma once

// Report rendering: machine-readable key=value records per method and a
// human-readable aligned table with direction-aware average ranks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/metrics.hpp"

namespace dp {

// Rank direction per metric name: true = lower is better.
inline bool metric_lower_is_better(const std::string& name) {
  static const std::map<std::string, bool> dir = {
      {"absrel", true},   {"delta1", false},     {"mean_angle", true},
      {"frac_11.25", false}, {"sad", true},      {"mad", true},
      {"mse", true},      {"conn", true},        {"iou", false},
      {"pa", false},      {"dice", false},
  };
  auto it = dir.find(name);
  if (it == dir.end())
    throw usage_error("no rank direction known for metric '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Machine-readable records: newline-delimited key=value, one report per text.
// ---------------------------------------------------------------------------

inline std::string report_records(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "task=" << r.task << "\n";
  os << "samples=" << r.sample_count << "\n";
  os << "nfe=" << r.nfe << "\n";
  os << "align=" << (r.align ? "on" : "off") << "\n";
  for (const auto& [name, value] : r.metrics)
    os << "metric." << name << "=" << value << "\n";
  return os.str();
}

// Strict inverse of report_records; offsets in errors are byte positions.
inline MetricsReport parse_report_records(const std::string& text) {
  MetricsReport r;
  r.align = true;
  bool saw_task = false, saw_samples = false, saw_nfe = false,
       saw_align = false;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    const size_t at = pos;
    pos = end + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw format_error("report record is not key=value", at);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "task") {
      if (saw_task) throw format_error("duplicate task record", at);
      saw_task = true;
      r.task = value;
    } else if (key == "samples") {
      if (saw_samples) throw format_error("duplicate samples record", at);
      saw_samples = true;
      try {
        size_t used = 0;
        r.sample_count = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trail");
      } catch (const std::exception&) {
        throw format_error("samples record is not an integer", at);
      }
    } else if (key == "nfe") {
      if (saw_nfe) throw format_error("duplicate nfe record", at);
      saw_nfe = true;
      r.nfe = value;
    } else if (key == "align") {
      if (saw_align) throw format_error("duplicate align record", at);
      saw_align = true;
      if (value != "on" && value != "off")
        throw format_error("align record must be on or off", at);
      r.align = value == "on";
    } else if (key.rfind("metric.", 0) == 0) {
      const std::string name = key.substr(7);
      if (name.empty()) throw format_error("empty metric name", at);
      for (const auto& [k, v] : r.metrics)
        if (k == name) throw format_error("duplicate metric '" + name + "'", at);
      double v = 0.0;
      try {
        size_t used = 0;
        v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trail");
      } catch (const std::exception&) {
        throw format_error("metric record is not a number", at);
      }
      if (!std::isfinite(v))
        throw format_error("metric value must be finite", at);
      r.metrics.emplace_back(name, v);
    } else {
      throw format_error("unknown report record key '" + key + "'", at);
    }
  }
  if (!saw_task) throw format_error("report is missing the task record", 0);
  if (!saw_samples)
    throw format_error("report is missing the samples record", 0);
  if (r.metrics.empty()) throw format_error("report has no metrics", 0);
  return r;
}

// ---------------------------------------------------------------------------
// Table rendering with average ranks
// ---------------------------------------------------------------------------

struct MethodReport {
  std::string method;
  MetricsReport report;
};

namespace detail {

// Column widths in glyphs, not bytes (the NFE field holds a multibyte ×).
inline size_t display_width(const std::string& s) {
  size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

inline void require_consistent(const std::vector<MethodReport>& rows) {
  if (rows.empty()) throw usage_error("render_table needs at least one report");
  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].report.metrics.size() != rows[0].report.metrics.size())
      throw usage_error("reports have inconsistent metric sets");
    for (size_t j = 0; j < rows[0].report.metrics.size(); ++j)
      if (rows[i].report.metrics[j].first != rows[0].report.metrics[j].first)
        throw usage_error("reports have inconsistent metric sets");
  }
}

}  // namespace detail

// Per-method average rank across metrics, 1 = best; direction-aware; exact
// ties share the mean of the ranks they occupy.
inline std::vector<double> average_ranks(const std::vector<MethodReport>& rows) {
  detail::require_consistent(rows);
  const size_t n = rows.size();
  const size_t m = rows[0].report.metrics.size();
  std::vector<double> avg(n, 0.0);
  for (size_t j = 0; j < m; ++j) {
    const bool lower = metric_lower_is_better(rows[0].report.metrics[j].first);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      const double va = rows[a].report.metrics[j].second;
      const double vb = rows[b].report.metrics[j].second;
      if (va != vb) return lower ? va < vb : va > vb;
      return a < b;  // stable tie order; ties share rank below anyway
    });
    size_t i = 0;
    while (i < n) {
      size_t k = i + 1;
      while (k < n && rows[order[k]].report.metrics[j].second ==
                          rows[order[i]].report.metrics[j].second)
        ++k;
      // Positions i..k-1 (0-based) share the mean of ranks i+1..k.
      const double shared = 0.5 * double(i + 1 + k);
      for (size_t p = i; p < k; ++p) avg[order[p]] += shared / double(m);
      i = k;
    }
  }
  return avg;
}

// Aligned text table: one row per method, one column per metric, plus NFE
// and the direction-aware average rank.
inline std::string render_table(const std::vector<MethodReport>& rows) {
  detail::require_consistent(rows);
  const std::vector<double> ranks = average_ranks(rows);
  const size_t m = rows[0].report.metrics.size();

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header;
  header.push_back("Method");
  for (size_t j = 0; j < m; ++j)
    header.push_back(rows[0].report.metrics[j].first);
  header.push_back("NFE");
  header.push_back("AvgRank");
  cells.push_back(header);

  char buf[64];
  for (size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(rows[i].method);
    for (size_t j = 0; j < m; ++j) {
      std::snprintf(buf, sizeof buf, "%.3f", rows[i].report.metrics[j].second);
      row.push_back(buf);
    }
    row.push_back(rows[i].report.nfe.empty() ? "-" : rows[i].report.nfe);
    std::snprintf(buf, sizeof buf, "%.2f", ranks[i]);
    row.push_back(buf);
    cells.push_back(std::move(row));
  }

  std::vector<size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], detail::display_width(row[c]));

  std::ostringstream os;
  for (size_t r = 0; r < cells.size(); ++r) {
    for (size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      const size_t pad = width[c] - detail::display_width(s);
      if (c == 0) {
        os << s << std::string(pad, ' ');
      } else {
        os << "  " << std::string(pad, ' ') << s;
      }
    }
    os << "\n";
    if (r == 0) {
      size_t total = width[0];
      for (size_t c = 1; c < width.size(); ++c) total += width[c] + 2;
      os << std::string(total, '-') << "\n";
    }
  }
  return os.str();
}

}  // namespace dp
