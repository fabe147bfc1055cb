#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "panomaly/common.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Calendar: dates are days since the Unix epoch; weekday is derived
// arithmetically. ISO-8601 text at the file boundary only.
// ---------------------------------------------------------------------------

inline int parse_date(const std::string& iso) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
    throw DataError("unparseable date: '" + iso + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw DataError("invalid calendar date: '" + iso + "'");
  return static_cast<int>(sys_days{ymd}.time_since_epoch().count());
}

inline std::string format_date(int days_since_epoch) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{days_since_epoch}}};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

enum class PanelLayout { Raw, Residual, Differenced };

inline const char* to_string(PanelLayout layout) {
  switch (layout) {
    case PanelLayout::Raw: return "raw";
    case PanelLayout::Residual: return "residual";
    case PanelLayout::Differenced: return "differenced";
  }
  return "raw";
}

/// A d-series, n-observation daily panel. Values are stored n x d with one
/// contiguous column per series. Immutable by convention after construction.
struct Panel {
  Matrix values;                    // n x d
  std::vector<std::string> series_ids;
  std::vector<int> dates;           // strictly increasing, daily spacing
  PanelLayout layout = PanelLayout::Raw;

  Eigen::Index n_obs() const { return values.rows(); }
  Eigen::Index n_series() const { return values.cols(); }

  std::span<const double> series(Eigen::Index i) const {
    return {values.col(i).data(), static_cast<std::size_t>(values.rows())};
  }

  void validate() const {
    if (values.cols() != static_cast<Eigen::Index>(series_ids.size()))
      throw DataError("panel: series id count does not match value columns");
    if (values.rows() != static_cast<Eigen::Index>(dates.size()))
      throw DataError("panel: date count does not match value rows");
    for (std::size_t t = 1; t < dates.size(); ++t)
      if (dates[t] != dates[t - 1] + 1)
        throw DataError("panel: non-daily spacing at " + format_date(dates[t - 1]));
    std::vector<std::string> ids = series_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw DataError("panel: duplicate series id");
  }
};

/// Synthetic daily calendar starting at 2021-04-01 for generated panels.
inline std::vector<int> default_calendar(Eigen::Index n) {
  std::vector<int> dates(static_cast<std::size_t>(n));
  const int start = parse_date("2021-04-01");
  for (Eigen::Index t = 0; t < n; ++t) dates[static_cast<std::size_t>(t)] = start + static_cast<int>(t);
  return dates;
}

// ---------------------------------------------------------------------------
// CSV ingestion. Wide layout: header "date,<id1>,<id2>,..."; long layout:
// header "date,id,value" in any row order. Detected by header. Missing cells
// are forward-filled (a balance is a stock); leading gaps take the first
// observed value.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_value(const std::string& field) {
  const std::string t = trim(field);
  if (t.empty() || t == "NA" || t == "nan" || t == "NaN") return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw DataError("unparseable numeric field: '" + field + "'");
  return v;
}

inline void forward_fill(Matrix& values) {
  for (Eigen::Index i = 0; i < values.cols(); ++i) {
    Eigen::Index first = -1;
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      if (!std::isnan(values(t, i))) { first = t; break; }
    }
    if (first < 0)
      throw DataError("series column " + std::to_string(i) + " has no observations");
    for (Eigen::Index t = 0; t < first; ++t) values(t, i) = values(first, i);
    for (Eigen::Index t = first + 1; t < values.rows(); ++t)
      if (std::isnan(values(t, i))) values(t, i) = values(t - 1, i);
  }
}

}  // namespace detail

inline Panel load_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty panel file: " + path);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  if (header.size() < 2 || header[0] != "date")
    throw DataError("panel header must start with 'date': " + path);

  const bool long_layout =
      header.size() == 3 && header[1] == "id" && header[2] == "value";

  const double nan = std::numeric_limits<double>::quiet_NaN();
  Panel panel;

  if (long_layout) {
    struct Cell { int date; std::string id; std::optional<double> value; };
    std::vector<Cell> cells;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      auto f = detail::split_csv_line(line);
      if (f.size() != 3) throw DataError("long layout row needs 3 fields: " + line);
      cells.push_back({parse_date(detail::trim(f[0])), detail::trim(f[1]),
                       detail::parse_value(f[2])});
    }
    if (cells.empty()) throw DataError("empty series set in " + path);
    std::vector<int> dates;
    std::vector<std::string> ids;
    for (const auto& c : cells) { dates.push_back(c.date); ids.push_back(c.id); }
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::map<std::string, Eigen::Index> id_index;
    for (std::size_t i = 0; i < ids.size(); ++i) id_index[ids[i]] = static_cast<Eigen::Index>(i);
    panel.values = Matrix::Constant(static_cast<Eigen::Index>(dates.size()),
                                    static_cast<Eigen::Index>(ids.size()), nan);
    for (const auto& c : cells) {
      const auto t = std::lower_bound(dates.begin(), dates.end(), c.date) - dates.begin();
      if (c.value) panel.values(static_cast<Eigen::Index>(t), id_index[c.id]) = *c.value;
    }
    panel.dates = dates;
    panel.series_ids = ids;
  } else {
    panel.series_ids.assign(header.begin() + 1, header.end());
    if (panel.series_ids.empty()) throw DataError("empty series set in " + path);
    struct Row { int date; std::vector<std::optional<double>> v; };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      auto f = detail::split_csv_line(line);
      if (f.size() != header.size())
        throw DataError("row width does not match header: " + line);
      Row r;
      r.date = parse_date(detail::trim(f[0]));
      for (std::size_t j = 1; j < f.size(); ++j) r.v.push_back(detail::parse_value(f[j]));
      rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError("panel has no data rows: " + path);
    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return a.date < b.date; });
    panel.values = Matrix::Constant(static_cast<Eigen::Index>(rows.size()),
                                    static_cast<Eigen::Index>(panel.series_ids.size()), nan);
    panel.dates.resize(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      panel.dates[t] = rows[t].date;
      for (std::size_t j = 0; j < panel.series_ids.size(); ++j)
        if (rows[t].v[j]) panel.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = *rows[t].v[j];
    }
  }

  detail::forward_fill(panel.values);
  panel.validate();
  return panel;
}

/// Writes the wide CSV layout; %.17g keeps values round-trip exact.
inline void save_panel(const Panel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write panel file: " + path);
  out << "date";
  for (const auto& id : panel.series_ids) out << ',' << id;
  out << '\n';
  char buf[32];
  for (Eigen::Index t = 0; t < panel.n_obs(); ++t) {
    out << format_date(panel.dates[static_cast<std::size_t>(t)]);
    for (Eigen::Index i = 0; i < panel.n_series(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", panel.values(t, i));
      out << ',' << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Activity-based preprocessing. An "operation" is a day whose balance
// differs from the previous day's.
// ---------------------------------------------------------------------------

struct ActivityFilterConfig {
  int min_operations = 103;
  int max_dormant_days = 200;
  std::optional<int> inactivity_cutoff_date;  // no operation on/after => drop
  std::optional<int> closure_cutoff_date;     // proxy for closed accounts

  void validate() const {
    if (min_operations < 1) throw DataError("min_operations must be >= 1");
    if (max_dormant_days < 1) throw DataError("max_dormant_days must be >= 1");
  }
};

struct Exclusion {
  std::string series_id;
  std::string rule;  // min_operations | dormant | inactive | closed
};

struct FilterResult {
  Panel panel;
  std::vector<Exclusion> exclusions;
};

inline FilterResult apply_activity_filters(const Panel& p,
                                           const ActivityFilterConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = p.n_obs();
  std::vector<Eigen::Index> keep;
  FilterResult out;
  for (Eigen::Index i = 0; i < p.n_series(); ++i) {
    int operations = 0;
    int dormant_run = 0;
    int max_dormant = 0;
    int last_op_date = std::numeric_limits<int>::min();
    for (Eigen::Index t = 1; t < n; ++t) {
      if (p.values(t, i) != p.values(t - 1, i)) {
        ++operations;
        last_op_date = p.dates[static_cast<std::size_t>(t)];
        dormant_run = 0;
      } else {
        ++dormant_run;
        max_dormant = std::max(max_dormant, dormant_run);
      }
    }
    std::string rule;
    if (operations < cfg.min_operations) rule = "min_operations";
    else if (max_dormant >= cfg.max_dormant_days) rule = "dormant";
    else if (cfg.inactivity_cutoff_date && last_op_date < *cfg.inactivity_cutoff_date)
      rule = "inactive";
    else if (cfg.closure_cutoff_date && last_op_date < *cfg.closure_cutoff_date)
      rule = "closed";
    if (rule.empty()) keep.push_back(i);
    else out.exclusions.push_back({p.series_ids[static_cast<std::size_t>(i)], rule});
  }
  out.panel.values.resize(n, static_cast<Eigen::Index>(keep.size()));
  out.panel.series_ids.reserve(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.panel.values.col(static_cast<Eigen::Index>(j)) = p.values.col(keep[j]);
    out.panel.series_ids.push_back(p.series_ids[static_cast<std::size_t>(keep[j])]);
  }
  out.panel.dates = p.dates;
  out.panel.layout = p.layout;
  return out;
}

inline void save_exclusion_log(const std::vector<Exclusion>& log,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write exclusion log: " + path);
  out << "series_id,rule\n";
  for (const auto& e : log) out << e.series_id << ',' << e.rule << '\n';
}

// ---------------------------------------------------------------------------
// Differencing. diff[t] = in[t+1] - in[t]; row t of the result carries the
// date of in[t+1], so a differenced cell at t aligns with raw time t+1.
// ---------------------------------------------------------------------------

inline Panel first_difference(const Panel& p) {
  if (p.n_obs() < 2) throw DataError("first_difference needs n >= 2");
  Panel out;
  out.values = p.values.bottomRows(p.n_obs() - 1) - p.values.topRows(p.n_obs() - 1);
  out.series_ids = p.series_ids;
  out.dates.assign(p.dates.begin() + 1, p.dates.end());
  out.layout = PanelLayout::Differenced;
  return out;
}

/// Inverse of first_difference given the dropped first row.
inline Panel cumulative_sum(const Panel& diff, const Vector& first_row,
                            int first_date) {
  Panel out;
  out.values.resize(diff.n_obs() + 1, diff.n_series());
  out.values.row(0) = first_row.transpose();
  for (Eigen::Index t = 0; t < diff.n_obs(); ++t)
    out.values.row(t + 1) = out.values.row(t) + diff.values.row(t);
  out.series_ids = diff.series_ids;
  out.dates.resize(static_cast<std::size_t>(diff.n_obs()) + 1);
  out.dates[0] = first_date;
  std::copy(diff.dates.begin(), diff.dates.end(), out.dates.begin() + 1);
  out.layout = PanelLayout::Raw;
  return out;
}

}  // namespace panomaly
