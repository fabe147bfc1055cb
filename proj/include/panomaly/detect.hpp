#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/scatter.hpp"
#include "panomaly/stats.hpp"

namespace panomaly {

enum class ScoreLevel { Raw, Differenced };

inline const char* to_string(ScoreLevel level) {
  return level == ScoreLevel::Raw ? "raw" : "diff";
}

/// Generic Mahalanobis distance sqrt(r' Sigma^-1 r). Singular matrices fall
/// back to the eigenvalue pseudo-inverse; rank is reported when asked.
inline double mahalanobis(const Vector& r, const Matrix& sigma,
                          int* rank_out = nullptr) {
  if (r.size() != sigma.rows() || sigma.rows() != sigma.cols())
    throw DataError("mahalanobis: dimension mismatch");
  Matrix E;
  Vector ev;
  detail::eigen_descending(sigma, E, ev);
  const double tol = 1e-12 * std::max(ev[0], 0.0);
  const Vector proj = E.transpose() * r;
  double acc = 0.0;
  int rank = 0;
  for (Eigen::Index j = 0; j < ev.size(); ++j) {
    if (ev[j] > tol) {
      acc += proj[j] * proj[j] / ev[j];
      ++rank;
    }
  }
  if (rank_out) *rank_out = rank;
  return std::sqrt(std::max(acc, 0.0));
}

/// Cellwise scores: c = (r/scale)^2, then z-scored over the pooled finite
/// cells. The per-series distance aggregates a series' standardized cells.
struct ScoreMatrix {
  Matrix scores;      // n x d z-scored cells
  Vector series_md;   // length d
  ScoreLevel level = ScoreLevel::Raw;
  double pooled_mean = 0.0;  // of the raw ratio c, before z-scoring
  double pooled_sd = 1.0;
};

inline ScoreMatrix cellwise_scores(const Matrix& residuals,
                                   const Vector& variances,
                                   ScoreLevel level = ScoreLevel::Raw) {
  const Eigen::Index n = residuals.rows();
  const Eigen::Index d = residuals.cols();
  if (variances.size() != d) throw DataError("cellwise_scores: variance length");
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(variances[i] > 0.0))
      throw NumericalError("cellwise_scores: nonpositive variance for series " +
                           std::to_string(i));
  ScoreMatrix out;
  out.level = level;
  out.scores.resize(n, d);
  for (Eigen::Index i = 0; i < d; ++i)
    out.scores.col(i) = residuals.col(i).array().square() / variances[i];

  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = out.scores(t, i);
      if (std::isfinite(v)) { sum += v; sum2 += v * v; ++count; }
    }
  if (count == 0) throw NumericalError("cellwise_scores: no finite cells");
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
  const double sd = std::sqrt(var);
  out.pooled_mean = mean;
  out.pooled_sd = sd;
  if (sd > 0.0)
    out.scores = (out.scores.array() - mean) / sd;
  else
    out.scores.setZero();

  out.series_md.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double r = residuals(t, i);
      if (std::isfinite(r)) acc += r * r / variances[i];
    }
    out.series_md[i] = std::sqrt(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholds. All tail-fitting constants close the "significantly deviates"
// gap and are configurable with these defaults.
// ---------------------------------------------------------------------------

enum class ThresholdMethod { Quantile, LinearLogTail, ParetoLogTail };

struct ThresholdSpec {
  ThresholdMethod method = ThresholdMethod::Quantile;
  double kappa = 0.0;
  bool fallback_used = false;  // tail fits only
  // diagnostics
  double slope = 0.0, intercept = 0.0;  // linear log-tail fit
  double z_m = 0.0, pareto_rho = 0.0;   // Pareto fit
};

struct ThresholdConfig {
  double tail_fraction = 0.05;      // top share fed to the tail fits
  double rmse_break = 2.0;          // linear fit: residual > break * RMSE
  double survival_break = 0.25;     // Pareto: empirical < break * fitted
  double pareto_zm_quantile = 0.95; // tail anchor z_m
  double fallback_quantile = 0.9975;
  int min_tail_points = 20;
  int min_break_exceedances = 5;    // points that must sit beyond the break
};

inline ThresholdSpec threshold_quantile(std::span<const double> scores, double k) {
  if (!(k > 0.0 && k < 1.0)) throw DataError("quantile level must be in (0,1)");
  ThresholdSpec spec;
  spec.method = ThresholdMethod::Quantile;
  spec.kappa = quantile(scores, k);
  return spec;
}

namespace detail {

inline std::vector<double> finite_sorted(std::span<const double> scores) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (double s : scores)
    if (std::isfinite(s)) v.push_back(s);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// Histogram of the top tail in log-count space; kappa sits at the first bin
/// whose count lands more than rmse_break RMSEs above the linear decay.
inline ThresholdSpec threshold_linear_logtail(std::span<const double> scores,
                                              const ThresholdConfig& cfg = {}) {
  auto v = detail::finite_sorted(scores);
  if (v.size() < 200)
    throw DataError("linear log-tail threshold needs >= 200 scores");
  if (v.front() == v.back())
    throw DataError("linear log-tail threshold: degenerate scores");

  ThresholdSpec spec;
  spec.method = ThresholdMethod::LinearLogTail;

  const std::size_t tail_start =
      v.size() - std::max<std::size_t>(
                     std::size_t(cfg.tail_fraction * double(v.size())), 50);
  std::vector<double> tail(v.begin() + static_cast<std::ptrdiff_t>(tail_start),
                           v.end());

  // Freedman-Diaconis bin width over the tail points.
  const double q75 = quantile(tail, 0.75), q25 = quantile(tail, 0.25);
  const double iqr = q75 - q25;
  const double width =
      iqr > 0 ? 2.0 * iqr / std::cbrt(double(tail.size()))
              : (tail.back() - tail.front()) / 20.0;
  spec.fallback_used = true;
  spec.kappa = quantile(v, cfg.fallback_quantile);
  if (!(width > 0)) return spec;  // flat tail: fall back

  const double lo = tail.front();
  const std::size_t n_bins = std::min<std::size_t>(
      10000, std::size_t((tail.back() - lo) / width) + 1);
  std::vector<double> counts(n_bins, 0.0);
  for (double s : tail) {
    std::size_t b = std::size_t((s - lo) / width);
    if (b >= n_bins) b = n_bins - 1;
    counts[b] += 1.0;
  }

  std::vector<double> xs, ys;  // bin centers / log(count + 1), count > 0
  for (std::size_t b = 0; b < n_bins; ++b)
    if (counts[b] > 0) {
      xs.push_back(lo + (double(b) + 0.5) * width);
      ys.push_back(std::log(counts[b] + 1.0));
    }
  if (xs.size() < 4) return spec;

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = double(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i]; sy += ys[i]; sxx += xs[i] * xs[i]; sxy += xs[i] * ys[i];
  }
  const double denom = m * sxx - sx * sx;
  if (denom == 0) return spec;
  spec.slope = (m * sxy - sx * sy) / denom;
  spec.intercept = (sy - spec.slope * sx) / m;

  double rss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (spec.intercept + spec.slope * xs[i]);
    rss += e * e;
  }
  const double rmse = std::sqrt(rss / m);
  if (!(rmse > 0)) return spec;

  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (spec.intercept + spec.slope * xs[i]);
    if (e > cfg.rmse_break * rmse) {
      // Require some mass at or beyond the break, not a lone edge bin.
      double beyond = 0;
      for (std::size_t b = std::size_t((xs[i] - lo) / width); b < n_bins; ++b)
        beyond += counts[b];
      if (beyond >= cfg.min_break_exceedances) {
        spec.kappa = xs[i] - 0.5 * width;
        spec.fallback_used = false;
        break;
      }
    }
  }
  return spec;
}

/// Pareto fit to the tail above the z_m quantile; kappa is the first tail
/// point whose empirical survival drops below survival_break times the
/// fitted survival.
inline ThresholdSpec threshold_pareto_logtail(std::span<const double> scores,
                                              const ThresholdConfig& cfg = {}) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (double s : scores)
    if (std::isfinite(s) && s > 0.0) v.push_back(s);
  if (v.size() < 200)
    throw DataError("pareto log-tail threshold needs >= 200 positive scores");
  std::sort(v.begin(), v.end());

  ThresholdSpec spec;
  spec.method = ThresholdMethod::ParetoLogTail;
  spec.kappa = quantile(v, cfg.fallback_quantile);
  spec.fallback_used = true;

  const double z_m = quantile(v, cfg.pareto_zm_quantile);
  if (!(z_m > 0)) return spec;
  std::vector<double> tail;
  for (double s : v)
    if (s >= z_m) tail.push_back(s);
  const std::size_t m = tail.size();
  if (m < static_cast<std::size_t>(cfg.min_tail_points))
    throw DataError("pareto log-tail threshold: fewer than min tail points");

  double log_sum = 0;
  for (double s : tail) log_sum += std::log(s / z_m);
  if (!(log_sum > 0)) return spec;
  const double rho = double(m) / log_sum;
  spec.z_m = z_m;
  spec.pareto_rho = rho;

  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t exceed = m - 1 - j;  // strictly above tail[j]
    if (exceed < static_cast<std::size_t>(cfg.min_break_exceedances)) break;
    const double empirical = double(exceed) / double(m);
    const double fitted = std::pow(z_m / tail[j], rho);
    if (empirical < cfg.survival_break * fitted) {
      spec.kappa = tail[j];
      spec.fallback_used = false;
      break;
    }
  }
  return spec;
}

inline ThresholdSpec compute_threshold(std::span<const double> scores,
                                       ThresholdMethod method, double k,
                                       const ThresholdConfig& cfg = {}) {
  switch (method) {
    case ThresholdMethod::Quantile: return threshold_quantile(scores, k);
    case ThresholdMethod::LinearLogTail: return threshold_linear_logtail(scores, cfg);
    case ThresholdMethod::ParetoLogTail: return threshold_pareto_logtail(scores, cfg);
  }
  throw DataError("unknown threshold method");
}

// ---------------------------------------------------------------------------
// Flagging and raw/differenced merge.
// ---------------------------------------------------------------------------

enum class Typology { Unclassified, Ao, Lso };

inline const char* to_string(Typology t) {
  switch (t) {
    case Typology::Ao: return "ao";
    case Typology::Lso: return "lso";
    case Typology::Unclassified: return "unclassified";
  }
  return "unclassified";
}

struct OutlierEvent {
  Eigen::Index series = 0;
  Eigen::Index time = 0;  // 0-based raw-panel index
  double score = 0.0;
  std::string level;  // raw | diff | both
  double kappa = 0.0;
  std::string method;
  Typology typology = Typology::Unclassified;
  int sign = 0;            // +1 / -1 / 0 unknown
  double delta_hat = 0.0;  // dummy-coefficient magnitude estimate
};

struct OutlierReport {
  std::vector<OutlierEvent> events;
};

/// Cells with score > kappa. For differenced scores, cell t is mapped to raw
/// time t+1 (the day the change lands on).
inline std::vector<OutlierEvent> flag_cells(const ScoreMatrix& scores,
                                            const ThresholdSpec& threshold,
                                            const std::string& method) {
  std::vector<OutlierEvent> flags;
  const Eigen::Index offset = scores.level == ScoreLevel::Differenced ? 1 : 0;
  for (Eigen::Index i = 0; i < scores.scores.cols(); ++i)
    for (Eigen::Index t = 0; t < scores.scores.rows(); ++t)
      if (scores.scores(t, i) > threshold.kappa) {
        OutlierEvent e;
        e.series = i;
        e.time = t + offset;
        e.score = scores.scores(t, i);
        e.level = to_string(scores.level);
        e.kappa = threshold.kappa;
        e.method = method;
        flags.push_back(e);
      }
  return flags;
}

/// Union of the raw-level and differenced-level flags; a raw flag at t and a
/// differenced flag mapping to t or t +/- 1 on the same series collapse into
/// one event with level "both".
inline OutlierReport flag_and_merge(const ScoreMatrix& raw,
                                    const ThresholdSpec& raw_threshold,
                                    const ScoreMatrix& diff,
                                    const ThresholdSpec& diff_threshold,
                                    const std::string& method) {
  OutlierReport report;
  auto raw_flags = flag_cells(raw, raw_threshold, method);
  auto diff_flags = flag_cells(diff, diff_threshold, method);

  std::map<std::pair<Eigen::Index, Eigen::Index>, std::size_t> by_cell;
  for (auto& e : raw_flags) {
    by_cell[{e.series, e.time}] = report.events.size();
    report.events.push_back(e);
  }
  for (auto& e : diff_flags) {
    bool merged = false;
    for (Eigen::Index dt = -1; dt <= 1 && !merged; ++dt) {
      auto it = by_cell.find({e.series, e.time + dt});
      if (it != by_cell.end()) {
        auto& host = report.events[it->second];
        if (host.level == "raw") host.level = "both";
        host.score = std::max(host.score, e.score);
        merged = true;
      }
    }
    if (!merged) report.events.push_back(e);
  }
  return report;
}

inline void save_report(const OutlierReport& report, const Panel& panel,
                        const std::string& path, bool typology_columns = false) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << "series_id,date,score,level,kappa,method";
  if (typology_columns) out << ",typology,sign,delta_hat";
  out << '\n';
  char buf[32];
  for (const auto& e : report.events) {
    std::snprintf(buf, sizeof(buf), "%.6g", e.score);
    out << panel.series_ids[static_cast<std::size_t>(e.series)] << ','
        << format_date(panel.dates[static_cast<std::size_t>(e.time)]) << ','
        << buf << ',' << e.level << ',';
    std::snprintf(buf, sizeof(buf), "%.6g", e.kappa);
    out << buf << ',' << e.method;
    if (typology_columns) {
      out << ',' << to_string(e.typology) << ','
          << (e.sign > 0 ? "+" : e.sign < 0 ? "-" : "unknown") << ',';
      std::snprintf(buf, sizeof(buf), "%.6g", e.delta_hat);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace panomaly
