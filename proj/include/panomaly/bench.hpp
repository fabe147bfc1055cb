#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/dgp.hpp"
#include "panomaly/forecast.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/scatter.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Monte Carlo harness: simulate, contaminate, detect with the raw-data and
// residual-based method families, and count detections against the injected
// ground truth.
// ---------------------------------------------------------------------------

enum class BenchMethod {
  OgkRaw, MrcdRaw, ComRaw, FeauRaw,   // applied to the (differenced) raw data
  OgkReg, MrcdReg, ComReg,            // applied to the trimmed-fit residuals
  RobAr1, RobHar                      // forecasting errors on the residuals
};

inline const char* to_string(BenchMethod m) {
  switch (m) {
    case BenchMethod::OgkRaw: return "ogk";
    case BenchMethod::MrcdRaw: return "mrcd";
    case BenchMethod::ComRaw: return "com";
    case BenchMethod::FeauRaw: return "feau";
    case BenchMethod::OgkReg: return "ogkreg";
    case BenchMethod::MrcdReg: return "mrcdreg";
    case BenchMethod::ComReg: return "comreg";
    case BenchMethod::RobAr1: return "robar1";
    case BenchMethod::RobHar: return "robhar";
  }
  return "?";
}

inline bool is_raw_method(BenchMethod m) {
  return m == BenchMethod::OgkRaw || m == BenchMethod::MrcdRaw ||
         m == BenchMethod::ComRaw || m == BenchMethod::FeauRaw;
}

inline bool is_forecast_method(BenchMethod m) {
  return m == BenchMethod::RobAr1 || m == BenchMethod::RobHar;
}

struct McConfig {
  Eigen::Index d = 600;
  Eigen::Index n = 400;
  int replications = 20;
  double fraction = 0.40;
  Eigen::Index tau = 80;  // 1-based injection time
  std::vector<double> deltas = {1.0, 1.5};
  OutlierKind kind = OutlierKind::Ao;
  std::vector<BenchMethod> methods = {
      BenchMethod::OgkRaw, BenchMethod::MrcdRaw, BenchMethod::ComRaw,
      BenchMethod::FeauRaw, BenchMethod::OgkReg, BenchMethod::MrcdReg,
      BenchMethod::ComReg, BenchMethod::RobAr1};
  std::vector<double> quantiles = {0.9975};
  std::uint64_t seed = 0;
  int threads = 0;
  int lte_subsets = 500;
  TrendCycleSpec design;
  int com_iterations = 2;
  DgpParams dgp;  // seed field is ignored; derived per replication
};

struct MetricsRow {
  BenchMethod method{};
  double delta = 0.0;
  double quantile = 0.0;
  double perc_out = 0.0;       // NaN when nothing was injected
  double num_false_pos = 0.0;  // mean count per replication
  int replications = 0;
  int failures = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
};

namespace detail {

inline void center_columns_median(Matrix& X) {
  std::vector<double> buf;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    buf.assign(X.col(j).data(), X.col(j).data() + X.rows());
    X.col(j).array() -= median_inplace(buf);
  }
}

inline void center_columns_mean(Matrix& X) {
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    X.col(j).array() -= X.col(j).mean();
}

inline Vector sample_variances(const Matrix& X) {
  Vector v(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    v[j] = (X.col(j).array() - mean).square().sum() /
           std::max<double>(1.0, static_cast<double>(X.rows() - 1));
    if (!(v[j] > 0.0)) v[j] = 1.0;
  }
  return v;
}

}  // namespace detail

/// Scores of every requested method on one contaminated replication.
struct ReplicationScores {
  std::map<BenchMethod, ScoreMatrix> scores;
  GroundTruth truth;
  Eigen::Index n = 0;  // raw panel length
};

inline ReplicationScores run_replication(const McConfig& cfg, double delta,
                                         int rep) {
  const std::uint64_t rep_seed = split_seed(cfg.seed, static_cast<std::uint64_t>(rep));
  DgpParams dgp = cfg.dgp;
  dgp.seed = split_seed(rep_seed, 0);
  Panel clean = simulate_dgp(dgp, cfg.d, cfg.n, cfg.threads);
  std::vector<OutlierSpec> specs{{cfg.kind, cfg.tau, delta, {}}};
  auto injected = inject_outliers(clean, specs, cfg.fraction);

  ReplicationScores out;
  out.truth = std::move(injected.truth);
  out.n = cfg.n;
  const bool lso_like = cfg.kind != OutlierKind::Ao;
  const ScoreLevel level = lso_like ? ScoreLevel::Differenced : ScoreLevel::Raw;

  bool need_raw = false, need_reg = false, need_forecast = false;
  for (BenchMethod m : cfg.methods) {
    if (is_raw_method(m)) need_raw = true;
    else if (is_forecast_method(m)) need_forecast = true;
    else need_reg = true;
  }

  Matrix raw_input;
  if (need_raw) {
    raw_input = lso_like ? first_difference(injected.panel).values
                         : injected.panel.values;
  }

  PanelFitOptions fit_opts;
  fit_opts.n_subsets = cfg.lte_subsets;
  fit_opts.threads = cfg.threads;

  Panel reg_residuals;
  if (need_reg) {
    fit_opts.seed = split_seed(rep_seed, 1);
    const Panel& target = injected.panel;
    if (lso_like) {
      Panel diffed = first_difference(target);
      reg_residuals = fit_panel(diffed, cfg.design, fit_opts).residuals;
    } else {
      reg_residuals = fit_panel(target, cfg.design, fit_opts).residuals;
    }
  }

  Panel forecast_residuals;
  if (need_forecast) {
    fit_opts.seed = split_seed(rep_seed, 2);
    Panel res = fit_panel(injected.panel, cfg.design, fit_opts).residuals;
    forecast_residuals = lso_like ? first_difference(res) : std::move(res);
  }

  for (BenchMethod m : cfg.methods) {
    switch (m) {
      case BenchMethod::OgkRaw: {
        Matrix X = raw_input;
        detail::center_columns_median(X);
        const auto est = ogk_scatter(X, cfg.threads);
        out.scores.emplace(m, cellwise_scores(X, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::MrcdRaw: {
        Matrix X = raw_input;
        detail::center_columns_median(X);
        const auto est = mrcd_scatter(X, MrcdConfig{}, cfg.threads);
        out.scores.emplace(m, cellwise_scores(X, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::ComRaw: {
        Matrix X = raw_input;
        detail::center_columns_median(X);
        const auto est = com_scatter(X, cfg.com_iterations, cfg.threads);
        out.scores.emplace(m, cellwise_scores(X, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::FeauRaw: {
        Matrix X = raw_input;
        detail::center_columns_mean(X);
        out.scores.emplace(m, cellwise_scores(X, detail::sample_variances(X), level));
        break;
      }
      case BenchMethod::OgkReg: {
        const auto est = ogk_scatter(reg_residuals.values, cfg.threads);
        out.scores.emplace(
            m, cellwise_scores(reg_residuals.values, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::MrcdReg: {
        const auto est = mrcd_scatter(reg_residuals.values, MrcdConfig{}, cfg.threads);
        out.scores.emplace(
            m, cellwise_scores(reg_residuals.values, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::ComReg: {
        const auto est = com_scatter(reg_residuals.values, cfg.com_iterations,
                                     cfg.threads);
        out.scores.emplace(
            m, cellwise_scores(reg_residuals.values, est.sigma.diagonal(), level));
        break;
      }
      case BenchMethod::RobAr1:
      case BenchMethod::RobHar: {
        const HarSpec spec = m == BenchMethod::RobAr1 ? HarSpec::ar1() : HarSpec{};
        LteOptions lte;
        lte.n_subsets = cfg.lte_subsets;
        lte.seed = split_seed(rep_seed, 3);
        const auto fit = robhar_fit_panel(forecast_residuals, spec, lte, cfg.threads);
        out.scores.emplace(m, har_scores(fit, level));
        break;
      }
    }
  }
  return out;
}

namespace detail {

struct FlagCounts {
  Eigen::Index hits = 0;
  Eigen::Index false_pos = 0;
  Eigen::Index injected = 0;
};

/// A detection is a flag at exactly (i, tau), widened to tau +/- 1 for level
/// shifts scored on differences. False positives are flags matching no
/// injected cell.
inline FlagCounts count_flags(const ScoreMatrix& scores, double kappa,
                              const GroundTruth& truth, Eigen::Index window) {
  FlagCounts out;
  std::map<Eigen::Index, std::vector<Eigen::Index>> truth_by_series;
  for (const auto& e : truth.entries) {
    if (e.magnitude != 0.0)
      truth_by_series[e.series].push_back(e.tau - 1);  // 0-based raw time
  }
  for (const auto& [s, taus] : truth_by_series)
    out.injected += static_cast<Eigen::Index>(taus.size());

  const Eigen::Index offset = scores.level == ScoreLevel::Differenced ? 1 : 0;
  std::map<std::pair<Eigen::Index, Eigen::Index>, bool> hit_map;
  for (Eigen::Index i = 0; i < scores.scores.cols(); ++i) {
    const auto it = truth_by_series.find(i);
    for (Eigen::Index t = 0; t < scores.scores.rows(); ++t) {
      if (!(scores.scores(t, i) > kappa)) continue;
      const Eigen::Index raw_t = t + offset;
      bool matched = false;
      if (it != truth_by_series.end()) {
        for (Eigen::Index tau0 : it->second) {
          if (std::abs(raw_t - tau0) <= window) {
            hit_map[{i, tau0}] = true;
            matched = true;
          }
        }
      }
      if (!matched) ++out.false_pos;
    }
  }
  out.hits = static_cast<Eigen::Index>(hit_map.size());
  return out;
}

}  // namespace detail

inline MetricsTable run_monte_carlo(const McConfig& cfg) {
  MetricsTable table;
  const Eigen::Index window = cfg.kind == OutlierKind::Ao ? 0 : 1;
  struct Acc {
    double perc_sum = 0.0;
    double fp_sum = 0.0;
    int reps = 0;
    int failures = 0;
    bool any_injected = false;
  };
  std::map<std::tuple<BenchMethod, double, double>, Acc> acc;

  for (double delta : cfg.deltas) {
    for (int rep = 0; rep < cfg.replications; ++rep) {
      ReplicationScores result;
      bool ok = true;
      try {
        result = run_replication(cfg, delta, rep);
      } catch (const std::exception&) {
        ok = false;
      }
      for (BenchMethod m : cfg.methods) {
        for (double k : cfg.quantiles) {
          auto& a = acc[{m, delta, k}];
          if (!ok) { ++a.failures; continue; }
          const auto& scores = result.scores.at(m);
          const auto threshold = threshold_quantile(
              {scores.scores.data(), static_cast<std::size_t>(scores.scores.size())}, k);
          const auto counts =
              detail::count_flags(scores, threshold.kappa, result.truth, window);
          if (counts.injected > 0) {
            a.perc_sum += static_cast<double>(counts.hits) /
                          static_cast<double>(counts.injected);
            a.any_injected = true;
          }
          a.fp_sum += static_cast<double>(counts.false_pos);
          ++a.reps;
        }
      }
    }
  }

  for (const auto& [key, a] : acc) {
    MetricsRow row;
    row.method = std::get<0>(key);
    row.delta = std::get<1>(key);
    row.quantile = std::get<2>(key);
    row.replications = a.reps;
    row.failures = a.failures;
    row.perc_out = a.any_injected && a.reps > 0
                       ? a.perc_sum / a.reps
                       : std::numeric_limits<double>::quiet_NaN();
    row.num_false_pos = a.reps > 0 ? a.fp_sum / a.reps : 0.0;
    table.rows.push_back(row);
  }
  return table;
}

inline void save_metrics(const MetricsTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics file: " + path);
  out << "method,delta,quantile,perc_out,num_false_pos,replications,failures\n";
  char buf[64];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%g,%g,%.6g,%.4f,%d,%d",
                  to_string(r.method), r.delta, r.quantile, r.perc_out,
                  r.num_false_pos, r.replications, r.failures);
    out << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// ROC: sweep the quantile threshold over (0, 1); cell-level true/false
// positive rates against the injected ground truth.
// ---------------------------------------------------------------------------

struct RocPoint {
  double k = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

inline std::vector<double> default_roc_grid() {
  std::vector<double> grid;
  for (double k = 0.02; k < 0.9; k += 0.02) grid.push_back(k);
  for (double k = 0.9; k < 0.999; k += 0.002) grid.push_back(k);
  grid.push_back(0.9995);
  return grid;
}

inline std::vector<RocPoint> roc_curve(const ScoreMatrix& scores,
                                       const GroundTruth& truth,
                                       std::vector<double> grid = {}) {
  if (grid.empty()) grid = default_roc_grid();
  const Eigen::Index offset = scores.level == ScoreLevel::Differenced ? 1 : 0;

  std::vector<std::pair<double, bool>> cells;  // (score, is injected cell)
  cells.reserve(static_cast<std::size_t>(scores.scores.size()));
  std::map<std::pair<Eigen::Index, Eigen::Index>, bool> truth_cells;
  for (const auto& e : truth.entries)
    if (e.magnitude != 0.0) truth_cells[{e.series, e.tau - 1}] = true;

  for (Eigen::Index i = 0; i < scores.scores.cols(); ++i)
    for (Eigen::Index t = 0; t < scores.scores.rows(); ++t) {
      const double v = scores.scores(t, i);
      if (!std::isfinite(v)) continue;
      cells.emplace_back(v, truth_cells.count({i, t + offset}) > 0);
    }
  std::sort(cells.begin(), cells.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> true_prefix(cells.size() + 1, 0);
  for (std::size_t j = 0; j < cells.size(); ++j)
    true_prefix[j + 1] = true_prefix[j] + (cells[j].second ? 1 : 0);
  const double n_true = static_cast<double>(true_prefix.back());
  const double n_clean = static_cast<double>(cells.size()) - n_true;

  std::vector<double> pooled;
  pooled.reserve(cells.size());
  for (const auto& c : cells) pooled.push_back(c.first);
  std::sort(pooled.begin(), pooled.end());

  std::vector<RocPoint> points;
  for (double k : grid) {
    std::vector<double> tmp = pooled;  // quantile_inplace scrambles
    const double kappa = quantile_inplace(tmp, k);
    // Cells strictly above the threshold, using the descending order.
    std::size_t flags = 0;
    {
      std::size_t lo = 0, hi = cells.size();
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (cells[mid].first > kappa) lo = mid + 1;
        else hi = mid;
      }
      flags = lo;
    }
    RocPoint pt;
    pt.k = k;
    pt.tpr = n_true > 0 ? static_cast<double>(true_prefix[flags]) / n_true : 0.0;
    pt.fpr = n_clean > 0
                 ? (static_cast<double>(flags) - static_cast<double>(true_prefix[flags])) / n_clean
                 : 0.0;
    points.push_back(pt);
  }
  std::sort(points.begin(), points.end(),
            [](const RocPoint& a, const RocPoint& b) { return a.fpr < b.fpr; });
  return points;
}

/// Trapezoid AUC with implicit (0,0) and (1,1) endpoints.
inline double roc_auc(const std::vector<RocPoint>& points) {
  double auc = 0.0;
  double px = 0.0, py = 0.0;
  for (const auto& pt : points) {
    auc += (pt.fpr - px) * 0.5 * (pt.tpr + py);
    px = pt.fpr;
    py = pt.tpr;
  }
  auc += (1.0 - px) * 0.5 * (1.0 + py);
  return auc;
}

inline void save_roc(const std::map<std::string, std::vector<RocPoint>>& curves,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write roc file: " + path);
  out << "method,k,fpr,tpr\n";
  char buf[96];
  for (const auto& [method, points] : curves)
    for (const auto& pt : points) {
      std::snprintf(buf, sizeof(buf), "%s,%.6g,%.8g,%.8g", method.c_str(), pt.k,
                    pt.fpr, pt.tpr);
      out << buf << '\n';
    }
}

}  // namespace panomaly
