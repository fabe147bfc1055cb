#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/stats.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

struct TypologyConfig {
  int window = 30;          // w0
  double multiplier = 2.0;  // dispersion multiplier on sigma_r
  bool recompute_sigma = true;  // re-estimate sigma_r from the input
  int min_side_points = 5;      // below this on either side: unclassified
};

/// Robust standardization used before classification: center by the median,
/// scale by 1.4826 * MAD (unit scale when the MAD vanishes).
inline std::vector<double> standardize_residuals(std::span<const double> r) {
  std::vector<double> z(r.begin(), r.end());
  const double med = median(r);
  double scale = kMadNormalConsistency * mad(r);
  if (!(scale > 0.0)) scale = 1.0;
  for (auto& v : z) v = (v - med) / scale;
  return z;
}

/// Window-mean rule on the standardized residuals around a flagged index:
/// a level shift moves the before/after means apart; an additive outlier
/// stands away from both. The level-shift rule is checked first.
inline Typology classify(std::span<const double> rz, Eigen::Index tau,
                         const TypologyConfig& cfg = {}) {
  const Eigen::Index n = static_cast<Eigen::Index>(rz.size());
  if (tau < 0 || tau >= n) throw DataError("classify: index out of range");
  const Eigen::Index w = cfg.window;
  const Eigen::Index b_lo = std::max<Eigen::Index>(0, tau - w);
  const Eigen::Index a_hi = std::min<Eigen::Index>(n - 1, tau + w);
  const Eigen::Index n_before = tau - b_lo;
  const Eigen::Index n_after = a_hi - tau;
  if (n_before < cfg.min_side_points || n_after < cfg.min_side_points)
    return Typology::Unclassified;

  double s_before = 0.0, s_after = 0.0;
  for (Eigen::Index t = b_lo; t < tau; ++t) s_before += rz[static_cast<std::size_t>(t)];
  for (Eigen::Index t = tau + 1; t <= a_hi; ++t) s_after += rz[static_cast<std::size_t>(t)];
  s_before /= static_cast<double>(n_before);
  s_after /= static_cast<double>(n_after);

  double sigma_r = 1.0;
  if (cfg.recompute_sigma) {
    std::vector<double> rest;
    rest.reserve(rz.size() - 1);
    for (Eigen::Index t = 0; t < n; ++t)
      if (t != tau) rest.push_back(rz[static_cast<std::size_t>(t)]);
    const double m = kMadNormalConsistency * mad(rest);
    sigma_r = m > 0.0 ? m : 1.0;
  }

  const double gate = cfg.multiplier * sigma_r;
  if (std::fabs(s_before - s_after) > gate) return Typology::Lso;
  const double v = rz[static_cast<std::size_t>(tau)];
  if (std::fabs(v - s_after) > gate && std::fabs(v - s_before) > gate)
    return Typology::Ao;
  return Typology::Unclassified;
}

struct SignEstimate {
  int sign = 0;          // +1 / -1
  double delta_hat = 0.0;
  RobustFit fit;         // refit with the dummy column appended
};

/// Re-runs the trimmed regression with a pulse (AO) or step (LSO) dummy at
/// the flagged index; the dummy coefficient carries sign and magnitude.
inline SignEstimate infer_sign(const Vector& y, const Matrix& X,
                               Eigen::Index tau, Typology kind,
                               const LteOptions& opts = {},
                               Eigen::Index h = 0) {
  if (kind != Typology::Ao && kind != Typology::Lso)
    throw DataError("infer_sign: kind must be AO or LSO");
  const Eigen::Index n = X.rows();
  if (tau < 0 || tau >= n) throw DataError("infer_sign: index out of range");
  Matrix Xd(n, X.cols() + 1);
  Xd.leftCols(X.cols()) = X;
  Xd.col(X.cols()).setZero();
  if (kind == Typology::Ao) {
    Xd(tau, X.cols()) = 1.0;
  } else {
    for (Eigen::Index t = tau + 1; t < n; ++t) Xd(t, X.cols()) = 1.0;
  }
  if (Xd.col(X.cols()).norm() == 0.0)
    throw DataError("infer_sign: dummy column is collinear at the boundary");

  if (h <= 0) h = default_trim_count(n);
  SignEstimate out;
  out.fit = lte_fit(y, Xd, h, opts);
  out.delta_hat = out.fit.beta[X.cols()];
  out.sign = out.delta_hat >= 0.0 ? 1 : -1;
  return out;
}

/// Fills typology / sign / delta_hat on every event of a report. Residuals
/// drive the classification; the raw panel drives the dummy re-regression.
inline void classify_events(OutlierReport& report, const Panel& residuals,
                            const Panel& raw, const TrendCycleSpec& design,
                            const TypologyConfig& cfg = {},
                            const LteOptions& lte = {}, int threads = 0) {
  const Matrix X = build_design(raw.n_obs(), design);
  std::vector<std::vector<double>> rz(static_cast<std::size_t>(residuals.n_series()));
  for (Eigen::Index i = 0; i < residuals.n_series(); ++i)
    rz[static_cast<std::size_t>(i)] = standardize_residuals(residuals.series(i));

  parallel_for(report.events.size(), [&](std::size_t k) {
    auto& e = report.events[k];
    e.typology = classify(rz[static_cast<std::size_t>(e.series)], e.time, cfg);
    if (e.typology == Typology::Unclassified) return;
    try {
      LteOptions o = lte;
      o.seed = split_seed(lte.seed, static_cast<std::uint64_t>(k));
      const auto est = infer_sign(raw.values.col(e.series), X, e.time,
                                  e.typology, o);
      e.sign = est.sign;
      e.delta_hat = est.delta_hat;
    } catch (const std::exception&) {
      e.sign = 0;  // boundary dummies stay unknown
    }
  }, threads);
}

}  // namespace panomaly
