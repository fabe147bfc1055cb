#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/rng.hpp"

namespace panomaly {

/// Deterministic trend-plus-cycle regression: polynomial trend of order v
/// and c harmonic pairs at the given frequencies (radians/day).
struct TrendCycleSpec {
  int trend_order = 2;
  std::vector<double> frequencies = {2.0 * std::numbers::pi / 7.0,
                                     2.0 * std::numbers::pi / 30.0};

  Eigen::Index width() const {
    return 1 + trend_order + 2 * static_cast<Eigen::Index>(frequencies.size());
  }

  void validate() const {
    if (trend_order < 0) throw DataError("trend order must be >= 0");
    for (double f : frequencies)
      if (!(f > 0.0 && f <= std::numbers::pi + 1e-12))
        throw DataError("harmonic frequency outside (0, pi]");
  }
};

/// Rows are t = 1..n: [1, t, ..., t^v, cos(l1 t), sin(l1 t), ...].
inline Matrix build_design(Eigen::Index n, const TrendCycleSpec& spec) {
  spec.validate();
  const Eigen::Index p = spec.width();
  if (n < p)
    throw DataError("design needs n >= " + std::to_string(p) + ", got n = " +
                    std::to_string(n));
  Matrix X(n, p);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double tt = static_cast<double>(t + 1);
    double pow_t = 1.0;
    for (int j = 0; j <= spec.trend_order; ++j) {
      X(t, j) = pow_t;
      pow_t *= tt;
    }
    Eigen::Index col = 1 + spec.trend_order;
    for (double lambda : spec.frequencies) {
      X(t, col++) = std::cos(lambda * tt);
      X(t, col++) = std::sin(lambda * tt);
    }
  }
  return X;
}

struct RobustFit {
  Vector beta;        // length = design width
  Vector residuals;   // y - X beta, full length
  Eigen::Index h = 0; // trim count
  double objective = 0.0;  // sum of the h smallest squared residuals
  int subsets_used = 0;
  bool ok = true;
  std::string error;
};

struct LteOptions {
  int n_subsets = 500;
  std::uint64_t seed = 0;
  int c_steps = 1;  // concentration refits per elemental start
};

inline Eigen::Index default_trim_count(Eigen::Index n) {
  return static_cast<Eigen::Index>(std::floor(0.75 * static_cast<double>(n)));
}

namespace detail {

/// Indices of the h smallest squared residuals, ties broken by index.
inline void select_h_smallest(const Vector& r, Eigen::Index h,
                              std::vector<Eigen::Index>& idx) {
  idx.resize(static_cast<std::size_t>(r.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::nth_element(idx.begin(), idx.begin() + (h - 1), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     const double ra = r[a] * r[a], rb = r[b] * r[b];
                     return ra < rb || (ra == rb && a < b);
                   });
}

}  // namespace detail

/// Least trimmed squares via random elemental subsets (size = design width),
/// each followed by c_steps concentration refits on the h best-fitting rows.
/// Deterministic given opts.seed; trial j draws from its own substream so the
/// best-over-prefix objective is non-increasing in n_subsets.
inline RobustFit lte_fit(const Vector& y, const Matrix& X, Eigen::Index h,
                         const LteOptions& opts = {}) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n) throw DataError("lte_fit: y and X row mismatch");
  if (h < p) throw NumericalError("lte_fit: h smaller than design width");
  if (h > n) throw DataError("lte_fit: h larger than n");
  if (opts.n_subsets < 1 || opts.c_steps < 1)
    throw DataError("lte_fit: n_subsets and c_steps must be >= 1");

  // Work in an orthonormalized design: unit-scale columns, thin QR. Keeps
  // the per-subset solves well conditioned with raw polynomial columns.
  Vector col_scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double norm = X.col(j).norm();
    col_scale[j] = norm > 0.0 ? norm : 1.0;
  }
  Matrix Xs = X * col_scale.cwiseInverse().asDiagonal();
  Eigen::HouseholderQR<Matrix> qr(Xs);
  Matrix Q = qr.householderQ() * Matrix::Identity(n, p);
  Matrix R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();

  Eigen::ColPivHouseholderQR<Matrix> elemental(p, p);
  Matrix Qs(p, p), Qh(n, p), A(p, p);
  Vector ys(p), beta_q(p), r(n), b(p), yh(n);
  std::vector<Eigen::Index> pick(static_cast<std::size_t>(p));
  std::vector<Eigen::Index> order;

  double best_ss = std::numeric_limits<double>::infinity();
  Vector best_beta_q = Vector::Zero(p);
  bool have_best = false;

  const long resample_cap = 10L * opts.n_subsets;
  long resamples = 0;
  int used = 0;

  for (int trial = 0; trial < opts.n_subsets; ++trial) {
    SplitMix64 rng(split_seed(opts.seed, static_cast<std::uint64_t>(trial)));
    bool solved = false;
    while (!solved) {
      for (std::size_t k = 0; k < pick.size(); ++k) {
        for (;;) {
          const Eigen::Index cand =
              static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
          bool dup = false;
          for (std::size_t m = 0; m < k; ++m)
            if (pick[m] == cand) { dup = true; break; }
          if (!dup) { pick[k] = cand; break; }
        }
      }
      for (Eigen::Index k = 0; k < p; ++k) {
        Qs.row(k) = Q.row(pick[static_cast<std::size_t>(k)]);
        ys[k] = y[pick[static_cast<std::size_t>(k)]];
      }
      elemental.compute(Qs);
      if (elemental.rank() == p) {
        beta_q = elemental.solve(ys);
        solved = true;
      } else if (++resamples > resample_cap) {
        throw NumericalError("lte_fit: singular elemental subsets exhausted resample budget");
      }
    }

    r.noalias() = y - Q * beta_q;
    for (int step = 0; step < opts.c_steps; ++step) {
      detail::select_h_smallest(r, h, order);
      for (Eigen::Index k = 0; k < h; ++k) {
        const Eigen::Index row = order[static_cast<std::size_t>(k)];
        Qh.row(k) = Q.row(row);
        yh[k] = y[row];
      }
      A.noalias() = Qh.topRows(h).transpose() * Qh.topRows(h);
      b.noalias() = Qh.topRows(h).transpose() * yh.head(h);
      Eigen::LLT<Matrix> llt(A);
      if (llt.info() != Eigen::Success) break;  // degenerate h-subset, keep last
      beta_q = llt.solve(b);
      r.noalias() = y - Q * beta_q;
    }

    detail::select_h_smallest(r, h, order);
    double ss = 0.0;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double v = r[order[static_cast<std::size_t>(k)]];
      ss += v * v;
    }
    ++used;
    if (ss < best_ss) {
      best_ss = ss;
      best_beta_q = beta_q;
      have_best = true;
    }
  }

  if (!have_best) throw NumericalError("lte_fit: no usable elemental subset");

  RobustFit fit;
  fit.beta = col_scale.cwiseInverse().asDiagonal() *
             R.triangularView<Eigen::Upper>().solve(best_beta_q);
  fit.residuals = y - X * fit.beta;
  detail::select_h_smallest(fit.residuals, h, order);
  fit.objective = 0.0;
  for (Eigen::Index k = 0; k < h; ++k) {
    const double v = fit.residuals[order[static_cast<std::size_t>(k)]];
    fit.objective += v * v;
  }
  fit.h = h;
  fit.subsets_used = used;
  return fit;
}

struct PanelFitOptions {
  double h_fraction = 0.75;
  int n_subsets = 500;
  std::uint64_t seed = 0;
  int c_steps = 1;
  int threads = 0;
};

struct PanelFitResult {
  std::vector<RobustFit> fits;
  Panel residuals;
};

/// Independent per-series trimmed fits against a shared design. Failures are
/// recorded on the affected RobustFit (NaN residual column) and never abort
/// the batch. Per-series seeds derive from (seed, series index).
inline PanelFitResult fit_panel(const Panel& p, const TrendCycleSpec& spec,
                                const PanelFitOptions& opts = {}) {
  const Eigen::Index n = p.n_obs();
  const Eigen::Index d = p.n_series();
  const Matrix X = build_design(n, spec);
  const Eigen::Index h = static_cast<Eigen::Index>(
      std::floor(opts.h_fraction * static_cast<double>(n)));

  PanelFitResult out;
  out.fits.resize(static_cast<std::size_t>(d));
  out.residuals.values.resize(n, d);
  out.residuals.series_ids = p.series_ids;
  out.residuals.dates = p.dates;
  out.residuals.layout = PanelLayout::Residual;

  parallel_for(static_cast<std::size_t>(d), [&](std::size_t i) {
    LteOptions lte;
    lte.n_subsets = opts.n_subsets;
    lte.c_steps = opts.c_steps;
    lte.seed = split_seed(opts.seed, static_cast<std::uint64_t>(i));
    auto& fit = out.fits[i];
    try {
      fit = lte_fit(p.values.col(static_cast<Eigen::Index>(i)), X, h, lte);
      out.residuals.values.col(static_cast<Eigen::Index>(i)) = fit.residuals;
    } catch (const std::exception& e) {
      fit.ok = false;
      fit.error = e.what();
      fit.beta = Vector::Zero(X.cols());
      fit.h = h;
      out.residuals.values.col(static_cast<Eigen::Index>(i))
          .setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }, opts.threads);
  return out;
}

}  // namespace panomaly
