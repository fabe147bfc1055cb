#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/stats.hpp"

namespace panomaly {

enum class ScatterMethod { Ogk, Mrcd, Com, Feau };

inline const char* to_string(ScatterMethod m) {
  switch (m) {
    case ScatterMethod::Ogk: return "ogk";
    case ScatterMethod::Mrcd: return "mrcd";
    case ScatterMethod::Com: return "com";
    case ScatterMethod::Feau: return "feau";
  }
  return "ogk";
}

struct ScatterEstimate {
  Matrix sigma;   // d x d, symmetric
  Vector scales;  // per-variable robust scales (tau or MAD, by method)
  ScatterMethod method = ScatterMethod::Ogk;

  // Diagnostics; fields are populated by the method that defines them.
  double rho = 0.0;                             // MRCD blend weight
  int iterations = 0;                           // COM refinement passes
  std::vector<Eigen::Index> h_subset;           // MRCD winning subset rows
  std::vector<double> candidate_log_dets;       // MRCD, one per initial estimate
  int winning_candidate = -1;                   // MRCD
  std::vector<Eigen::Index> degenerate_series;  // zero-scale columns
};

namespace detail {

/// Symmetric eigendecomposition with a deterministic convention: eigenvalues
/// descending, each eigenvector's largest-magnitude entry positive.
inline void eigen_descending(const Matrix& S, Matrix& vectors, Vector& values) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success)
    throw NumericalError("symmetric eigendecomposition failed");
  const Eigen::Index d = S.rows();
  vectors.resize(d, d);
  values.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    values[j] = es.eigenvalues()[d - 1 - j];
    vectors.col(j) = es.eigenvectors().col(d - 1 - j);
    Eigen::Index arg = 0;
    vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, j) < 0) vectors.col(j) = -vectors.col(j);
  }
}

inline void symmetrize(Matrix& S) {
  S = 0.5 * (S + S.transpose()).eval();
}

inline std::span<const double> col_span(const Matrix& M, Eigen::Index j) {
  return {M.col(j).data(), static_cast<std::size_t>(M.rows())};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OGK: pairwise tau-scale "correlations", orthogonalized through one
// eigendecomposition, with robust variances along the principal directions.
// ---------------------------------------------------------------------------

inline ScatterEstimate ogk_scatter(const Matrix& R, int threads = 0) {
  const Eigen::Index n = R.rows();
  const Eigen::Index d = R.cols();
  if (n < 2 || d < 1) throw DataError("ogk_scatter needs n >= 2 and d >= 1");

  ScatterEstimate est;
  est.method = ScatterMethod::Ogk;
  est.scales.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto tau = tau_scale_full(detail::col_span(R, j));
    if (tau.degenerate) {
      est.degenerate_series.push_back(j);
      est.scales[j] = 1.0;
    } else {
      est.scales[j] = tau.scale;
    }
  }

  Matrix Z = R * est.scales.cwiseInverse().asDiagonal();
  for (Eigen::Index j : est.degenerate_series) Z.col(j).setZero();

  Matrix U(d, d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t jj) {
    const Eigen::Index j = static_cast<Eigen::Index>(jj);
    std::vector<double> sum(static_cast<std::size_t>(n));
    std::vector<double> dif(static_cast<std::size_t>(n));
    U(j, j) = 1.0;
    for (Eigen::Index k = j + 1; k < d; ++k) {
      for (Eigen::Index t = 0; t < n; ++t) {
        sum[static_cast<std::size_t>(t)] = Z(t, j) + Z(t, k);
        dif[static_cast<std::size_t>(t)] = Z(t, j) - Z(t, k);
      }
      const double sp = tau_scale(sum);
      const double sm = tau_scale(dif);
      const double u = 0.25 * (sp * sp - sm * sm);
      U(j, k) = u;
      U(k, j) = u;
    }
  }, threads);

  Matrix E;
  Vector lambda_unused;
  detail::eigen_descending(U, E, lambda_unused);

  const Matrix V = Z * E;
  Vector lambda(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double s = tau_scale(detail::col_span(V, j));
    lambda[j] = s * s;
  }
  Matrix sigma_z = E * lambda.asDiagonal() * E.transpose();
  est.sigma = est.scales.asDiagonal() * sigma_z * est.scales.asDiagonal();
  detail::symmetrize(est.sigma);
  return est;
}

// ---------------------------------------------------------------------------
// COM: comedian matrix rescaled to a correlation-like form, made PSD through
// eigendecomposition, with MAD^2 variances along the transformed axes.
// Refined by feeding the estimate back in place of the comedian form.
// ---------------------------------------------------------------------------

inline ScatterEstimate com_scatter(const Matrix& R, int max_iter = 2,
                                   int threads = 0) {
  const Eigen::Index n = R.rows();
  const Eigen::Index d = R.cols();
  if (n < 1 || d < 1) throw DataError("com_scatter needs data");
  if (max_iter < 1) throw DataError("com_scatter: max_iter must be >= 1");

  ScatterEstimate est;
  est.method = ScatterMethod::Com;
  est.scales.resize(d);

  Matrix centered(n, d);
  {
    std::vector<double> buf;
    for (Eigen::Index j = 0; j < d; ++j) {
      buf.assign(R.col(j).data(), R.col(j).data() + n);
      const double med = median_inplace(buf);
      centered.col(j) = R.col(j).array() - med;
      for (Eigen::Index t = 0; t < n; ++t)
        buf[static_cast<std::size_t>(t)] = std::fabs(centered(t, j));
      const double m = median_inplace(buf);
      if (m <= 0.0) {
        est.degenerate_series.push_back(j);
        est.scales[j] = 1.0;
        centered.col(j).setZero();
      } else {
        est.scales[j] = m;
      }
    }
  }

  Matrix com(d, d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t jj) {
    const Eigen::Index j = static_cast<Eigen::Index>(jj);
    std::vector<double> prod(static_cast<std::size_t>(n));
    for (Eigen::Index k = j; k < d; ++k) {
      for (Eigen::Index t = 0; t < n; ++t)
        prod[static_cast<std::size_t>(t)] = centered(t, j) * centered(t, k);
      const double c = median_inplace(prod);
      com(j, k) = c;
      com(k, j) = c;
    }
  }, threads);

  const Vector d_inv = est.scales.cwiseInverse();
  Matrix delta = d_inv.asDiagonal() * com * d_inv.asDiagonal();
  for (Eigen::Index j : est.degenerate_series) delta(j, j) = 1.0;

  Matrix E;
  Vector evals;
  Matrix Z(n, d);
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (int iter = 0; iter < max_iter; ++iter) {
    detail::eigen_descending(delta, E, evals);
    // Q = diag(scales) * E, and Q^{-1} = E' diag(1/scales), so the
    // transformed data is Z = R_centered diag(1/scales) E.
    Z.noalias() = centered * d_inv.asDiagonal() * E;
    Vector gamma(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index t = 0; t < n; ++t)
        buf[static_cast<std::size_t>(t)] = Z(t, j);
      const double m = mad(buf);
      gamma[j] = m * m;
    }
    const Matrix Q = est.scales.asDiagonal() * E;
    est.sigma = Q * gamma.asDiagonal() * Q.transpose();
    detail::symmetrize(est.sigma);
    est.iterations = iter + 1;
    if (iter + 1 < max_iter) delta = est.sigma;
  }
  for (Eigen::Index j : est.degenerate_series) {
    est.sigma.row(j).setZero();
    est.sigma.col(j).setZero();
    est.sigma(j, j) = 1.0;
  }
  return est;
}

// ---------------------------------------------------------------------------
// MRCD: deterministic initial estimates, h-subset concentration steps, and a
// convex blend with the identity target chosen by lowest regularized
// determinant. Well-defined for d > n.
// ---------------------------------------------------------------------------

struct MrcdConfig {
  double h_fraction = 0.75;
  std::vector<double> rho_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                  0.6, 0.7, 0.8, 0.9, 1.0};
  double condition_cap = 1e3;
  double min_eig_fraction = 1e-6;  // floor: min eig >= fraction * trace / d
  bool standard_alpha = false;     // h/n convention instead of (n-h)/n
  int max_c_steps = 50;
};

/// Consistency factor for the h-subset covariance. The default follows the
/// alpha = (n-h)/n convention; standard_alpha switches to the usual h/n one.
inline double mrcd_consistency_factor(Eigen::Index n, Eigen::Index h,
                                      Eigen::Index d, bool standard_alpha) {
  namespace bm = boost::math;
  const bm::chi_squared chi_d(static_cast<double>(d));
  const bm::chi_squared chi_d2(static_cast<double>(d) + 2.0);
  if (standard_alpha) {
    const double alpha = static_cast<double>(h) / static_cast<double>(n);
    const double q = bm::quantile(chi_d, alpha);
    return alpha / bm::cdf(chi_d2, q);
  }
  const double alpha =
      static_cast<double>(n - h) / static_cast<double>(n);
  const double q = bm::quantile(chi_d, alpha);
  return bm::cdf(chi_d2, q) / alpha;
}

namespace detail {

struct MrcdCandidate {
  std::vector<Eigen::Index> subset;
  Matrix cov;          // S_W(H), uncentered, (h-1)^-1 W_H' W_H
  Vector eigenvalues;  // of cov, descending
  Matrix eigenvectors;
  double rho_min = 0.0;     // smallest feasible grid value
  double log_det = 0.0;     // of rho T + (1-rho) c S_W(H) at the common rho
  bool ok = true;
};

/// Smallest grid rho meeting the conditioning caps for eigenvalues of
/// rho + (1-rho) * c * s_i (identity target commutes with everything).
inline double smallest_feasible_rho(const Vector& s, double c,
                                    const MrcdConfig& cfg) {
  for (double rho : cfg.rho_grid) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0, tr = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double v = rho + (1.0 - rho) * c * std::max(s[i], 0.0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      tr += v;
    }
    const double d = static_cast<double>(s.size());
    if (lo > 0.0 && hi / lo <= cfg.condition_cap &&
        lo >= cfg.min_eig_fraction * tr / d)
      return rho;
  }
  return cfg.rho_grid.back();
}

inline double blended_log_det(const Vector& s, double c, double rho) {
  double ld = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    ld += std::log(rho + (1.0 - rho) * c * std::max(s[i], 0.0));
  return ld;
}

/// h rows with smallest Mahalanobis distance under the blended matrix,
/// ties broken by row index.
inline std::vector<Eigen::Index> lowest_md_subset(const Matrix& W,
                                                  const MrcdCandidate& cand,
                                                  double c, double rho,
                                                  Eigen::Index h) {
  const Matrix proj = W * cand.eigenvectors;  // n x d
  Vector md(W.rows());
  for (Eigen::Index t = 0; t < W.rows(); ++t) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < proj.cols(); ++j) {
      const double ev = rho + (1.0 - rho) * c * std::max(cand.eigenvalues[j], 0.0);
      acc += proj(t, j) * proj(t, j) / ev;
    }
    md[t] = acc;
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(W.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::nth_element(idx.begin(), idx.begin() + (h - 1), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) {
                     return md[a] < md[b] || (md[a] == md[b] && a < b);
                   });
  idx.resize(static_cast<std::size_t>(h));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Matrix subset_cov(const Matrix& W, const std::vector<Eigen::Index>& rows) {
  Matrix Wh(static_cast<Eigen::Index>(rows.size()), W.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) Wh.row(static_cast<Eigen::Index>(k)) = W.row(rows[k]);
  Matrix S = Wh.transpose() * Wh / static_cast<double>(rows.size() - 1);
  symmetrize(S);
  return S;
}

inline Matrix column_rank_matrix(const Matrix& W) {
  const Eigen::Index n = W.rows(), d = W.cols();
  Matrix ranks(n, d);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < d; ++j) {
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return W(a, j) < W(b, j) || (W(a, j) == W(b, j) && a < b);
    });
    std::size_t t = 0;
    while (t < idx.size()) {
      std::size_t e = t;
      while (e + 1 < idx.size() && W(idx[e + 1], j) == W(idx[t], j)) ++e;
      const double avg = 0.5 * static_cast<double>(t + e) + 1.0;
      for (std::size_t k = t; k <= e; ++k) ranks(idx[k], j) = avg;
      t = e + 1;
    }
  }
  return ranks;
}

inline Matrix sample_correlation(const Matrix& X) {
  const Eigen::Index n = X.rows();
  Matrix C = X.rowwise() - X.colwise().mean();
  Matrix S = C.transpose() * C / static_cast<double>(n - 1);
  Vector sd = S.diagonal().cwiseMax(1e-300).cwiseSqrt();
  Matrix corr = sd.cwiseInverse().asDiagonal() * S * sd.cwiseInverse().asDiagonal();
  symmetrize(corr);
  return corr;
}

}  // namespace detail

inline ScatterEstimate mrcd_scatter(const Matrix& R,
                                    const MrcdConfig& cfg = {},
                                    int threads = 0) {
  const Eigen::Index n = R.rows();
  const Eigen::Index d = R.cols();
  if (n < 4 || d < 1) throw DataError("mrcd_scatter needs n >= 4");
  const Eigen::Index h = static_cast<Eigen::Index>(
      std::floor(cfg.h_fraction * static_cast<double>(n)));
  if (h < 2 || h > n) throw DataError("mrcd_scatter: bad h fraction");

  ScatterEstimate est;
  est.method = ScatterMethod::Mrcd;
  est.scales.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto tau = tau_scale_full(detail::col_span(R, j));
    if (tau.degenerate) {
      est.degenerate_series.push_back(j);
      est.scales[j] = 1.0;
    } else {
      est.scales[j] = tau.scale;
    }
  }

  // Identity target: W equals the tau-standardized data.
  Matrix W = R * est.scales.cwiseInverse().asDiagonal();
  for (Eigen::Index j : est.degenerate_series) W.col(j).setZero();

  const double c_alpha = mrcd_consistency_factor(n, h, d, cfg.standard_alpha);

  // Median-centered copy feeds the rank/sign style initial estimates.
  Matrix Wc = W;
  {
    std::vector<double> buf(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < d; ++j) {
      buf.assign(W.col(j).data(), W.col(j).data() + n);
      Wc.col(j).array() -= median_inplace(buf);
    }
  }

  std::vector<Matrix> initials;
  initials.reserve(6);
  // 1. hyperbolic tangent transform
  initials.push_back(detail::sample_correlation(Wc.array().tanh().matrix()));
  // 2. Spearman rank correlation
  initials.push_back(detail::sample_correlation(detail::column_rank_matrix(W)));
  // 3. normal scores of the ranks
  {
    Matrix ranks = detail::column_rank_matrix(W);
    const boost::math::normal norm01;
    Matrix scores(n, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index t = 0; t < n; ++t)
        scores(t, j) = boost::math::quantile(
            norm01, (ranks(t, j) - 1.0 / 3.0) / (static_cast<double>(n) + 1.0 / 3.0));
    initials.push_back(detail::sample_correlation(scores));
  }
  // 4. spatial sign covariance
  {
    Matrix S = Matrix::Zero(d, d);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double norm = Wc.row(t).norm();
      if (norm > 0) S.selfadjointView<Eigen::Lower>().rankUpdate(
          Wc.row(t).transpose() / norm);
    }
    S = Matrix(S.selfadjointView<Eigen::Lower>()) / static_cast<double>(n);
    initials.push_back(S);
  }
  // 5. covariance of the half sample with smallest norm (BACON style)
  {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Vector norms(n);
    for (Eigen::Index t = 0; t < n; ++t) norms[t] = Wc.row(t).norm();
    const Eigen::Index half = (n + 1) / 2;
    std::nth_element(idx.begin(), idx.begin() + (half - 1), idx.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                       return norms[a] < norms[b] || (norms[a] == norms[b] && a < b);
                     });
    idx.resize(static_cast<std::size_t>(half));
    initials.push_back(detail::subset_cov(Wc, idx));
  }
  // 6. raw OGK
  initials.push_back(ogk_scatter(W, threads).sigma);

  std::vector<detail::MrcdCandidate> candidates;
  for (auto& S0 : initials) {
    detail::MrcdCandidate cand;
    // Scale to trace d so the identity blend is comparable across starts.
    const double tr = S0.trace();
    Matrix S = tr > 0 ? Matrix(S0 * (static_cast<double>(d) / tr))
                      : Matrix::Identity(d, d);
    try {
      detail::eigen_descending(S, cand.eigenvectors, cand.eigenvalues);
    } catch (const NumericalError&) {
      cand.ok = false;
      candidates.push_back(std::move(cand));
      continue;
    }
    cand.cov = std::move(S);
    const double rho0 = detail::smallest_feasible_rho(cand.eigenvalues, 1.0, cfg);
    cand.subset = detail::lowest_md_subset(W, cand, 1.0, std::max(rho0, 1e-3), h);

    for (int step = 0; step < cfg.max_c_steps; ++step) {
      cand.cov = detail::subset_cov(W, cand.subset);
      detail::eigen_descending(cand.cov, cand.eigenvectors, cand.eigenvalues);
      cand.rho_min = detail::smallest_feasible_rho(cand.eigenvalues, c_alpha, cfg);
      auto next = detail::lowest_md_subset(W, cand, c_alpha,
                                           std::max(cand.rho_min, 1e-6), h);
      if (next == cand.subset) break;
      cand.subset = std::move(next);
    }
    candidates.push_back(std::move(cand));
  }

  // Common blend weight: the largest minimal-feasible rho across candidates,
  // so every candidate's regularized determinant is comparable and finite.
  double rho = 0.0;
  bool any_ok = false;
  for (const auto& c : candidates)
    if (c.ok) { rho = std::max(rho, c.rho_min); any_ok = true; }
  if (!any_ok) throw NumericalError("mrcd_scatter: all initial estimates failed");

  int winner = -1;
  double best = std::numeric_limits<double>::infinity();
  est.candidate_log_dets.assign(candidates.size(),
                                std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    auto& c = candidates[j];
    if (!c.ok) continue;
    c.log_det = detail::blended_log_det(c.eigenvalues, c_alpha, rho);
    est.candidate_log_dets[j] = c.log_det;
    if (c.log_det < best) {
      best = c.log_det;
      winner = static_cast<int>(j);
    }
  }
  const auto& win = candidates[static_cast<std::size_t>(winner)];

  Matrix blended = Matrix::Identity(d, d) * rho + (1.0 - rho) * c_alpha * win.cov;
  est.sigma = est.scales.asDiagonal() * blended * est.scales.asDiagonal();
  detail::symmetrize(est.sigma);
  est.rho = rho;
  est.winning_candidate = winner;
  est.h_subset = win.subset;
  return est;
}

// ---------------------------------------------------------------------------
// FEAU: non-robust feature-space estimator applied to raw data. Eight
// summary statistics per series, standardized per feature; the per-series
// Mahalanobis distance is computed in feature space.
// ---------------------------------------------------------------------------

struct FeauResult {
  Matrix features;     // d x p, standardized (constant features zeroed)
  Vector mean;         // length p, of the standardized features
  Matrix covariance;   // p x p
  Vector md;           // per-series Mahalanobis distance
  std::vector<std::string> feature_names;
  std::vector<int> dropped_features;  // constant across series
};

inline FeauResult feau_estimate(const Matrix& Y) {
  const Eigen::Index n = Y.rows();
  const Eigen::Index d = Y.cols();
  if (n < 5) throw DataError("feau_estimate needs n >= 5");

  FeauResult out;
  out.feature_names = {"mean", "sd", "skewness", "kurtosis",
                       "median", "iqr", "min", "max"};
  const Eigen::Index p = static_cast<Eigen::Index>(out.feature_names.size());
  out.features.resize(d, p);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto col = detail::col_span(Y, i);
    const Moments m = moments(col);
    out.features(i, 0) = m.mean;
    out.features(i, 1) = m.sd;
    out.features(i, 2) = m.skewness;
    out.features(i, 3) = m.kurtosis;
    out.features(i, 4) = median(col);
    out.features(i, 5) = interquartile_range(col);
    out.features(i, 6) = Y.col(i).minCoeff();
    out.features(i, 7) = Y.col(i).maxCoeff();
  }

  for (Eigen::Index j = 0; j < p; ++j) {
    const double mean = out.features.col(j).mean();
    const double sd = std::sqrt(
        (out.features.col(j).array() - mean).square().sum() /
        std::max<double>(1.0, static_cast<double>(d - 1)));
    if (sd > 0) {
      out.features.col(j) = (out.features.col(j).array() - mean) / sd;
    } else {
      out.features.col(j).setZero();
      out.dropped_features.push_back(static_cast<int>(j));
    }
  }

  out.mean = out.features.colwise().mean();
  Matrix C = out.features.rowwise() - out.mean.transpose();
  out.covariance = C.transpose() * C /
                   std::max<double>(1.0, static_cast<double>(d - 1));
  detail::symmetrize(out.covariance);

  // Pseudo-inverse through the eigendecomposition tolerates dropped features.
  Matrix E;
  Vector ev;
  detail::eigen_descending(out.covariance, E, ev);
  const double tol = 1e-12 * std::max(ev[0], 0.0);
  Vector inv = ev.unaryExpr([tol](double v) { return v > tol ? 1.0 / v : 0.0; });
  out.md.resize(d);
  const Matrix proj = C * E;
  for (Eigen::Index i = 0; i < d; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) acc += proj(i, j) * proj(i, j) * inv[j];
    out.md[i] = std::sqrt(acc);
  }
  return out;
}

}  // namespace panomaly
