#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/rng.hpp"
#include "panomaly/stats.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Per-series feature vector driving the clustering: 8 summary statistics,
// 3 trend coefficients, amplitude/phase of the first two harmonics, the
// first 50 autocovariance coefficients and 3 periodogram ordinates (68).
// ---------------------------------------------------------------------------

constexpr int kClusterFeatureCount = 68;
constexpr int kAcfLags = 50;

namespace detail {

/// Periodogram ordinate |sum_t r_t e^{-i lambda t}|^2 / n at one frequency.
inline double periodogram_at(std::span<const double> r, double lambda) {
  double re = 0.0, im = 0.0;
  for (std::size_t t = 0; t < r.size(); ++t) {
    const double arg = lambda * static_cast<double>(t + 1);
    re += r[t] * std::cos(arg);
    im -= r[t] * std::sin(arg);
  }
  return (re * re + im * im) / static_cast<double>(r.size());
}

/// Max over the Fourier ordinates nearest the target frequency (a window of
/// three around the closest Fourier index).
inline double periodogram_near(std::span<const double> r, double target) {
  const auto n = static_cast<double>(r.size());
  const double two_pi = 2.0 * std::numbers::pi;
  const long k_max = static_cast<long>(n / 2.0);
  const long k_star = std::lround(target * n / two_pi);
  double best = 0.0;
  for (long k = std::max(0L, k_star - 1); k <= std::min(k_max, k_star + 1); ++k)
    best = std::max(best, periodogram_at(r, two_pi * static_cast<double>(k) / n));
  return best;
}

}  // namespace detail

/// Extracts the 68 clustering features for one series. Requires n >= 51 (for
/// lag-50 autocovariances) and a quadratic-trend, two-harmonic fit.
inline Vector extract_features(std::span<const double> r, const RobustFit& fit,
                               const TrendCycleSpec& spec) {
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  if (n < kAcfLags + 1)
    throw DataError("extract_features: series shorter than lag-50 window");
  if (spec.trend_order < 2 || spec.frequencies.size() < 2)
    throw DataError("extract_features: needs quadratic trend and two harmonics");

  Vector f(kClusterFeatureCount);
  Eigen::Index k = 0;

  const Moments m = moments(r);
  f[k++] = m.mean;
  f[k++] = m.sd;
  f[k++] = *std::max_element(r.begin(), r.end());
  f[k++] = *std::min_element(r.begin(), r.end());
  f[k++] = mad(r);
  f[k++] = interquartile_range(r);
  f[k++] = m.skewness;
  f[k++] = m.kurtosis;

  f[k++] = fit.beta[0];
  f[k++] = fit.beta[1];
  f[k++] = fit.beta[2];

  for (int j = 0; j < 2; ++j) {
    const double bc = fit.beta[1 + spec.trend_order + 2 * j];      // cos
    const double bs = fit.beta[1 + spec.trend_order + 2 * j + 1];  // sin
    f[k++] = std::sqrt(bc * bc + bs * bs);
    double phase = 0.0;
    if (bs != 0.0) phase = std::atan(bc / bs);
    else if (bc != 0.0) phase = bc > 0 ? std::numbers::pi / 2 : -std::numbers::pi / 2;
    f[k++] = phase;
  }

  // Autocovariance (n-j)^-1 sum_t r_t r_{t-j}, j = 1..50.
  for (int j = 1; j <= kAcfLags; ++j) {
    double acc = 0.0;
    for (Eigen::Index t = j; t < n; ++t)
      acc += r[static_cast<std::size_t>(t)] * r[static_cast<std::size_t>(t - j)];
    f[k++] = acc / static_cast<double>(n - j);
  }

  f[k++] = detail::periodogram_near(r, 0.0);
  f[k++] = detail::periodogram_near(r, 2.0 * std::numbers::pi / 7.0);
  f[k++] = detail::periodogram_near(r, 2.0 * std::numbers::pi / 30.0);
  return f;
}

/// Feature matrix (d x 68) with per-feature standardization; constant
/// features are zeroed so they cannot influence distances.
inline Matrix feature_matrix(const Panel& residuals,
                             const std::vector<RobustFit>& fits,
                             const TrendCycleSpec& spec, int threads = 0) {
  const Eigen::Index d = residuals.n_series();
  Matrix F(d, kClusterFeatureCount);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t i) {
    F.row(static_cast<Eigen::Index>(i)) =
        extract_features(residuals.series(static_cast<Eigen::Index>(i)),
                         fits[i], spec).transpose();
  }, threads);
  for (Eigen::Index j = 0; j < F.cols(); ++j) {
    const double mean = F.col(j).mean();
    const double sd = d > 1 ? std::sqrt((F.col(j).array() - mean).square().sum() /
                                        static_cast<double>(d - 1))
                            : 0.0;
    if (sd > 0)
      F.col(j) = (F.col(j).array() - mean) / sd;
    else
      F.col(j).setZero();
  }
  return F;
}

// ---------------------------------------------------------------------------
// Seeded multi-restart k-means (Lloyd iterations, k-means++ seeding, empty
// clusters reseeded to the farthest point).
// ---------------------------------------------------------------------------

struct ClusterModel {
  Matrix centroids;  // K x p
  std::vector<int> labels;
  double wss = 0.0;
  std::vector<double> restart_wss;  // diagnostics, one per restart
};

namespace detail {

inline double squared_distance(const Matrix& F, Eigen::Index row,
                               const Matrix& C, Eigen::Index centroid) {
  return (F.row(row) - C.row(centroid)).squaredNorm();
}

struct LloydResult {
  Matrix centroids;
  std::vector<int> labels;
  double wss = 0.0;
};

inline LloydResult lloyd(const Matrix& F, Matrix centroids, int max_iter) {
  const Eigen::Index d = F.rows();
  const Eigen::Index K = centroids.rows();
  std::vector<int> labels(static_cast<std::size_t>(d), 0);
  double wss = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    wss = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      int best = 0;
      double best_d = squared_distance(F, i, centroids, 0);
      for (Eigen::Index c = 1; c < K; ++c) {
        const double dist = squared_distance(F, i, centroids, c);
        if (dist < best_d) { best_d = dist; best = static_cast<int>(c); }
      }
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
      wss += best_d;
    }
    if (!changed && iter > 0) break;

    Matrix sums = Matrix::Zero(K, F.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < d; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += F.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index c = 0; c < K; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Empty cluster: reseed to the point farthest from its centroid.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < d; ++i) {
          const double dist = squared_distance(
              F, i, centroids, labels[static_cast<std::size_t>(i)]);
          if (dist > far_d) { far_d = dist; far = i; }
        }
        centroids.row(c) = F.row(far);
      }
    }
  }
  // Final pass so labels and WSS match the returned centroids.
  wss = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    int best = 0;
    double best_d = squared_distance(F, i, centroids, 0);
    for (Eigen::Index c = 1; c < K; ++c) {
      const double dist = squared_distance(F, i, centroids, c);
      if (dist < best_d) { best_d = dist; best = static_cast<int>(c); }
    }
    labels[static_cast<std::size_t>(i)] = best;
    wss += best_d;
  }
  return {std::move(centroids), std::move(labels), wss};
}

inline Matrix kmeanspp_seed(const Matrix& F, Eigen::Index K, StdRng& rng) {
  const Eigen::Index d = F.rows();
  Matrix centroids(K, F.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, d - 1);
  centroids.row(0) = F.row(pick(rng));
  Vector dist2(d);
  for (Eigen::Index i = 0; i < d; ++i)
    dist2[i] = (F.row(i) - centroids.row(0)).squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index c = 1; c < K; ++c) {
    const double total = dist2.sum();
    Eigen::Index chosen = 0;
    if (total > 0) {
      double target = unif(rng) * total;
      for (Eigen::Index i = 0; i < d; ++i) {
        target -= dist2[i];
        if (target <= 0) { chosen = i; break; }
        chosen = i;
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(c) = F.row(chosen);
    for (Eigen::Index i = 0; i < d; ++i)
      dist2[i] = std::min(dist2[i], (F.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

}  // namespace detail

/// Best of `restarts` seeded k-means++ / Lloyd runs by total within-cluster
/// sum of squares. Deterministic given (seed, restarts).
inline ClusterModel kmeans(const Matrix& F, Eigen::Index K, int restarts = 50,
                           std::uint64_t seed = 0, int max_iter = 300,
                           int threads = 0) {
  const Eigen::Index d = F.rows();
  if (K < 1 || K > d) throw DataError("kmeans: K must be in [1, number of series]");

  std::vector<detail::LloydResult> results(static_cast<std::size_t>(restarts));
  parallel_for(static_cast<std::size_t>(restarts), [&](std::size_t r) {
    StdRng rng = make_rng(seed, static_cast<std::uint64_t>(r));
    results[r] = detail::lloyd(F, detail::kmeanspp_seed(F, K, rng), max_iter);
  }, threads);

  ClusterModel model;
  std::size_t best = 0;
  for (std::size_t r = 0; r < results.size(); ++r) {
    model.restart_wss.push_back(results[r].wss);
    if (results[r].wss < results[best].wss) best = r;
  }
  model.centroids = std::move(results[best].centroids);
  model.labels = std::move(results[best].labels);
  model.wss = results[best].wss;
  return model;
}

/// WSS as a function of K, guaranteed non-increasing: each K also tries a
/// polished split of the previous solution and keeps the better of the two.
inline std::vector<double> elbow_curve(const Matrix& F, Eigen::Index K_max,
                                       int restarts = 50, std::uint64_t seed = 0,
                                       int threads = 0) {
  std::vector<double> wss;
  detail::LloydResult previous;
  for (Eigen::Index K = 1; K <= K_max; ++K) {
    ClusterModel direct = kmeans(F, K, restarts, split_seed(seed, static_cast<std::uint64_t>(K)),
                                 300, threads);
    detail::LloydResult best{direct.centroids, direct.labels, direct.wss};
    if (K > 1) {
      // Split the previous solution's worst cluster at its farthest member.
      Matrix centroids(K, F.cols());
      centroids.topRows(K - 1) = previous.centroids;
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < F.rows(); ++i) {
        const double dist = (F.row(i) - previous.centroids.row(
                                 previous.labels[static_cast<std::size_t>(i)]))
                                .squaredNorm();
        if (dist > far_d) { far_d = dist; far = i; }
      }
      centroids.row(K - 1) = F.row(far);
      auto split = detail::lloyd(F, std::move(centroids), 300);
      if (split.wss < best.wss) best = std::move(split);
    }
    wss.push_back(best.wss);
    previous = std::move(best);
  }
  return wss;
}

// ---------------------------------------------------------------------------
// Overlap of clusters with flagged / LSO / AO series, one block per detector.
// ---------------------------------------------------------------------------

struct OverlapCells {
  double flagged_pct = 0.0;
  double lso_pct = 0.0;
  double ao_pct = 0.0;
};

struct OverlapRow {
  int cluster = 0;
  Eigen::Index count = 0;
  double pct_of_total = 0.0;
  double inter_cluster_distance = 0.0;  // mean distance to other centroids
  double intra_cluster_distance = 0.0;  // mean member distance to centroid
  std::map<std::string, OverlapCells> by_method;
};

inline std::vector<OverlapRow> overlap_report(const Matrix& F,
                                              const ClusterModel& model,
                                              const OutlierReport& report) {
  const Eigen::Index K = model.centroids.rows();
  const Eigen::Index d = F.rows();

  std::map<std::string, std::set<Eigen::Index>> flagged, lso, ao;
  for (const auto& e : report.events) {
    flagged[e.method].insert(e.series);
    if (e.typology == Typology::Lso) lso[e.method].insert(e.series);
    if (e.typology == Typology::Ao) ao[e.method].insert(e.series);
  }

  std::vector<OverlapRow> rows(static_cast<std::size_t>(K));
  for (Eigen::Index c = 0; c < K; ++c) {
    auto& row = rows[static_cast<std::size_t>(c)];
    row.cluster = static_cast<int>(c);
    double inter = 0.0;
    for (Eigen::Index o = 0; o < K; ++o)
      if (o != c) inter += (model.centroids.row(c) - model.centroids.row(o)).norm();
    row.inter_cluster_distance = K > 1 ? inter / static_cast<double>(K - 1) : 0.0;
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    auto& row = rows[static_cast<std::size_t>(model.labels[static_cast<std::size_t>(i)])];
    ++row.count;
    row.intra_cluster_distance +=
        (F.row(i) - model.centroids.row(model.labels[static_cast<std::size_t>(i)])).norm();
  }
  for (auto& row : rows) {
    if (row.count > 0) row.intra_cluster_distance /= static_cast<double>(row.count);
    row.pct_of_total = 100.0 * static_cast<double>(row.count) / static_cast<double>(d);
    for (const auto& [method, set_all] : flagged) {
      OverlapCells cells;
      Eigen::Index n_f = 0, n_l = 0, n_a = 0;
      for (Eigen::Index i = 0; i < d; ++i) {
        if (model.labels[static_cast<std::size_t>(i)] != row.cluster) continue;
        if (set_all.count(i)) ++n_f;
        auto it_l = lso.find(method);
        if (it_l != lso.end() && it_l->second.count(i)) ++n_l;
        auto it_a = ao.find(method);
        if (it_a != ao.end() && it_a->second.count(i)) ++n_a;
      }
      if (row.count > 0) {
        cells.flagged_pct = 100.0 * static_cast<double>(n_f) / static_cast<double>(row.count);
        cells.lso_pct = 100.0 * static_cast<double>(n_l) / static_cast<double>(row.count);
        cells.ao_pct = 100.0 * static_cast<double>(n_a) / static_cast<double>(row.count);
      }
      row.by_method[method] = cells;
    }
  }
  return rows;
}

inline void save_overlap_report(const std::vector<OverlapRow>& rows,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write overlap report: " + path);
  std::set<std::string> methods;
  for (const auto& r : rows)
    for (const auto& [m, _] : r.by_method) methods.insert(m);
  out << "cluster,num_series,pct_series,inter_cluster_dist,intra_cluster_dist";
  for (const auto& m : methods)
    out << ',' << m << "_outliers_pct," << m << "_lso_pct," << m << "_ao_pct";
  out << '\n';
  char buf[32];
  for (const auto& r : rows) {
    out << (r.cluster + 1) << ',' << r.count;
    std::snprintf(buf, sizeof(buf), "%.4f", r.pct_of_total); out << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.4f", r.inter_cluster_distance); out << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.4f", r.intra_cluster_distance); out << ',' << buf;
    for (const auto& m : methods) {
      OverlapCells cells;
      auto it = r.by_method.find(m);
      if (it != r.by_method.end()) cells = it->second;
      std::snprintf(buf, sizeof(buf), "%.4f", cells.flagged_pct); out << ',' << buf;
      std::snprintf(buf, sizeof(buf), "%.4f", cells.lso_pct); out << ',' << buf;
      std::snprintf(buf, sizeof(buf), "%.4f", cells.ao_pct); out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace panomaly
