#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/rng.hpp"
#include "panomaly/stats.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Heterogeneous autoregression on the lag-1 value and the 7- and 30-day
// rolling means. The AR(1) restriction keeps only the lag-1 feature.
// ---------------------------------------------------------------------------

struct HarSpec {
  bool lag1 = true;
  bool weekly = true;
  bool monthly = true;

  Eigen::Index width() const {
    return (lag1 ? 1 : 0) + (weekly ? 1 : 0) + (monthly ? 1 : 0);
  }
  Eigen::Index max_lag() const { return monthly ? 30 : (weekly ? 7 : 1); }

  static HarSpec ar1() { return {true, false, false}; }
};

/// Features for predicting index t (0-based): the previous value and the
/// trailing 7- and 30-day means. Requires t >= max_lag.
inline Vector har_features(std::span<const double> r, Eigen::Index t,
                           const HarSpec& spec = {}) {
  if (t < spec.max_lag() || t >= static_cast<Eigen::Index>(r.size()))
    throw DataError("har_features: insufficient history at t");
  Vector f(spec.width());
  Eigen::Index k = 0;
  if (spec.lag1) f[k++] = r[static_cast<std::size_t>(t - 1)];
  if (spec.weekly) {
    double acc = 0.0;
    for (Eigen::Index j = 1; j <= 7; ++j) acc += r[static_cast<std::size_t>(t - j)];
    f[k++] = acc / 7.0;
  }
  if (spec.monthly) {
    double acc = 0.0;
    for (Eigen::Index j = 1; j <= 30; ++j) acc += r[static_cast<std::size_t>(t - j)];
    f[k++] = acc / 30.0;
  }
  return f;
}

struct HarModel {
  Vector coeffs;  // aligned with HarSpec feature order
  HarSpec spec;
  double residual_scale = 1.0;  // robust scale of the prediction errors
  bool ok = true;
  std::string error;

  double predict(const Vector& features) const { return coeffs.dot(features); }
};

namespace detail {

inline void har_design(std::span<const double> r, const HarSpec& spec,
                       Matrix& X, Vector& y) {
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  const Eigen::Index lag = spec.max_lag();
  const Eigen::Index m = n - lag;
  if (m < 1) throw DataError("har_design: series shorter than max lag");
  X.resize(m, spec.width());
  y.resize(m);
  for (Eigen::Index row = 0; row < m; ++row) {
    const Eigen::Index t = lag + row;
    X.row(row) = har_features(r, t, spec).transpose();
    y[row] = r[static_cast<std::size_t>(t)];
  }
}

}  // namespace detail

/// Trimmed fit of the HAR regression (no intercept), h = floor(0.75 m) over
/// the m usable rows unless overridden through opts-agnostic default.
inline HarModel robhar_fit(std::span<const double> r, const HarSpec& spec = {},
                           const LteOptions& opts = {}) {
  Matrix X;
  Vector y;
  detail::har_design(r, spec, X, y);
  if (y.size() < spec.width() + 1)
    throw DataError("robhar_fit: not enough usable rows");
  const Eigen::Index h = default_trim_count(y.size());
  HarModel model;
  model.spec = spec;
  const RobustFit fit = lte_fit(y, X, h, opts);
  model.coeffs = fit.beta;
  const double scale =
      kMadNormalConsistency * mad({fit.residuals.data(),
                                   static_cast<std::size_t>(fit.residuals.size())});
  model.residual_scale = scale > 0.0 ? scale : 1e-150;
  return model;
}

/// Signed one-step-ahead in-sample prediction errors; entries before the
/// first usable index are NaN.
inline Vector prediction_errors(const HarModel& model,
                                std::span<const double> r) {
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  Vector e = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index t = model.spec.max_lag(); t < n; ++t)
    e[t] = r[static_cast<std::size_t>(t)] - model.predict(har_features(r, t, model.spec));
  return e;
}

struct HarPanelResult {
  std::vector<HarModel> models;
  Matrix errors;  // n x d signed prediction errors, NaN padded
  Vector scales;  // per-series residual scale
};

inline HarPanelResult robhar_fit_panel(const Panel& residuals,
                                       const HarSpec& spec = {},
                                       const LteOptions& opts = {},
                                       int threads = 0) {
  const Eigen::Index d = residuals.n_series();
  HarPanelResult out;
  out.models.resize(static_cast<std::size_t>(d));
  out.errors.resize(residuals.n_obs(), d);
  out.scales.resize(d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t i) {
    LteOptions o = opts;
    o.seed = split_seed(opts.seed, static_cast<std::uint64_t>(i));
    auto& model = out.models[i];
    try {
      model = robhar_fit(residuals.series(static_cast<Eigen::Index>(i)), spec, o);
      out.errors.col(static_cast<Eigen::Index>(i)) =
          prediction_errors(model, residuals.series(static_cast<Eigen::Index>(i)));
    } catch (const std::exception& e) {
      model.ok = false;
      model.error = e.what();
      model.spec = spec;
      model.coeffs = Vector::Zero(spec.width());
      out.errors.col(static_cast<Eigen::Index>(i))
          .setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    out.scales[static_cast<Eigen::Index>(i)] = model.residual_scale;
  }, threads);
  return out;
}

/// Squared prediction errors standardized by the per-series residual scale,
/// pooled and z-scored exactly like the distance-based cellwise scores.
inline ScoreMatrix har_scores(const HarPanelResult& fit,
                              ScoreLevel level = ScoreLevel::Raw) {
  return cellwise_scores(fit.errors, fit.scales.cwiseProduct(fit.scales), level);
}

// ---------------------------------------------------------------------------
// RobNHAR: a two-layer feedforward net on the HAR features with a trimmed
// squared-error loss, trained over rows pooled from MAD-standardized series.
// ---------------------------------------------------------------------------

struct NeuralHarModel {
  Matrix W1;   // hidden x 3
  Vector b1;   // hidden
  Vector w2;   // hidden
  double b2 = 0.0;
  HarSpec spec;
  double trim = 0.75;
  Vector train_scales;  // per training-series MAD
  std::vector<double> loss_trajectory;  // mean trimmed batch loss per epoch
  double initial_loss = 0.0;
  double final_loss = 0.0;

  Eigen::Index hidden() const { return w2.size(); }

  double predict(const Vector& features) const {
    double out = b2;
    for (Eigen::Index j = 0; j < w2.size(); ++j) {
      const double pre = W1.row(j).dot(features) + b1[j];
      if (pre > 0.0) out += w2[j] * pre;
    }
    return out;
  }
};

struct NharOptions {
  int hidden = 10;
  double trim = 0.75;
  int epochs = 100;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

namespace detail {

struct AdamState {
  Vector m, v;
  int step = 0;
  explicit AdamState(Eigen::Index size)
      : m(Vector::Zero(size)), v(Vector::Zero(size)) {}

  void update(Vector& params, const Vector& grad, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    const Vector denom = ((v / bc2).array().sqrt() + eps).matrix();
    params -= (lr / bc1) * m.cwiseQuotient(denom);
  }
};

/// Trimmed mean of the smallest floor(trim * count) squared errors.
inline double trimmed_mse(std::vector<double>& sq, double trim) {
  const std::size_t keep =
      std::max<std::size_t>(1, static_cast<std::size_t>(trim * double(sq.size())));
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(keep - 1),
                   sq.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) acc += sq[i];
  return acc / double(keep);
}

}  // namespace detail

/// Pools (feature, target) rows from every series of the residual panel,
/// each series standardized by its MAD, and minimizes the trimmed squared
/// error with Adam. Series with zero MAD are skipped.
inline NeuralHarModel robnhar_fit(const Matrix& residuals,
                                  const HarSpec& spec = {},
                                  const NharOptions& opts = {}) {
  if (opts.hidden < 1) throw DataError("robnhar_fit: hidden width must be >= 1");
  if (!(opts.trim > 0.0 && opts.trim <= 1.0))
    throw DataError("robnhar_fit: trim fraction must be in (0, 1]");
  const Eigen::Index n = residuals.rows();
  const Eigen::Index d = residuals.cols();
  const Eigen::Index lag = spec.max_lag();
  const Eigen::Index per_series = n - lag;
  if (per_series < 1) throw DataError("robnhar_fit: series shorter than max lag");

  NeuralHarModel model;
  model.spec = spec;
  model.trim = opts.trim;
  model.train_scales = Vector::Zero(d);

  std::vector<Vector> features;
  std::vector<double> targets;
  features.reserve(static_cast<std::size_t>(per_series * d));
  std::vector<double> scaled(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < d; ++i) {
    const double scale = mad({residuals.col(i).data(), static_cast<std::size_t>(n)});
    model.train_scales[i] = scale;
    if (!(scale > 0.0)) continue;
    for (Eigen::Index t = 0; t < n; ++t)
      scaled[static_cast<std::size_t>(t)] = residuals(t, i) / scale;
    for (Eigen::Index t = lag; t < n; ++t) {
      features.push_back(har_features(scaled, t, spec));
      targets.push_back(scaled[static_cast<std::size_t>(t)]);
    }
  }
  const std::size_t rows = targets.size();
  const Eigen::Index ell = opts.hidden;
  const Eigen::Index n_params = ell * spec.width() + ell + ell + 1;
  if (rows < static_cast<std::size_t>(10 * n_params))
    throw DataError("robnhar_fit: need at least 10 rows per parameter");

  // Parameters live in one flat vector: [W1 row-major | b1 | w2 | b2].
  StdRng rng = make_rng(opts.seed, 0);
  Vector params = Vector::Zero(n_params);
  {
    const double bound_w1 = std::sqrt(6.0 / double(spec.width()));
    const double bound_w2 = std::sqrt(6.0 / double(ell));
    std::uniform_real_distribution<double> u1(-bound_w1, bound_w1);
    std::uniform_real_distribution<double> u2(-bound_w2, bound_w2);
    for (Eigen::Index j = 0; j < ell * spec.width(); ++j) params[j] = u1(rng);
    for (Eigen::Index j = 0; j < ell; ++j)
      params[ell * spec.width() + ell + j] = u2(rng);
  }

  const Eigen::Index k = spec.width();
  auto w1_at = [&](const Vector& p, Eigen::Index j) {
    return p.segment(j * k, k);
  };
  auto forward = [&](const Vector& p, const Vector& f, Vector& hidden_out) {
    double out = p[n_params - 1];
    for (Eigen::Index j = 0; j < ell; ++j) {
      const double pre = w1_at(p, j).dot(f) + p[ell * k + j];
      hidden_out[j] = pre > 0.0 ? pre : 0.0;
      out += p[ell * k + ell + j] * hidden_out[j];
    }
    return out;
  };

  auto full_trimmed_loss = [&](const Vector& p) {
    std::vector<double> sq(rows);
    Vector hidden(ell);
    for (std::size_t r = 0; r < rows; ++r) {
      const double e = forward(p, features[r], hidden) - targets[r];
      sq[r] = e * e;
    }
    return detail::trimmed_mse(sq, opts.trim);
  };

  model.initial_loss = full_trimmed_loss(params);

  detail::AdamState adam(n_params);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vector grad(n_params), hidden(ell);
  std::vector<double> batch_sq;
  std::vector<std::size_t> batch_keep;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < rows;
         start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t stop =
          std::min(rows, start + static_cast<std::size_t>(opts.batch_size));
      const std::size_t bsize = stop - start;
      const std::size_t keep =
          std::max<std::size_t>(1, static_cast<std::size_t>(opts.trim * double(bsize)));

      batch_sq.resize(bsize);
      batch_keep.resize(bsize);
      std::iota(batch_keep.begin(), batch_keep.end(), std::size_t{0});
      for (std::size_t b = 0; b < bsize; ++b) {
        const auto& f = features[order[start + b]];
        const double e = forward(params, f, hidden) - targets[order[start + b]];
        batch_sq[b] = e * e;
      }
      std::nth_element(batch_keep.begin(),
                       batch_keep.begin() + static_cast<std::ptrdiff_t>(keep - 1),
                       batch_keep.end(), [&](std::size_t a, std::size_t b) {
                         return batch_sq[a] < batch_sq[b] ||
                                (batch_sq[a] == batch_sq[b] && a < b);
                       });

      grad.setZero();
      double loss = 0.0;
      for (std::size_t kk = 0; kk < keep; ++kk) {
        const std::size_t row = order[start + batch_keep[kk]];
        const auto& f = features[row];
        const double pred = forward(params, f, hidden);
        const double e = pred - targets[row];
        loss += e * e;
        const double de = 2.0 * e / double(keep);
        grad[n_params - 1] += de;
        for (Eigen::Index j = 0; j < ell; ++j) {
          if (hidden[j] <= 0.0) continue;
          grad[ell * k + ell + j] += de * hidden[j];
          const double dh = de * params[ell * k + ell + j];
          grad[ell * k + j] += dh;
          grad.segment(j * k, k) += dh * f;
        }
      }
      loss /= double(keep);
      if (!std::isfinite(loss))
        throw NumericalError("robnhar_fit diverged at epoch " +
                             std::to_string(epoch) + " (non-finite loss)");
      adam.update(params, grad, opts.learning_rate);
      epoch_loss += loss;
      ++batches;
    }
    model.loss_trajectory.push_back(epoch_loss / std::max(1, batches));
  }

  model.final_loss = full_trimmed_loss(params);
  if (model.final_loss > model.initial_loss) {
    // Keep the optimization contract: never return a worse-than-initial fit.
    throw NumericalError("robnhar_fit: training failed to improve the trimmed loss");
  }

  model.W1.resize(ell, k);
  for (Eigen::Index j = 0; j < ell; ++j) model.W1.row(j) = w1_at(params, j).transpose();
  model.b1 = params.segment(ell * k, ell);
  model.w2 = params.segment(ell * k + ell, ell);
  model.b2 = params[n_params - 1];
  return model;
}

/// Signed prediction errors of the network on one series, computed in the
/// series' MAD-standardized units (directly poolable across series).
inline Vector nhar_prediction_errors(const NeuralHarModel& model,
                                     std::span<const double> r,
                                     double scale_override = 0.0) {
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  Vector e = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  double scale = scale_override > 0.0 ? scale_override : mad(r);
  if (!(scale > 0.0)) return e;
  std::vector<double> scaled(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) scaled[t] = r[t] / scale;
  for (Eigen::Index t = model.spec.max_lag(); t < n; ++t)
    e[t] = scaled[static_cast<std::size_t>(t)] -
           model.predict(har_features(scaled, t, model.spec));
  return e;
}

struct NharPanelResult {
  Matrix errors;  // standardized units, NaN padded
  Vector scales;  // per-series MAD used for standardization
};

inline NharPanelResult nhar_panel_errors(const NeuralHarModel& model,
                                         const Panel& residuals,
                                         int threads = 0) {
  const Eigen::Index d = residuals.n_series();
  NharPanelResult out;
  out.errors.resize(residuals.n_obs(), d);
  out.scales.resize(d);
  parallel_for(static_cast<std::size_t>(d), [&](std::size_t i) {
    const auto col = residuals.series(static_cast<Eigen::Index>(i));
    const double scale = mad(col);
    out.scales[static_cast<Eigen::Index>(i)] = scale;
    out.errors.col(static_cast<Eigen::Index>(i)) =
        nhar_prediction_errors(model, col, scale);
  }, threads);
  return out;
}

inline ScoreMatrix nhar_scores(const NharPanelResult& result,
                               ScoreLevel level = ScoreLevel::Raw) {
  return cellwise_scores(result.errors, Vector::Ones(result.errors.cols()), level);
}

}  // namespace panomaly
