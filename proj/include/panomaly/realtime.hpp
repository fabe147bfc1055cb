#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/forecast.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Out-of-sample detection with a model frozen at time T: trend coefficients,
// forecasters and score calibration stay fixed while a rolling residual
// buffer advances one day per step.
// ---------------------------------------------------------------------------

struct LevelCalibration {
  double pooled_mean = 0.0;  // of the standardized squared errors
  double pooled_sd = 1.0;
  double kappa = 0.0;
};

struct RealtimeState {
  static constexpr Eigen::Index kBufferRows = 31;  // 30 lags + current value

  TrendCycleSpec design;
  Matrix betas;   // width x d frozen trend coefficients
  Matrix buffer;  // kBufferRows x d trailing residuals, last row = newest
  std::vector<std::string> series_ids;
  Eigen::Index observed = 0;  // observations consumed (the frozen T grows)
  int last_date = 0;

  bool use_nhar = false;
  bool diff_enabled = true;
  HarSpec har_spec;

  // HAR forecasters: one coefficient column per series and level.
  Matrix har_raw_coeffs, har_diff_coeffs;  // k x d
  Vector scale_raw, scale_diff;            // error scales (HAR) or MADs (NHAR)
  NeuralHarModel nhar_raw, nhar_diff;

  LevelCalibration calib_raw, calib_diff;
};

struct FreezeOptions {
  bool use_nhar = false;
  HarSpec har_spec;
  LteOptions har_lte;
  NharOptions nhar;
  ThresholdMethod threshold = ThresholdMethod::Quantile;
  double quantile_k = 0.9975;
  ThresholdConfig threshold_cfg;
  bool diff_level = true;
  int threads = 0;
};

struct FreezeResult {
  RealtimeState state;
  OutlierReport in_sample;   // merged raw+diff flags over the training window
  ScoreMatrix raw_scores;    // in-sample, for diagnostics
  std::optional<ScoreMatrix> diff_scores;
};

namespace detail {

inline ThresholdSpec freeze_threshold(const ScoreMatrix& scores,
                                      const FreezeOptions& opts) {
  return compute_threshold(
      {scores.scores.data(), static_cast<std::size_t>(scores.scores.size())},
      opts.threshold, opts.quantile_k, opts.threshold_cfg);
}

}  // namespace detail

/// Fits the trend and forecasting models on the training panel, computes the
/// in-sample flags, and freezes everything needed to score new days.
inline FreezeResult freeze_realtime_state(const Panel& train,
                                          const TrendCycleSpec& design,
                                          const PanelFitOptions& fit_opts,
                                          const FreezeOptions& opts) {
  if (train.n_obs() <= RealtimeState::kBufferRows + opts.har_spec.max_lag())
    throw DataError("freeze_realtime_state: training window too short");
  FreezeResult out;
  RealtimeState& st = out.state;
  st.design = design;
  st.series_ids = train.series_ids;
  st.observed = train.n_obs();
  st.last_date = train.dates.back();
  st.use_nhar = opts.use_nhar;
  st.diff_enabled = opts.diff_level;
  st.har_spec = opts.har_spec;

  auto fit = fit_panel(train, design, fit_opts);
  const Eigen::Index d = train.n_series();
  st.betas.resize(design.width(), d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!fit.fits[static_cast<std::size_t>(i)].ok)
      throw NumericalError("freeze_realtime_state: trend fit failed for series " +
                           train.series_ids[static_cast<std::size_t>(i)]);
    st.betas.col(i) = fit.fits[static_cast<std::size_t>(i)].beta;
  }
  st.buffer = fit.residuals.values.bottomRows(RealtimeState::kBufferRows);

  Panel diff_res;
  if (opts.diff_level) diff_res = first_difference(fit.residuals);

  ThresholdSpec raw_threshold, diff_threshold;
  if (opts.use_nhar) {
    st.nhar_raw = robnhar_fit(fit.residuals.values, opts.har_spec, opts.nhar);
    auto raw_err = nhar_panel_errors(st.nhar_raw, fit.residuals, opts.threads);
    st.scale_raw = raw_err.scales;
    out.raw_scores = nhar_scores(raw_err, ScoreLevel::Raw);
    if (opts.diff_level) {
      NharOptions diff_opts = opts.nhar;
      diff_opts.seed = split_seed(opts.nhar.seed, 1);
      st.nhar_diff = robnhar_fit(diff_res.values, opts.har_spec, diff_opts);
      auto diff_err = nhar_panel_errors(st.nhar_diff, diff_res, opts.threads);
      st.scale_diff = diff_err.scales;
      out.diff_scores = nhar_scores(diff_err, ScoreLevel::Differenced);
    }
  } else {
    auto raw_fit = robhar_fit_panel(fit.residuals, opts.har_spec, opts.har_lte,
                                    opts.threads);
    st.har_raw_coeffs.resize(opts.har_spec.width(), d);
    for (Eigen::Index i = 0; i < d; ++i)
      st.har_raw_coeffs.col(i) = raw_fit.models[static_cast<std::size_t>(i)].coeffs;
    st.scale_raw = raw_fit.scales;
    out.raw_scores = har_scores(raw_fit, ScoreLevel::Raw);
    if (opts.diff_level) {
      LteOptions diff_lte = opts.har_lte;
      diff_lte.seed = split_seed(opts.har_lte.seed, 1);
      auto diff_fit = robhar_fit_panel(diff_res, opts.har_spec, diff_lte,
                                       opts.threads);
      st.har_diff_coeffs.resize(opts.har_spec.width(), d);
      for (Eigen::Index i = 0; i < d; ++i)
        st.har_diff_coeffs.col(i) = diff_fit.models[static_cast<std::size_t>(i)].coeffs;
      st.scale_diff = diff_fit.scales;
      out.diff_scores = har_scores(diff_fit, ScoreLevel::Differenced);
    }
  }

  raw_threshold = detail::freeze_threshold(out.raw_scores, opts);
  st.calib_raw = {out.raw_scores.pooled_mean, out.raw_scores.pooled_sd,
                  raw_threshold.kappa};
  if (opts.diff_level) {
    diff_threshold = detail::freeze_threshold(*out.diff_scores, opts);
    st.calib_diff = {out.diff_scores->pooled_mean, out.diff_scores->pooled_sd,
                     diff_threshold.kappa};
    out.in_sample = flag_and_merge(out.raw_scores, raw_threshold,
                                   *out.diff_scores, diff_threshold,
                                   opts.use_nhar ? "robnhar" : "robhar");
  } else {
    out.in_sample.events =
        flag_cells(out.raw_scores, raw_threshold,
                   opts.use_nhar ? "robnhar" : "robhar");
  }
  return out;
}

struct RealtimeStepResult {
  std::vector<OutlierEvent> flags;     // time = 0-based index in the stream
  std::vector<std::string> skipped;    // series with missing observations
};

/// Scores one new observation row against the frozen state and advances the
/// rolling buffer. The trend coefficients and forecasters never change.
inline RealtimeStepResult realtime_step(RealtimeState& st, const Vector& y_new,
                                        int date) {
  const Eigen::Index d = st.betas.cols();
  if (y_new.size() != d)
    throw DataError("realtime_step: observation width mismatch");
  RealtimeStepResult out;

  const Eigen::Index t_new = st.observed;  // 0-based index of the new day
  Vector x_row(st.design.width());
  {
    const double tt = static_cast<double>(t_new + 1);
    double pw = 1.0;
    for (int j = 0; j <= st.design.trend_order; ++j) { x_row[j] = pw; pw *= tt; }
    Eigen::Index col = 1 + st.design.trend_order;
    for (double lambda : st.design.frequencies) {
      x_row[col++] = std::cos(lambda * tt);
      x_row[col++] = std::sin(lambda * tt);
    }
  }

  const Eigen::Index B = RealtimeState::kBufferRows;
  std::vector<double> hist(static_cast<std::size_t>(B) + 1);
  std::vector<double> hist_diff(static_cast<std::size_t>(B));

  Vector r_new(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!std::isfinite(y_new[i])) {
      out.skipped.push_back(st.series_ids[static_cast<std::size_t>(i)]);
      r_new[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r_new[i] = y_new[i] - x_row.dot(st.betas.col(i));

    // Raw level: history = buffer column followed by the new residual.
    for (Eigen::Index b = 0; b < B; ++b)
      hist[static_cast<std::size_t>(b)] = st.buffer(b, i);
    hist[static_cast<std::size_t>(B)] = r_new[i];

    double c_raw;
    if (st.use_nhar) {
      const double scale = st.scale_raw[i] > 0 ? st.scale_raw[i] : 1.0;
      std::vector<double> scaled(hist.size());
      for (std::size_t q = 0; q < hist.size(); ++q) scaled[q] = hist[q] / scale;
      const double pred = st.nhar_raw.predict(
          har_features(scaled, B, st.har_spec));
      const double err = scaled.back() - pred;
      c_raw = err * err;
    } else {
      const Vector f = har_features(hist, B, st.har_spec);
      const double pred = st.har_raw_coeffs.col(i).dot(f);
      const double err = r_new[i] - pred;
      const double s = st.scale_raw[i] > 0 ? st.scale_raw[i] : 1e-150;
      c_raw = err * err / (s * s);
    }
    const double z_raw =
        st.calib_raw.pooled_sd > 0
            ? (c_raw - st.calib_raw.pooled_mean) / st.calib_raw.pooled_sd
            : 0.0;
    bool flagged = false;
    if (z_raw > st.calib_raw.kappa) {
      OutlierEvent e;
      e.series = i;
      e.time = t_new;
      e.score = z_raw;
      e.level = "raw";
      e.kappa = st.calib_raw.kappa;
      e.method = st.use_nhar ? "robnhar" : "robhar";
      out.flags.push_back(e);
      flagged = true;
    }

    if (st.diff_enabled) {
      for (std::size_t q = 0; q + 1 < hist.size(); ++q)
        hist_diff[q] = hist[q + 1] - hist[q];
      double c_diff;
      if (st.use_nhar) {
        const double scale = st.scale_diff[i] > 0 ? st.scale_diff[i] : 1.0;
        std::vector<double> scaled(hist_diff.size());
        for (std::size_t q = 0; q < hist_diff.size(); ++q)
          scaled[q] = hist_diff[q] / scale;
        const double pred = st.nhar_diff.predict(
            har_features(scaled, B - 1, st.har_spec));
        const double err = scaled.back() - pred;
        c_diff = err * err;
      } else {
        const Vector f = har_features(hist_diff, B - 1, st.har_spec);
        const double pred = st.har_diff_coeffs.col(i).dot(f);
        const double err = hist_diff.back() - pred;
        const double s = st.scale_diff[i] > 0 ? st.scale_diff[i] : 1e-150;
        c_diff = err * err / (s * s);
      }
      const double z_diff =
          st.calib_diff.pooled_sd > 0
              ? (c_diff - st.calib_diff.pooled_mean) / st.calib_diff.pooled_sd
              : 0.0;
      if (z_diff > st.calib_diff.kappa) {
        if (flagged) {
          out.flags.back().level = "both";
          out.flags.back().score = std::max(out.flags.back().score, z_diff);
        } else {
          OutlierEvent e;
          e.series = i;
          e.time = t_new;
          e.score = z_diff;
          e.level = "diff";
          e.kappa = st.calib_diff.kappa;
          e.method = st.use_nhar ? "robnhar" : "robhar";
          out.flags.push_back(e);
        }
      }
    }
  }

  // Advance the rolling buffer; a skipped series keeps its last residual.
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = std::isfinite(r_new[i]) ? r_new[i] : st.buffer(B - 1, i);
    for (Eigen::Index b = 0; b + 1 < B; ++b) st.buffer(b, i) = st.buffer(b + 1, i);
    st.buffer(B - 1, i) = v;
  }
  st.observed += 1;
  st.last_date = date;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: 4-byte magic, little-endian u32 header length, JSON header
// with version / shapes / seeds, then raw doubles in header order.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_doubles(std::ofstream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::ifstream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("truncated state file");
}

inline nlohmann::json har_spec_json(const HarSpec& s) {
  return {{"lag1", s.lag1}, {"weekly", s.weekly}, {"monthly", s.monthly}};
}

inline HarSpec har_spec_from_json(const nlohmann::json& j) {
  HarSpec s;
  s.lag1 = j.at("lag1").get<bool>();
  s.weekly = j.at("weekly").get<bool>();
  s.monthly = j.at("monthly").get<bool>();
  return s;
}

inline void write_nhar_blobs(std::ofstream& out, const NeuralHarModel& m) {
  write_doubles(out, m.W1.data(), static_cast<std::size_t>(m.W1.size()));
  write_doubles(out, m.b1.data(), static_cast<std::size_t>(m.b1.size()));
  write_doubles(out, m.w2.data(), static_cast<std::size_t>(m.w2.size()));
  write_doubles(out, &m.b2, 1);
}

inline void read_nhar_blobs(std::ifstream& in, NeuralHarModel& m,
                            Eigen::Index hidden, Eigen::Index width) {
  m.W1.resize(hidden, width);
  m.b1.resize(hidden);
  m.w2.resize(hidden);
  read_doubles(in, m.W1.data(), static_cast<std::size_t>(m.W1.size()));
  read_doubles(in, m.b1.data(), static_cast<std::size_t>(m.b1.size()));
  read_doubles(in, m.w2.data(), static_cast<std::size_t>(m.w2.size()));
  read_doubles(in, &m.b2, 1);
}

}  // namespace detail

inline void save_realtime_state(const RealtimeState& st, const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["kind"] = "realtime-state";
  header["n_series"] = st.betas.cols();
  header["design"] = {{"trend_order", st.design.trend_order},
                      {"frequencies", st.design.frequencies}};
  header["observed"] = st.observed;
  header["last_date"] = st.last_date;
  header["series_ids"] = st.series_ids;
  header["use_nhar"] = st.use_nhar;
  header["diff_enabled"] = st.diff_enabled;
  header["har_spec"] = detail::har_spec_json(st.har_spec);
  header["calib_raw"] = {{"mean", st.calib_raw.pooled_mean},
                         {"sd", st.calib_raw.pooled_sd},
                         {"kappa", st.calib_raw.kappa}};
  header["calib_diff"] = {{"mean", st.calib_diff.pooled_mean},
                          {"sd", st.calib_diff.pooled_sd},
                          {"kappa", st.calib_diff.kappa}};
  if (st.use_nhar) {
    header["nhar"] = {{"hidden", st.nhar_raw.hidden()},
                      {"trim", st.nhar_raw.trim}};
  }
  const std::string body = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write state file: " + path);
  out.write("PNRT", 4);
  const std::uint32_t len = static_cast<std::uint32_t>(body.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));

  detail::write_doubles(out, st.betas.data(), static_cast<std::size_t>(st.betas.size()));
  detail::write_doubles(out, st.buffer.data(), static_cast<std::size_t>(st.buffer.size()));
  detail::write_doubles(out, st.scale_raw.data(), static_cast<std::size_t>(st.scale_raw.size()));
  if (st.diff_enabled)
    detail::write_doubles(out, st.scale_diff.data(), static_cast<std::size_t>(st.scale_diff.size()));
  if (st.use_nhar) {
    detail::write_nhar_blobs(out, st.nhar_raw);
    if (st.diff_enabled) detail::write_nhar_blobs(out, st.nhar_diff);
  } else {
    detail::write_doubles(out, st.har_raw_coeffs.data(),
                          static_cast<std::size_t>(st.har_raw_coeffs.size()));
    if (st.diff_enabled)
      detail::write_doubles(out, st.har_diff_coeffs.data(),
                            static_cast<std::size_t>(st.har_diff_coeffs.size()));
  }
}

inline RealtimeState load_realtime_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open state file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PNRT", 4) != 0)
    throw DataError("not a realtime state file: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string body(len, '\0');
  in.read(body.data(), len);
  if (!in) throw DataError("truncated state header: " + path);
  const auto header = nlohmann::json::parse(body);
  if (header.at("version").get<int>() != 1)
    throw DataError("unsupported state version");

  RealtimeState st;
  const Eigen::Index d = header.at("n_series").get<Eigen::Index>();
  st.design.trend_order = header.at("design").at("trend_order").get<int>();
  st.design.frequencies =
      header.at("design").at("frequencies").get<std::vector<double>>();
  st.observed = header.at("observed").get<Eigen::Index>();
  st.last_date = header.at("last_date").get<int>();
  st.series_ids = header.at("series_ids").get<std::vector<std::string>>();
  st.use_nhar = header.at("use_nhar").get<bool>();
  st.diff_enabled = header.at("diff_enabled").get<bool>();
  st.har_spec = detail::har_spec_from_json(header.at("har_spec"));
  st.calib_raw = {header.at("calib_raw").at("mean").get<double>(),
                  header.at("calib_raw").at("sd").get<double>(),
                  header.at("calib_raw").at("kappa").get<double>()};
  st.calib_diff = {header.at("calib_diff").at("mean").get<double>(),
                   header.at("calib_diff").at("sd").get<double>(),
                   header.at("calib_diff").at("kappa").get<double>()};

  st.betas.resize(st.design.width(), d);
  st.buffer.resize(RealtimeState::kBufferRows, d);
  st.scale_raw.resize(d);
  detail::read_doubles(in, st.betas.data(), static_cast<std::size_t>(st.betas.size()));
  detail::read_doubles(in, st.buffer.data(), static_cast<std::size_t>(st.buffer.size()));
  detail::read_doubles(in, st.scale_raw.data(), static_cast<std::size_t>(st.scale_raw.size()));
  if (st.diff_enabled) {
    st.scale_diff.resize(d);
    detail::read_doubles(in, st.scale_diff.data(), static_cast<std::size_t>(st.scale_diff.size()));
  }
  const Eigen::Index k = st.har_spec.width();
  if (st.use_nhar) {
    const Eigen::Index hidden = header.at("nhar").at("hidden").get<Eigen::Index>();
    st.nhar_raw.spec = st.har_spec;
    st.nhar_raw.trim = header.at("nhar").at("trim").get<double>();
    detail::read_nhar_blobs(in, st.nhar_raw, hidden, k);
    if (st.diff_enabled) {
      st.nhar_diff.spec = st.har_spec;
      st.nhar_diff.trim = st.nhar_raw.trim;
      detail::read_nhar_blobs(in, st.nhar_diff, hidden, k);
    }
  } else {
    st.har_raw_coeffs.resize(k, d);
    detail::read_doubles(in, st.har_raw_coeffs.data(),
                         static_cast<std::size_t>(st.har_raw_coeffs.size()));
    if (st.diff_enabled) {
      st.har_diff_coeffs.resize(k, d);
      detail::read_doubles(in, st.har_diff_coeffs.data(),
                           static_cast<std::size_t>(st.har_diff_coeffs.size()));
    }
  }
  return st;
}

}  // namespace panomaly
