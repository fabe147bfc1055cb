#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/rng.hpp"
#include "panomaly/stats.hpp"

namespace panomaly {

// ---------------------------------------------------------------------------
// Structural DGP: local-level trend with stochastic slope, a periodic cubic
// seasonal evaluated on a 30-day cycle, and additive observation noise.
// Per-series variances are rescaled by fresh uniform draws.
// ---------------------------------------------------------------------------

struct DgpParams {
  double base_var_level = 1e-3;   // sigma^2_eps = base * phi1
  double base_var_slope = 1e-3;   // sigma^2_zeta = base * phi2
  double var_cycle_noise = 0.0;   // sigma^2_eta, constant
  double seasonal_base = 1e2;     // sigma_s = base * phi3
  double noise_var = 1.0;         // observation noise variance
  double noise_cross_corr = 0.0;  // equicorrelation of the noise term
  std::array<double, 4> control_points = {0.0, 14.0, 15.0, 30.0};
  std::uint64_t seed = 0;

  void validate() const {
    if (base_var_level < 0 || base_var_slope < 0 || var_cycle_noise < 0 ||
        seasonal_base < 0 || noise_var < 0)
      throw DataError("dgp: variances must be nonnegative");
    if (noise_cross_corr < 0 || noise_cross_corr >= 1)
      throw DataError("dgp: noise cross-correlation must be in [0, 1)");
    for (int k = 1; k < 4; ++k)
      if (!(control_points[k] > control_points[k - 1]))
        throw DataError("dgp: control points must be strictly increasing");
    if (control_points[0] < 0 || control_points[3] > 30.0)
      throw DataError("dgp: control points must lie in [0, 30]");
  }
};

namespace detail {

/// Natural cubic spline through four knots, evaluated modulo the 30-day
/// period so the seasonal path repeats exactly.
class SeasonalSpline {
 public:
  SeasonalSpline(const std::array<double, 4>& knots,
                 const std::array<double, 4>& values)
      : x_(knots), a_(values) {
    // Second derivatives from the tridiagonal natural-spline system.
    const double h0 = x_[1] - x_[0], h1 = x_[2] - x_[1], h2 = x_[3] - x_[2];
    const double d1 = 6.0 * ((a_[2] - a_[1]) / h1 - (a_[1] - a_[0]) / h0);
    const double d2 = 6.0 * ((a_[3] - a_[2]) / h2 - (a_[2] - a_[1]) / h1);
    const double b1 = 2.0 * (h0 + h1), b2 = 2.0 * (h1 + h2);
    const double det = b1 * b2 - h1 * h1;
    m_[0] = 0.0;
    m_[1] = (d1 * b2 - h1 * d2) / det;
    m_[2] = (b1 * d2 - h1 * d1) / det;
    m_[3] = 0.0;
  }

  double operator()(double t) const {
    double u = std::fmod(t, 30.0);
    if (u < 0) u += 30.0;
    u = std::clamp(u, x_[0], x_[3]);
    int seg = 0;
    if (u > x_[2]) seg = 2;
    else if (u > x_[1]) seg = 1;
    const double h = x_[seg + 1] - x_[seg];
    const double w1 = (x_[seg + 1] - u) / h, w2 = (u - x_[seg]) / h;
    return w1 * a_[seg] + w2 * a_[seg + 1] +
           ((w1 * w1 * w1 - w1) * m_[seg] + (w2 * w2 * w2 - w2) * m_[seg + 1]) *
               h * h / 6.0;
  }

 private:
  std::array<double, 4> x_;
  std::array<double, 4> a_;
  std::array<double, 4> m_{};
};

}  // namespace detail

inline Panel simulate_dgp(const DgpParams& params, Eigen::Index d,
                          Eigen::Index n, int threads = 0) {
  params.validate();
  if (d < 1 || n < 1) throw DataError("simulate_dgp: d and n must be >= 1");
  Panel panel;
  panel.values.resize(n, d);
  panel.series_ids.resize(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i)
    panel.series_ids[static_cast<std::size_t>(i)] = "s" + std::to_string(i);
  panel.dates = default_calendar(n);
  panel.layout = PanelLayout::Raw;

  const double rho = params.noise_cross_corr;

  parallel_for(static_cast<std::size_t>(d), [&](std::size_t i) {
    StdRng rng = make_rng(params.seed, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const double phi1 = unif(rng), phi2 = unif(rng), phi3 = unif(rng),
                 phi4 = unif(rng), phi5 = unif(rng);
    const double sd_level = std::sqrt(params.base_var_level * phi1);
    const double sd_slope = std::sqrt(params.base_var_slope * phi2);
    const double sd_cycle = std::sqrt(params.var_cycle_noise);
    const double sigma_s = params.seasonal_base * phi3;
    const double sd_noise = std::sqrt(params.noise_var * (1.0 - rho));
    const detail::SeasonalSpline season(
        params.control_points,
        {sigma_s * phi4, sigma_s * phi4, sigma_s * phi5, sigma_s * phi5});

    double level = 0.0, slope = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double e_level = normal(rng), e_slope = normal(rng),
                   e_cycle = normal(rng), e_obs = normal(rng);
      level += slope + sd_level * e_level;
      slope += sd_slope * e_slope;
      const double cycle = season(static_cast<double>(t + 1)) + sd_cycle * e_cycle;
      panel.values(t, static_cast<Eigen::Index>(i)) =
          level + cycle + sd_noise * e_obs;
    }
  }, threads);

  if (rho > 0.0) {
    StdRng rng = make_rng(params.seed, 0xC0FFEEull << 20);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd_common = std::sqrt(params.noise_var * rho);
    for (Eigen::Index t = 0; t < n; ++t)
      panel.values.row(t).array() += sd_common * normal(rng);
  }
  return panel;
}

// ---------------------------------------------------------------------------
// Contamination: additive outliers, level shifts, and geometrically decaying
// pulses, scaled per series by the pre-contamination sample standard
// deviation. The first ceil(fraction * d) series receive every spec.
// ---------------------------------------------------------------------------

enum class OutlierKind { Ao, Lso, Decaying };

inline const char* to_string(OutlierKind k) {
  switch (k) {
    case OutlierKind::Ao: return "ao";
    case OutlierKind::Lso: return "lso";
    case OutlierKind::Decaying: return "decay";
  }
  return "ao";
}

inline OutlierKind outlier_kind_from_string(const std::string& s) {
  if (s == "ao") return OutlierKind::Ao;
  if (s == "lso") return OutlierKind::Lso;
  if (s == "decay" || s == "decaying") return OutlierKind::Decaying;
  throw DataError("unknown outlier kind: " + s);
}

struct OutlierSpec {
  OutlierKind kind = OutlierKind::Ao;
  Eigen::Index tau = 1;  // 1-based time index
  double delta = 1.0;    // magnitude in units of the series' sample sd
  std::vector<double> omegas;  // decaying kind only

  void validate(Eigen::Index n) const {
    if (tau < 1 || tau > n) throw DataError("outlier position out of range");
    if (kind == OutlierKind::Decaying) {
      if (omegas.empty()) throw DataError("decaying outlier needs omega coefficients");
      double prev = 1.0;
      for (double w : omegas) {
        if (!(w > 0.0 && w < prev))
          throw DataError("decaying omegas must satisfy 1 > w1 > ... > wp > 0");
        prev = w;
      }
    }
  }
};

/// Power-series coefficients of 1/omega(L) with omega(L) = 1 - sum w_j L^j,
/// truncated when the coefficient magnitude drops below 1e-12.
inline std::vector<double> impulse_response(const std::vector<double>& omegas,
                                            std::size_t max_len) {
  std::vector<double> psi;
  psi.reserve(max_len);
  for (std::size_t k = 0; k < max_len; ++k) {
    double v = k == 0 ? 1.0 : 0.0;
    for (std::size_t j = 1; j <= std::min(k, omegas.size()); ++j)
      v += omegas[j - 1] * psi[k - j];
    if (k > 0 && std::fabs(v) < 1e-12) break;
    psi.push_back(v);
  }
  return psi;
}

struct GroundTruthEntry {
  Eigen::Index series = 0;
  Eigen::Index tau = 1;  // 1-based
  OutlierKind kind = OutlierKind::Ao;
  double delta = 0.0;      // multiplier in sample-sd units
  double magnitude = 0.0;  // delta * sigma_tilde, data units
};

struct GroundTruth {
  std::vector<GroundTruthEntry> entries;

  bool contains(Eigen::Index series, Eigen::Index tau) const {
    for (const auto& e : entries)
      if (e.series == series && e.tau == tau) return true;
    return false;
  }
};

struct InjectionResult {
  Panel panel;
  GroundTruth truth;
};

inline InjectionResult inject_outliers(const Panel& p,
                                       const std::vector<OutlierSpec>& specs,
                                       double fraction) {
  if (fraction < 0.0 || fraction > 1.0)
    throw DataError("contamination fraction must be in [0, 1]");
  const Eigen::Index n = p.n_obs();
  for (const auto& s : specs) s.validate(n);

  InjectionResult out;
  out.panel = p;
  const Eigen::Index contaminated = static_cast<Eigen::Index>(
      std::ceil(fraction * static_cast<double>(p.n_series())));

  for (Eigen::Index i = 0; i < contaminated; ++i) {
    double sigma = moments(p.series(i)).sd;
    if (sigma <= 0.0) sigma = 1.0;
    for (const auto& spec : specs) {
      if (out.truth.contains(i, spec.tau))
        throw DataError("duplicate outlier position for one series");
      const double magnitude = spec.delta * sigma;
      const Eigen::Index t0 = spec.tau - 1;
      switch (spec.kind) {
        case OutlierKind::Ao:
          out.panel.values(t0, i) += magnitude;
          break;
        case OutlierKind::Lso:
          for (Eigen::Index t = t0; t < n; ++t) out.panel.values(t, i) += magnitude;
          break;
        case OutlierKind::Decaying: {
          const auto psi = impulse_response(
              spec.omegas, static_cast<std::size_t>(n - t0));
          for (std::size_t k = 0; k < psi.size(); ++k)
            out.panel.values(t0 + static_cast<Eigen::Index>(k), i) +=
                magnitude * psi[k];
          break;
        }
      }
      out.truth.entries.push_back({i, spec.tau, spec.kind, spec.delta, magnitude});
    }
  }
  return out;
}

inline void save_ground_truth(const GroundTruth& truth, const Panel& panel,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ground truth file: " + path);
  out << "series_id,date,kind,delta,magnitude\n";
  char buf[32];
  for (const auto& e : truth.entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.magnitude);
    out << panel.series_ids[static_cast<std::size_t>(e.series)] << ','
        << format_date(panel.dates[static_cast<std::size_t>(e.tau - 1)]) << ','
        << to_string(e.kind) << ',' << e.delta << ',' << buf << '\n';
  }
}

}  // namespace panomaly
