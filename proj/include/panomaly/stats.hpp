#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "panomaly/common.hpp"

namespace panomaly {

/// Median of the values in [buf.begin(), buf.end()); scrambles buf.
/// Even length averages the two middle order statistics.
inline double median_inplace(std::vector<double>& buf) {
  const std::size_t n = buf.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = n / 2;
  std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
  double hi = buf[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(buf.begin(), buf.begin() + mid);
  return 0.5 * (lo + hi);
}

inline double median(std::span<const double> x) {
  std::vector<double> buf(x.begin(), x.end());
  return median_inplace(buf);
}

/// Raw median absolute deviation med(|x - med(x)|). No consistency factor;
/// multiply by 1.4826 where a normal-scale proxy is wanted.
inline double mad(std::span<const double> x) {
  std::vector<double> buf(x.begin(), x.end());
  const double med = median_inplace(buf);
  for (std::size_t i = 0; i < x.size(); ++i) buf[i] = std::fabs(x[i] - med);
  return median_inplace(buf);
}

constexpr double kMadNormalConsistency = 1.4826;

/// Linearly interpolated empirical quantile, position k*(m-1); k clamped
/// to [0, 1].
inline double quantile_inplace(std::vector<double>& buf, double k) {
  if (buf.empty()) return std::numeric_limits<double>::quiet_NaN();
  k = std::clamp(k, 0.0, 1.0);
  const double pos = k * static_cast<double>(buf.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  std::nth_element(buf.begin(), buf.begin() + lo, buf.end());
  const double vlo = buf[lo];
  if (lo + 1 == buf.size() || pos == static_cast<double>(lo)) return vlo;
  const double vhi = *std::min_element(buf.begin() + lo + 1, buf.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

inline double quantile(std::span<const double> x, double k) {
  std::vector<double> buf(x.begin(), x.end());
  return quantile_inplace(buf, k);
}

struct TauScaleResult {
  double scale = 0.0;
  bool degenerate = false;  // initial MAD was zero
};

/// Yohai-Zamar tau-scale with tuning constants c1 = 4.5 (weight cutoff)
/// and c2 = 3 (bounded rho). Initial scale is the raw MAD; returns 0 with
/// the degenerate flag when the MAD vanishes.
inline TauScaleResult tau_scale_full(std::span<const double> x) {
  const std::size_t n = x.size();
  TauScaleResult out;
  if (n == 0) return out;
  std::vector<double> buf(x.begin(), x.end());
  const double med = median_inplace(buf);
  for (std::size_t i = 0; i < n; ++i) buf[i] = std::fabs(x[i] - med);
  const double s0 = median_inplace(buf);
  if (s0 <= 0.0) {
    out.degenerate = true;
    return out;
  }
  constexpr double c1 = 4.5;
  constexpr double c2 = 3.0;
  double wsum = 0.0, wx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (x[i] - med) / (c1 * s0);
    const double q = 1.0 - u * u;
    if (q > 0.0) {
      const double w = q * q;
      wsum += w;
      wx += w * x[i];
    }
  }
  const double center = wsum > 0.0 ? wx / wsum : med;
  double rho_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (x[i] - center) / s0;
    rho_sum += std::min(u * u, c2 * c2);
  }
  out.scale = s0 * std::sqrt(rho_sum / static_cast<double>(n));
  return out;
}

inline double tau_scale(std::span<const double> x) {
  return tau_scale_full(x).scale;
}

/// Comedian statistic med((x - med x) .* (y - med y)).
inline double comedian(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("comedian: length mismatch");
  const double mx = median(x);
  const double my = median(y);
  std::vector<double> prod(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    prod[i] = (x[i] - mx) * (y[i] - my);
  return median_inplace(prod);
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;        // (n-1) denominator
  double skewness = 0.0;  // (n-1) sigma^3 denominator
  double kurtosis = 0.0;  // (n-1) sigma^4 denominator, not excess
};

inline Moments moments(std::span<const double> x) {
  Moments m;
  const std::size_t n = x.size();
  if (n == 0) return m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(n);
  if (n < 2) return m;
  double s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (double v : x) {
    const double d = v - m.mean;
    s2 += d * d;
    s3 += d * d * d;
    s4 += d * d * d * d;
  }
  const double denom = static_cast<double>(n - 1);
  m.sd = std::sqrt(s2 / denom);
  if (m.sd > 0.0) {
    m.skewness = s3 / (denom * m.sd * m.sd * m.sd);
    m.kurtosis = s4 / (denom * m.sd * m.sd * m.sd * m.sd);
  }
  return m;
}

inline double interquartile_range(std::span<const double> x) {
  std::vector<double> buf(x.begin(), x.end());
  std::sort(buf.begin(), buf.end());
  const double q3 = quantile_inplace(buf, 0.75);
  const double q1 = quantile_inplace(buf, 0.25);
  return q3 - q1;
}

}  // namespace panomaly
