#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "panomaly/common.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/dgp.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/scatter.hpp"
#include "panomaly/trend.hpp"

namespace panomaly {

inline void save_coeffs(const std::vector<RobustFit>& fits,
                        const std::vector<std::string>& ids,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write coefficients file: " + path);
  const Eigen::Index p = fits.empty() ? 0 : fits.front().beta.size();
  out << "series_id";
  for (Eigen::Index j = 0; j < p; ++j) out << ",beta" << j;
  out << ",h,objective,ok\n";
  char buf[32];
  for (std::size_t i = 0; i < fits.size(); ++i) {
    out << ids[i];
    for (Eigen::Index j = 0; j < p; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", fits[i].beta[j]);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", fits[i].objective);
    out << ',' << fits[i].h << ',' << buf << ',' << (fits[i].ok ? 1 : 0) << '\n';
  }
}

inline std::vector<RobustFit> load_coeffs(const std::string& path,
                                          std::vector<std::string>* ids = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open coefficients file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty coefficients file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "series_id")
    throw DataError("bad coefficients header: " + path);
  const std::size_t p = header.size() - 4;
  std::vector<RobustFit> fits;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("bad coefficients row: " + line);
    RobustFit fit;
    fit.beta.resize(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j)
      fit.beta[static_cast<Eigen::Index>(j)] = std::stod(f[1 + j]);
    fit.h = static_cast<Eigen::Index>(std::stol(f[1 + p]));
    fit.objective = std::stod(f[2 + p]);
    fit.ok = f[3 + p] == "1";
    if (ids) ids->push_back(f[0]);
    fits.push_back(std::move(fit));
  }
  return fits;
}

/// Dense CSV for d <= max_dense (or when forced); otherwise the diagonal
/// only, marked by the header. Both forms can feed cellwise scoring.
inline void save_sigma(const ScatterEstimate& est, const std::string& path,
                       bool force_full = false, Eigen::Index max_dense = 2000) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scatter file: " + path);
  const Eigen::Index d = est.sigma.rows();
  char buf[32];
  if (force_full || d <= max_dense) {
    out << "sigma_dense," << d << ',' << to_string(est.method) << '\n';
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", est.sigma(i, j));
        out << (j ? "," : "") << buf;
      }
      out << '\n';
    }
  } else {
    out << "sigma_diag," << d << ',' << to_string(est.method) << '\n';
    for (Eigen::Index i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", est.sigma(i, i));
      out << buf << '\n';
    }
  }
}

inline Vector load_sigma_diagonal(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scatter file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty scatter file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw DataError("bad scatter header: " + path);
  const Eigen::Index d = static_cast<Eigen::Index>(std::stol(header[1]));
  Vector diag(d);
  if (header[0] == "sigma_dense") {
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!std::getline(in, line)) throw DataError("truncated scatter file");
      const auto f = detail::split_csv_line(line);
      if (static_cast<Eigen::Index>(f.size()) != d)
        throw DataError("bad scatter row width");
      diag[i] = std::stod(f[static_cast<std::size_t>(i)]);
    }
  } else if (header[0] == "sigma_diag") {
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!std::getline(in, line)) throw DataError("truncated scatter file");
      diag[i] = std::stod(detail::trim(line));
    }
  } else {
    throw DataError("unknown scatter format: " + header[0]);
  }
  return diag;
}

inline OutlierReport load_report(const std::string& path, const Panel& panel) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report file: " + path);
  std::map<std::string, Eigen::Index> id_index;
  for (std::size_t i = 0; i < panel.series_ids.size(); ++i)
    id_index[panel.series_ids[i]] = static_cast<Eigen::Index>(i);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty report file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 6) throw DataError("bad report header: " + path);
  const bool typed = header.size() >= 9;
  OutlierReport report;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    OutlierEvent e;
    const auto it = id_index.find(f[0]);
    if (it == id_index.end())
      throw DataError("report series id not in panel: " + f[0]);
    e.series = it->second;
    const int date = parse_date(f[1]);
    e.time = date - panel.dates.front();
    if (e.time < 0 || e.time >= panel.n_obs())
      throw DataError("report date outside panel range: " + f[1]);
    e.score = std::stod(f[2]);
    e.level = f[3];
    e.kappa = std::stod(f[4]);
    e.method = f[5];
    if (typed) {
      if (f[6] == "ao") e.typology = Typology::Ao;
      else if (f[6] == "lso") e.typology = Typology::Lso;
      e.sign = f[7] == "+" ? 1 : f[7] == "-" ? -1 : 0;
      e.delta_hat = std::stod(f[8]);
    }
    report.events.push_back(std::move(e));
  }
  return report;
}

inline GroundTruth load_ground_truth(const std::string& path, const Panel& panel) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth file: " + path);
  std::map<std::string, Eigen::Index> id_index;
  for (std::size_t i = 0; i < panel.series_ids.size(); ++i)
    id_index[panel.series_ids[i]] = static_cast<Eigen::Index>(i);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty ground truth file");
  GroundTruth truth;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < 5) throw DataError("bad ground truth row: " + line);
    GroundTruthEntry e;
    const auto it = id_index.find(f[0]);
    if (it == id_index.end())
      throw DataError("truth series id not in panel: " + f[0]);
    e.series = it->second;
    e.tau = parse_date(f[1]) - panel.dates.front() + 1;
    e.kind = outlier_kind_from_string(f[2]);
    e.delta = std::stod(f[3]);
    e.magnitude = std::stod(f[4]);
    truth.entries.push_back(e);
  }
  return truth;
}

}  // namespace panomaly
