#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "panomaly/bench.hpp"
#include "panomaly/cluster.hpp"
#include "panomaly/detect.hpp"
#include "panomaly/dgp.hpp"
#include "panomaly/io.hpp"
#include "panomaly/panel.hpp"
#include "panomaly/scatter.hpp"
#include "panomaly/trend.hpp"
#include "panomaly/typology.hpp"

namespace panomaly {

/// FNV-1a over file bytes; used only for change detection in the manifest.
inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

struct PipelineConfig {
  // simulate
  Eigen::Index sim_d = 50;
  Eigen::Index sim_n = 200;
  double sim_fraction = 0.2;
  OutlierKind sim_kind = OutlierKind::Ao;
  double sim_delta = 4.0;
  Eigen::Index sim_tau = 100;
  // fit
  TrendCycleSpec design;
  double h_fraction = 0.75;
  int lte_subsets = 500;
  // scatter / detect
  ScatterMethod scatter_method = ScatterMethod::Com;
  ThresholdMethod threshold = ThresholdMethod::Quantile;
  double quantile_k = 0.9975;
  // cluster
  Eigen::Index cluster_k = 5;
  int cluster_restarts = 50;
  Eigen::Index elbow_k_max = 8;
  // global
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir = "out";

  nlohmann::json to_json() const {
    return {{"sim_d", sim_d}, {"sim_n", sim_n}, {"sim_fraction", sim_fraction},
            {"sim_kind", to_string(sim_kind)}, {"sim_delta", sim_delta},
            {"sim_tau", sim_tau}, {"trend_order", design.trend_order},
            {"frequencies", design.frequencies}, {"h_fraction", h_fraction},
            {"lte_subsets", lte_subsets},
            {"scatter_method", to_string(scatter_method)},
            {"threshold", static_cast<int>(threshold)},
            {"quantile_k", quantile_k}, {"cluster_k", cluster_k},
            {"cluster_restarts", cluster_restarts}, {"elbow_k_max", elbow_k_max},
            {"seed", seed}};
  }
};

struct StageRecord {
  std::string name;
  std::string status;  // done | cached | failed | skipped
  std::map<std::string, std::string> inputs;   // path -> hash
  std::map<std::string, std::string> outputs;  // path -> hash
  std::uint64_t seed = 0;
  std::string error;
};

struct Manifest {
  std::string config_hash;
  std::vector<StageRecord> stages;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
      nlohmann::json js{{"name", s.name}, {"status", s.status},
                        {"seed", s.seed}, {"inputs", s.inputs},
                        {"outputs", s.outputs}};
      if (!s.error.empty()) js["error"] = s.error;
      j["stages"].push_back(js);
    }
    return j;
  }
};

namespace detail {

inline std::optional<Manifest> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  nlohmann::json j;
  try {
    in >> j;
  } catch (...) {
    return std::nullopt;
  }
  Manifest m;
  m.config_hash = j.value("config_hash", "");
  for (const auto& js : j.value("stages", nlohmann::json::array())) {
    StageRecord s;
    s.name = js.value("name", "");
    s.status = js.value("status", "");
    s.seed = js.value("seed", std::uint64_t{0});
    if (js.contains("inputs"))
      s.inputs = js["inputs"].get<std::map<std::string, std::string>>();
    if (js.contains("outputs"))
      s.outputs = js["outputs"].get<std::map<std::string, std::string>>();
    m.stages.push_back(std::move(s));
  }
  return m;
}

}  // namespace detail

/// Runs the staged pipeline simulate -> fit -> scatter -> detect -> classify
/// -> cluster under out_dir. Stages whose inputs are hash-unchanged against
/// the previous manifest are skipped; a failure halts everything downstream.
inline Manifest run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto path = [&](const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
  };
  const std::string manifest_path = path("manifest.json");
  const auto previous = detail::load_manifest(manifest_path);

  Manifest manifest;
  {
    const std::string dump = cfg.to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) { h ^= c; h *= 0x100000001b3ull; }
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    manifest.config_hash = hex;
  }
  const bool config_unchanged =
      previous && previous->config_hash == manifest.config_hash;

  bool halted = false;
  auto run_stage = [&](const std::string& name,
                       const std::vector<std::string>& inputs,
                       const std::vector<std::string>& outputs,
                       std::uint64_t stage_seed,
                       const std::function<void()>& body) {
    StageRecord rec;
    rec.name = name;
    rec.seed = stage_seed;
    if (halted) {
      rec.status = "skipped";
      manifest.stages.push_back(std::move(rec));
      return;
    }
    for (const auto& in : inputs) rec.inputs[in] = hash_file(in);

    if (config_unchanged) {
      const StageRecord* prev_rec = nullptr;
      for (const auto& s : previous->stages)
        if (s.name == name && (s.status == "done" || s.status == "cached"))
          prev_rec = &s;
      if (prev_rec && prev_rec->inputs == rec.inputs) {
        bool outputs_ok = !prev_rec->outputs.empty() || outputs.empty();
        for (const auto& [out, hash] : prev_rec->outputs) {
          if (!fs::exists(out) || hash_file(out) != hash) {
            outputs_ok = false;
            break;
          }
        }
        if (outputs_ok) {
          rec.outputs = prev_rec->outputs;
          rec.status = "cached";
          manifest.stages.push_back(std::move(rec));
          return;
        }
      }
    }

    try {
      body();
      for (const auto& out : outputs) rec.outputs[out] = hash_file(out);
      rec.status = "done";
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
      halted = true;
    }
    manifest.stages.push_back(std::move(rec));
  };

  // --- simulate ---
  run_stage("simulate", {}, {path("panel.csv"), path("truth.csv")},
            split_seed(cfg.seed, 1), [&] {
    DgpParams params;
    params.seed = split_seed(cfg.seed, 1);
    Panel clean = simulate_dgp(params, cfg.sim_d, cfg.sim_n, cfg.threads);
    std::vector<OutlierSpec> specs{{cfg.sim_kind, cfg.sim_tau, cfg.sim_delta, {}}};
    auto injected = inject_outliers(clean, specs, cfg.sim_fraction);
    save_panel(injected.panel, path("panel.csv"));
    save_ground_truth(injected.truth, injected.panel, path("truth.csv"));
  });

  // --- fit ---
  run_stage("fit", {path("panel.csv")},
            {path("residuals.csv"), path("coeffs.csv")},
            split_seed(cfg.seed, 2), [&] {
    Panel panel = load_panel(path("panel.csv"));
    PanelFitOptions opts;
    opts.h_fraction = cfg.h_fraction;
    opts.n_subsets = cfg.lte_subsets;
    opts.seed = split_seed(cfg.seed, 2);
    opts.threads = cfg.threads;
    auto fit = fit_panel(panel, cfg.design, opts);
    save_panel(fit.residuals, path("residuals.csv"));
    save_coeffs(fit.fits, panel.series_ids, path("coeffs.csv"));
  });

  // --- scatter ---
  run_stage("scatter", {path("residuals.csv")}, {path("sigma.csv")},
            0, [&] {
    Panel residuals = load_panel(path("residuals.csv"));
    ScatterEstimate est;
    switch (cfg.scatter_method) {
      case ScatterMethod::Ogk: est = ogk_scatter(residuals.values, cfg.threads); break;
      case ScatterMethod::Mrcd: est = mrcd_scatter(residuals.values, {}, cfg.threads); break;
      case ScatterMethod::Com: est = com_scatter(residuals.values, 2, cfg.threads); break;
      case ScatterMethod::Feau:
        throw DataError("pipeline scatter stage expects ogk, mrcd or com");
    }
    save_sigma(est, path("sigma.csv"));
  });

  // --- detect ---
  run_stage("detect", {path("residuals.csv"), path("sigma.csv")},
            {path("report.csv")}, 0, [&] {
    Panel residuals = load_panel(path("residuals.csv"));
    const Vector diag = load_sigma_diagonal(path("sigma.csv"));
    auto raw_scores = cellwise_scores(residuals.values, diag, ScoreLevel::Raw);
    Panel diff = first_difference(residuals);
    const auto diff_est = cfg.scatter_method == ScatterMethod::Ogk
                              ? ogk_scatter(diff.values, cfg.threads)
                              : cfg.scatter_method == ScatterMethod::Mrcd
                                    ? mrcd_scatter(diff.values, {}, cfg.threads)
                                    : com_scatter(diff.values, 2, cfg.threads);
    auto diff_scores = cellwise_scores(diff.values, diff_est.sigma.diagonal(),
                                       ScoreLevel::Differenced);
    const auto span_of = [](const ScoreMatrix& s) {
      return std::span<const double>{s.scores.data(),
                                     static_cast<std::size_t>(s.scores.size())};
    };
    auto raw_th = compute_threshold(span_of(raw_scores), cfg.threshold, cfg.quantile_k);
    auto diff_th = compute_threshold(span_of(diff_scores), cfg.threshold, cfg.quantile_k);
    auto report = flag_and_merge(raw_scores, raw_th, diff_scores, diff_th,
                                 to_string(cfg.scatter_method));
    save_report(report, residuals, path("report.csv"));
  });

  // --- classify ---
  run_stage("classify", {path("report.csv"), path("residuals.csv"), path("panel.csv")},
            {path("report_classified.csv")}, split_seed(cfg.seed, 3), [&] {
    Panel panel = load_panel(path("panel.csv"));
    Panel residuals = load_panel(path("residuals.csv"));
    auto report = load_report(path("report.csv"), residuals);
    LteOptions lte;
    lte.n_subsets = cfg.lte_subsets;
    lte.seed = split_seed(cfg.seed, 3);
    classify_events(report, residuals, panel, cfg.design, {}, lte, cfg.threads);
    save_report(report, residuals, path("report_classified.csv"), true);
  });

  // --- cluster ---
  run_stage("cluster",
            {path("residuals.csv"), path("coeffs.csv"), path("report_classified.csv")},
            {path("labels.csv"), path("overlap.csv"), path("elbow.csv")},
            split_seed(cfg.seed, 4), [&] {
    Panel residuals = load_panel(path("residuals.csv"));
    auto fits = load_coeffs(path("coeffs.csv"));
    auto report = load_report(path("report_classified.csv"), residuals);
    const Matrix F = feature_matrix(residuals, fits, cfg.design, cfg.threads);
    auto model = kmeans(F, cfg.cluster_k, cfg.cluster_restarts,
                        split_seed(cfg.seed, 4), 300, cfg.threads);
    {
      std::ofstream out(path("labels.csv"));
      out << "series_id,cluster\n";
      for (Eigen::Index i = 0; i < residuals.n_series(); ++i)
        out << residuals.series_ids[static_cast<std::size_t>(i)] << ','
            << (model.labels[static_cast<std::size_t>(i)] + 1) << '\n';
    }
    save_overlap_report(overlap_report(F, model, report), path("overlap.csv"));
    const auto wss = elbow_curve(F, cfg.elbow_k_max, cfg.cluster_restarts,
                                 split_seed(cfg.seed, 5), cfg.threads);
    {
      std::ofstream out(path("elbow.csv"));
      out << "k,wss\n";
      char buf[32];
      for (std::size_t k = 0; k < wss.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.10g", wss[k]);
        out << (k + 1) << ',' << buf << '\n';
      }
    }
  });

  std::ofstream out(manifest_path);
  out << manifest.to_json().dump(2) << '\n';
  return manifest;
}

}  // namespace panomaly
