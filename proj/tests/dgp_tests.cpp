#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "panomaly/dgp.hpp"
#include "panomaly/io.hpp"

using namespace panomaly;

namespace {

DgpParams zero_params() {
  DgpParams p;
  p.base_var_level = 0.0;
  p.base_var_slope = 0.0;
  p.var_cycle_noise = 0.0;
  p.seasonal_base = 0.0;
  p.noise_var = 0.0;
  return p;
}

double autocovariance(std::span<const double> x, int lag) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double acc = 0.0;
  for (std::size_t t = static_cast<std::size_t>(lag); t < x.size(); ++t)
    acc += (x[t] - mean) * (x[t - static_cast<std::size_t>(lag)] - mean);
  return acc / double(x.size() - static_cast<std::size_t>(lag));
}

}  // namespace

TEST_CASE("all variances zero gives the zero panel") {
  const Panel p = simulate_dgp(zero_params(), 5, 60);
  CHECK(p.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("same seed reproduces the panel bit for bit") {
  DgpParams params;
  params.seed = 2024;
  const Panel a = simulate_dgp(params, 12, 150);
  const Panel b = simulate_dgp(params, 12, 150);
  CHECK(a.values == b.values);
}

TEST_CASE("seasonal component repeats every 30 days exactly") {
  DgpParams p = zero_params();
  p.seasonal_base = 100.0;
  p.seed = 5;
  const Panel panel = simulate_dgp(p, 3, 120);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index t = 0; t + 30 < 120; ++t)
      CHECK(panel.values(t, i) == panel.values(t + 30, i));
}

TEST_CASE("monthly periodicity dominates the sample autocorrelation") {
  DgpParams params;
  params.seed = 31;
  const Panel p = simulate_dgp(params, 1, 90);
  const auto x = p.series(0);
  CHECK(autocovariance(x, 30) > autocovariance(x, 13));
}

TEST_CASE("invalid control points are rejected") {
  DgpParams p;
  p.control_points = {0.0, 15.0, 14.0, 30.0};
  CHECK_THROWS_AS((void)simulate_dgp(p, 1, 40), DataError);
  DgpParams q;
  q.control_points = {0.0, 14.0, 15.0, 31.0};
  CHECK_THROWS_AS((void)simulate_dgp(q, 1, 40), DataError);
}

TEST_CASE("zero-magnitude injection changes nothing but is recorded") {
  DgpParams params;
  params.seed = 8;
  const Panel p = simulate_dgp(params, 10, 100);
  std::vector<OutlierSpec> specs{{OutlierKind::Ao, 50, 0.0, {}}};
  const auto result = inject_outliers(p, specs, 0.5);
  CHECK(result.panel.values == p.values);
  REQUIRE(result.truth.entries.size() == 5);
  for (const auto& e : result.truth.entries) CHECK(e.magnitude == 0.0);
}

TEST_CASE("additive outlier on a zero panel uses unit scale") {
  Panel p;
  p.values = Matrix::Zero(100, 2);
  p.series_ids = {"a", "b"};
  p.dates = default_calendar(100);
  std::vector<OutlierSpec> specs{{OutlierKind::Ao, 80, 1.5, {}}};
  const auto result = inject_outliers(p, specs, 0.5);
  CHECK(result.panel.values(79, 0) == 1.5);
  CHECK(result.panel.values.col(0).cwiseAbs().sum() == 1.5);  // single cell
  CHECK(result.panel.values.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("injection is purely additive and the level shift integrates the pulse") {
  DgpParams params;
  params.seed = 77;
  const Panel p = simulate_dgp(params, 6, 120);
  std::vector<OutlierSpec> ao{{OutlierKind::Ao, 40, 2.0, {}}};
  std::vector<OutlierSpec> lso{{OutlierKind::Lso, 40, 2.0, {}}};
  const auto r_ao = inject_outliers(p, ao, 0.5);
  const auto r_lso = inject_outliers(p, lso, 0.5);

  const Matrix sig_ao = r_ao.panel.values - p.values;
  const Matrix sig_lso = r_lso.panel.values - p.values;

  // AO signature: a single nonzero cell per contaminated series.
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(sig_ao.col(i).cwiseAbs().sum() == std::fabs(sig_ao(39, i)));
    // LSO = running sum of the AO signature.
    double acc = 0.0;
    for (Eigen::Index t = 0; t < 120; ++t) {
      acc += sig_ao(t, i);
      CHECK(sig_lso(t, i) == doctest::Approx(acc).epsilon(1e-15));
    }
  }
  for (Eigen::Index i = 3; i < 6; ++i) {
    CHECK(sig_ao.col(i).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sig_lso.col(i).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("decaying signature inverts the lag polynomial") {
  for (const std::vector<double> omegas :
       {std::vector<double>{0.6}, std::vector<double>{0.5, 0.3},
        std::vector<double>{0.7, 0.2, 0.05}}) {
    const auto psi = impulse_response(omegas, 200);
    REQUIRE(psi.size() >= omegas.size() + 1);
    // Convolving psi with (1, -w1, ..., -wp) must give the unit pulse.
    for (std::size_t k = 0; k < psi.size(); ++k) {
      double acc = psi[k];
      for (std::size_t j = 1; j <= std::min(k, omegas.size()); ++j)
        acc -= omegas[j - 1] * psi[k - j];
      CHECK(acc == doctest::Approx(k == 0 ? 1.0 : 0.0).epsilon(1e-12));
    }
    // Tail truncation happened below the documented magnitude.
    CHECK(std::fabs(psi.back()) >= 1e-12);
  }
}

TEST_CASE("decaying injection matches the impulse response cell by cell") {
  Panel p;
  p.values = Matrix::Zero(60, 1);
  p.series_ids = {"a"};
  p.dates = default_calendar(60);
  std::vector<OutlierSpec> specs{{OutlierKind::Decaying, 10, 2.0, {0.5, 0.25}}};
  const auto result = inject_outliers(p, specs, 1.0);
  const auto psi = impulse_response({0.5, 0.25}, 51);
  for (std::size_t k = 0; k < psi.size(); ++k)
    CHECK(result.panel.values(9 + static_cast<Eigen::Index>(k), 0) ==
          doctest::Approx(2.0 * psi[k]).epsilon(1e-14));
}

TEST_CASE("invalid injections are rejected") {
  Panel p;
  p.values = Matrix::Zero(50, 1);
  p.series_ids = {"a"};
  p.dates = default_calendar(50);
  std::vector<OutlierSpec> late{{OutlierKind::Ao, 51, 1.0, {}}};
  CHECK_THROWS_AS((void)inject_outliers(p, late, 1.0), DataError);
  std::vector<OutlierSpec> any{{OutlierKind::Ao, 5, 1.0, {}}};
  CHECK_THROWS_AS((void)inject_outliers(p, any, 1.5), DataError);
  std::vector<OutlierSpec> rising{{OutlierKind::Decaying, 5, 1.0, {0.3, 0.6}}};
  CHECK_THROWS_AS((void)inject_outliers(p, rising, 1.0), DataError);
  std::vector<OutlierSpec> dup{{OutlierKind::Ao, 5, 1.0, {}},
                               {OutlierKind::Lso, 5, 1.0, {}}};
  CHECK_THROWS_AS((void)inject_outliers(p, dup, 1.0), DataError);
}

TEST_CASE("ground truth files round-trip") {
  DgpParams params;
  params.seed = 3;
  const Panel p = simulate_dgp(params, 8, 90);
  std::vector<OutlierSpec> specs{{OutlierKind::Lso, 33, -2.5, {}}};
  const auto result = inject_outliers(p, specs, 0.25);

  const auto dir = std::filesystem::temp_directory_path() / "panomaly_dgp_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "truth.csv").string();
  save_ground_truth(result.truth, result.panel, path);
  const auto loaded = load_ground_truth(path, result.panel);
  REQUIRE(loaded.entries.size() == result.truth.entries.size());
  for (std::size_t k = 0; k < loaded.entries.size(); ++k) {
    CHECK(loaded.entries[k].series == result.truth.entries[k].series);
    CHECK(loaded.entries[k].tau == result.truth.entries[k].tau);
    CHECK(loaded.entries[k].kind == result.truth.entries[k].kind);
    CHECK(loaded.entries[k].magnitude ==
          doctest::Approx(result.truth.entries[k].magnitude));
  }
}
