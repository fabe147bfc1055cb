#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <vector>

#include "panomaly/dgp.hpp"
#include "panomaly/rng.hpp"
#include "panomaly/trend.hpp"

using namespace panomaly;

TEST_CASE("design matrix basics") {
  TrendCycleSpec linear;
  linear.trend_order = 1;
  linear.frequencies = {};
  const Matrix X = build_design(3, linear);
  REQUIRE(X.rows() == 3);
  REQUIRE(X.cols() == 2);
  CHECK(X(0, 0) == 1.0); CHECK(X(0, 1) == 1.0);
  CHECK(X(1, 0) == 1.0); CHECK(X(1, 1) == 2.0);
  CHECK(X(2, 0) == 1.0); CHECK(X(2, 1) == 3.0);

  TrendCycleSpec full;  // defaults: quadratic with weekly+monthly harmonics
  CHECK(full.width() == 7);
  const Matrix F = build_design(40, full);
  REQUIRE(F.cols() == 7);
  for (Eigen::Index t = 0; t < 40; ++t) {
    const double c = F(t, 3), s = F(t, 4);
    CHECK(c * c + s * s == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS((void)build_design(5, full), DataError);
}

TEST_CASE("clean line is recovered to machine precision") {
  TrendCycleSpec spec;
  spec.trend_order = 1;
  spec.frequencies = {};
  const Eigen::Index n = 20;
  const Matrix X = build_design(n, spec);
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) y[t] = 2.0 + 3.0 * double(t + 1);
  const auto fit = lte_fit(y, X, default_trim_count(n), {100, 17, 1});
  CHECK(fit.beta[0] == doctest::Approx(2.0).epsilon(1e-11));
  CHECK(fit.beta[1] == doctest::Approx(3.0).epsilon(1e-11));
  CHECK(fit.objective == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("20 percent spikes do not move the trimmed fit but wreck OLS") {
  TrendCycleSpec spec;
  spec.trend_order = 1;
  spec.frequencies = {};
  const Eigen::Index n = 100;
  const Matrix X = build_design(n, spec);
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) y[t] = 2.0 + 3.0 * double(t + 1);
  SplitMix64 rng(4);
  for (int k = 0; k < 20; ++k)
    y[static_cast<Eigen::Index>(rng.below(100))] += 100.0;

  const auto fit = lte_fit(y, X, default_trim_count(n), {500, 23, 1});
  CHECK(std::fabs(fit.beta[0] - 2.0) < 1e-6);
  CHECK(std::fabs(fit.beta[1] - 3.0) < 1e-6);

  const Vector ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK(std::fabs(ols[0] - 2.0) + std::fabs(ols[1] - 3.0) > 1.0);
}

namespace {

/// Exhaustive LTS oracle: minimum over every h-subset of (OLS on the subset,
/// then the sum of the h smallest squared residuals over all rows).
double lts_oracle(const Vector& y, const Matrix& X, Eigen::Index h) {
  const Eigen::Index n = X.rows();
  std::vector<Eigen::Index> subset(static_cast<std::size_t>(h));
  std::vector<bool> choose(static_cast<std::size_t>(n), false);
  std::fill(choose.begin(), choose.begin() + h, true);
  double best = std::numeric_limits<double>::infinity();
  do {
    Eigen::Index k = 0;
    Matrix Xs(h, X.cols());
    Vector ys(h);
    for (Eigen::Index i = 0; i < n; ++i)
      if (choose[static_cast<std::size_t>(i)]) {
        Xs.row(k) = X.row(i);
        ys[k] = y[i];
        ++k;
      }
    const Vector beta = (Xs.transpose() * Xs).ldlt().solve(Xs.transpose() * ys);
    Vector r2 = (y - X * beta).array().square();
    std::sort(r2.data(), r2.data() + n);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < h; ++j) ss += r2[j];
    best = std::min(best, ss);
  } while (std::prev_permutation(choose.begin(), choose.end()));
  return best;
}

}  // namespace

TEST_CASE("trimmed objective sits within 1 percent of the exhaustive oracle") {
  TrendCycleSpec spec;
  spec.trend_order = 1;
  spec.frequencies = {};
  const Eigen::Index n = 12, h = 9;
  const Matrix X = build_design(n, spec);
  StdRng rng(99);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<Eigen::Index> pos(0, n - 1);

  for (int trial = 0; trial < 100; ++trial) {
    Vector y(n);
    for (Eigen::Index t = 0; t < n; ++t)
      y[t] = 1.0 + 0.3 * double(t + 1) + normal(rng);
    y[pos(rng)] += 25.0;
    y[pos(rng)] -= 40.0;

    const double oracle = lts_oracle(y, X, h);
    const auto fit = lte_fit(y, X, h, {500, static_cast<std::uint64_t>(trial), 1});
    CHECK(fit.objective >= oracle * (1.0 - 1e-9));
    CHECK(fit.objective <= oracle * 1.01);
  }
}

TEST_CASE("best objective is non-increasing in the subset budget") {
  TrendCycleSpec spec;
  const Eigen::Index n = 80;
  const Matrix X = build_design(n, spec);
  StdRng rng(5);
  std::normal_distribution<double> normal;
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) y[t] = 5.0 + 0.1 * double(t) + normal(rng);
  y[10] += 50.0;

  double last = std::numeric_limits<double>::infinity();
  for (int budget : {5, 10, 25, 50, 100, 200}) {
    const auto fit = lte_fit(y, X, default_trim_count(n), {budget, 77, 1});
    CHECK(fit.objective <= last + 1e-12);
    last = fit.objective;
  }
}

TEST_CASE("adding a constant shifts only the intercept") {
  TrendCycleSpec spec;
  const Eigen::Index n = 120;
  const Matrix X = build_design(n, spec);
  StdRng rng(6);
  std::normal_distribution<double> normal;
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t)
    y[t] = 1.0 + 0.05 * double(t) + 0.5 * normal(rng);
  y[30] += 20.0;

  const LteOptions opts{200, 31, 1};
  const auto base = lte_fit(y, X, default_trim_count(n), opts);
  const auto shifted = lte_fit(Vector(y.array() + 100.0), X,
                               default_trim_count(n), opts);
  CHECK(shifted.beta[0] - base.beta[0] == doctest::Approx(100.0).epsilon(1e-8));
  for (Eigen::Index j = 1; j < X.cols(); ++j)
    CHECK(shifted.beta[j] == doctest::Approx(base.beta[j]).epsilon(1e-7));
  CHECK((shifted.residuals - base.residuals).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("stored residuals and objective are self-consistent") {
  TrendCycleSpec spec;
  const Eigen::Index n = 90;
  const Matrix X = build_design(n, spec);
  StdRng rng(8);
  std::normal_distribution<double> normal;
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) y[t] = normal(rng) * 3.0;

  const auto fit = lte_fit(y, X, default_trim_count(n), {150, 3, 1});
  const Vector recomputed = y - X * fit.beta;
  CHECK(recomputed == fit.residuals);  // bit-exact by construction

  Vector r2 = fit.residuals.array().square();
  std::sort(r2.data(), r2.data() + n);
  double ss = 0.0;
  for (Eigen::Index j = 0; j < fit.h; ++j) ss += r2[j];
  CHECK(fit.objective == doctest::Approx(ss).epsilon(1e-12));
}

TEST_CASE("huge outliers leave the trimmed objective at the noise level") {
  TrendCycleSpec spec;
  spec.trend_order = 1;
  spec.frequencies = {};
  const Eigen::Index n = 200;
  const Matrix X = build_design(n, spec);
  StdRng rng(14);
  std::normal_distribution<double> normal(0.0, 0.1);
  Vector y(n);
  for (Eigen::Index t = 0; t < n; ++t) y[t] = 1.0 + 0.5 * double(t + 1) + normal(rng);
  SplitMix64 pick(2);
  for (int k = 0; k < 40; ++k)  // 20 percent contamination
    y[static_cast<Eigen::Index>(pick.below(200))] += 1e6;

  const auto fit = lte_fit(y, X, default_trim_count(n), {500, 12, 1});
  CHECK(fit.objective < double(fit.h) * 0.25);
}

TEST_CASE("error paths: h too small and singular designs") {
  TrendCycleSpec spec;
  spec.trend_order = 1;
  spec.frequencies = {};
  const Matrix X = build_design(30, spec);
  Vector y = Vector::Zero(30);
  CHECK_THROWS_AS((void)lte_fit(y, X, 1, {10, 0, 1}), NumericalError);

  Matrix degenerate(30, 2);
  for (Eigen::Index t = 0; t < 30; ++t) {
    degenerate(t, 0) = double(t + 1);
    degenerate(t, 1) = 2.0 * double(t + 1);  // collinear columns
  }
  CHECK_THROWS_AS((void)lte_fit(y, degenerate, 22, {10, 0, 1}), NumericalError);
}

TEST_CASE("panel fits are independent and reproducible") {
  TrendCycleSpec spec;
  const Eigen::Index n = 90;
  StdRng rng(44);
  std::normal_distribution<double> normal;
  Vector base(n);
  const Matrix X = build_design(n, spec);
  for (Eigen::Index t = 0; t < n; ++t)
    base[t] = 3.0 + 0.2 * double(t + 1) + normal(rng);
  base[40] += 30.0;

  Panel p;
  p.values.resize(n, 2);
  p.values.col(0) = base;
  p.values.col(1) = base;
  p.series_ids = {"a", "b"};
  p.dates = default_calendar(n);

  PanelFitOptions opts;
  opts.n_subsets = 300;
  opts.seed = 9;
  const auto result = fit_panel(p, spec, opts);
  REQUIRE(result.fits.size() == 2);
  CHECK((result.fits[0].beta - result.fits[1].beta).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(result.residuals.layout == PanelLayout::Residual);

  Panel zeros;
  zeros.values = Matrix::Zero(n, 3);
  zeros.series_ids = {"x", "y", "z"};
  zeros.dates = default_calendar(n);
  const auto zfit = fit_panel(zeros, spec, opts);
  for (const auto& f : zfit.fits) {
    CHECK(f.beta.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(f.ok);
  }
  CHECK(zfit.residuals.values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("an injected spike survives into the residuals") {
  DgpParams params;
  params.seed = 123;
  const Eigen::Index d = 50, n = 200, tau = 100;
  Panel clean = simulate_dgp(params, d, n);
  std::vector<OutlierSpec> specs{{OutlierKind::Ao, tau, 3.0, {}}};
  auto injected = inject_outliers(clean, specs, 1.0);

  TrendCycleSpec spec;
  PanelFitOptions opts;
  opts.n_subsets = 300;
  opts.seed = 5;
  const auto fit = fit_panel(injected.panel, spec, opts);

  double retained = 0.0;
  for (const auto& e : injected.truth.entries) {
    const double res = fit.residuals.values(e.tau - 1, e.series);
    retained += res / e.magnitude;
  }
  retained /= double(injected.truth.entries.size());
  CHECK(retained >= 0.8);
}
