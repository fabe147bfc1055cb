#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <vector>

#include "panomaly/rng.hpp"
#include "panomaly/stats.hpp"

using namespace panomaly;

TEST_CASE("median handles odd, even and single-element inputs") {
  std::vector<double> odd{3.0, 1.0, 2.0};
  CHECK(median(odd) == 2.0);
  std::vector<double> even{4.0, 1.0, 3.0, 2.0};
  CHECK(median(even) == doctest::Approx(2.5));
  std::vector<double> one{7.0};
  CHECK(median(one) == 7.0);
}

TEST_CASE("quantile interpolates linearly") {
  std::vector<double> v{1.0, 2.0, 3.0};
  CHECK(quantile(v, 0.5) == 2.0);
  CHECK(quantile(v, 1.0) == 3.0);
  CHECK(quantile(v, 0.0) == 1.0);
  std::vector<double> w{1.0, 2.0, 3.0, 4.0};
  CHECK(quantile(w, 0.25) == doctest::Approx(1.75));
}

TEST_CASE("mad matches the hand-computed example") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(mad(v) == 1.0);  // |x - 3| = {2,1,0,1,2}
  std::vector<double> c(9, 4.2);
  CHECK(mad(c) == 0.0);
}

TEST_CASE("mad is scale equivariant") {
  StdRng rng(42);
  std::normal_distribution<double> normal;
  std::vector<double> x(101);
  for (auto& v : x) v = normal(rng);
  const double base = mad(x);

  SUBCASE("exact under power-of-two scaling") {
    std::vector<double> y = x;
    for (auto& v : y) v *= 8.0;
    CHECK(mad(y) == 8.0 * base);
  }
  SUBCASE("approximate under arbitrary scaling") {
    std::vector<double> y = x;
    for (auto& v : y) v *= -3.7;
    CHECK(mad(y) == doctest::Approx(3.7 * base).epsilon(1e-12));
  }
}

TEST_CASE("tau scale is consistent at the standard normal") {
  StdRng rng(7);
  std::normal_distribution<double> normal;
  std::vector<double> x(100000);
  for (auto& v : x) v = normal(rng);
  const double tau = tau_scale(x);
  CHECK(std::fabs(tau - 1.0) < 0.05);
}

TEST_CASE("tau scale equivariance and degeneracy") {
  StdRng rng(11);
  std::normal_distribution<double> normal;
  std::vector<double> x(257);
  for (auto& v : x) v = normal(rng);
  std::vector<double> y = x;
  for (auto& v : y) v *= 16.0;
  CHECK(tau_scale(y) == doctest::Approx(16.0 * tau_scale(x)).epsilon(1e-14));

  std::vector<double> flat(31, 2.0);
  const auto r = tau_scale_full(flat);
  CHECK(r.degenerate);
  CHECK(r.scale == 0.0);
}

TEST_CASE("tau scale shrugs off a massive spike") {
  StdRng rng(13);
  std::normal_distribution<double> normal;
  std::vector<double> x(100);
  for (auto& v : x) v = normal(rng);
  const double clean = tau_scale(x);
  x[17] = 1e6;
  const double spiked = tau_scale(x);
  CHECK(std::fabs(spiked - clean) / clean < 0.25);
}

TEST_CASE("comedian identities on odd-length vectors") {
  StdRng rng(5);
  std::normal_distribution<double> normal;
  std::vector<double> x(101);
  for (auto& v : x) v = normal(rng);
  std::vector<double> neg = x;
  for (auto& v : neg) v = -v;

  const double m = mad(x);
  CHECK(comedian(x, x) == doctest::Approx(m * m).epsilon(1e-14));
  CHECK(comedian(x, neg) == doctest::Approx(-m * m).epsilon(1e-14));

  std::vector<double> short_vec{1.0, 2.0};
  CHECK_THROWS_AS((void)comedian(x, short_vec), DataError);
}

TEST_CASE("moments and iqr sanity") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(interquartile_range(v) == doctest::Approx(1.5));
  const Moments m = moments(v);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));

  StdRng rng(3);
  std::normal_distribution<double> normal;
  std::vector<double> x(200000);
  for (auto& val : x) val = normal(rng);
  const Moments mn = moments(x);
  CHECK(std::fabs(mn.skewness) < 0.05);
  CHECK(std::fabs(mn.kurtosis - 3.0) < 0.1);
}

TEST_CASE("split seeds give distinct reproducible streams") {
  CHECK(split_seed(1, 0) != split_seed(1, 1));
  CHECK(split_seed(1, 0) == split_seed(1, 0));
  SplitMix64 a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  SplitMix64 c(10);
  for (int i = 0; i < 1000; ++i) {
    const auto v = c.below(17);
    CHECK(v < 17);
  }
}
