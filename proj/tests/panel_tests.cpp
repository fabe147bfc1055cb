#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "panomaly/panel.hpp"
#include "panomaly/rng.hpp"

using namespace panomaly;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "panomaly_panel_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("wide csv loads with the expected shape") {
  const auto path = temp_file("wide.csv");
  write_file(path,
             "date,a,b,c\n"
             "2021-04-01,1,2,3\n"
             "2021-04-02,4,5,6\n"
             "2021-04-03,7,8,9\n"
             "2021-04-04,1,1,1\n"
             "2021-04-05,2,2,2\n");
  const Panel p = load_panel(path.string());
  CHECK(p.n_series() == 3);
  CHECK(p.n_obs() == 5);
  CHECK(p.values(0, 0) == 1.0);
  CHECK(p.values(4, 2) == 2.0);
  CHECK(p.series_ids[1] == "b");
}

TEST_CASE("long layout with shuffled rows equals its wide equivalent") {
  const auto wide = temp_file("eq_wide.csv");
  const auto longf = temp_file("eq_long.csv");
  write_file(wide,
             "date,x,y\n"
             "2022-01-01,1.5,-2\n"
             "2022-01-02,2.5,-3\n"
             "2022-01-03,3.5,-4\n");
  write_file(longf,
             "date,id,value\n"
             "2022-01-03,y,-4\n"
             "2022-01-01,x,1.5\n"
             "2022-01-02,y,-3\n"
             "2022-01-03,x,3.5\n"
             "2022-01-01,y,-2\n"
             "2022-01-02,x,2.5\n");
  const Panel a = load_panel(wide.string());
  const Panel b = load_panel(longf.string());
  REQUIRE(a.n_obs() == b.n_obs());
  REQUIRE(a.n_series() == b.n_series());
  CHECK(a.values == b.values);
  CHECK(a.series_ids == b.series_ids);
  CHECK(a.dates == b.dates);
}

TEST_CASE("a calendar gap is rejected") {
  const auto path = temp_file("gap.csv");
  write_file(path,
             "date,a\n"
             "2021-04-05,1\n"
             "2021-04-06,2\n"
             "2021-04-08,3\n");  // missing the 7th
  CHECK_THROWS_WITH_AS((void)load_panel(path.string()),
                       doctest::Contains("non-daily"), DataError);
}

TEST_CASE("missing cells forward-fill and leading gaps take the first value") {
  const auto path = temp_file("missing.csv");
  write_file(path,
             "date,a,b\n"
             "2021-04-01,,5\n"
             "2021-04-02,2,\n"
             "2021-04-03,,\n"
             "2021-04-04,4,8\n");
  const Panel p = load_panel(path.string());
  CHECK(p.values(0, 0) == 2.0);  // leading gap <- first observation
  CHECK(p.values(1, 0) == 2.0);
  CHECK(p.values(2, 0) == 2.0);  // carried forward
  CHECK(p.values(3, 0) == 4.0);
  CHECK(p.values(1, 1) == 5.0);
  CHECK(p.values(2, 1) == 5.0);
}

TEST_CASE("save then load round-trips bit-exactly") {
  StdRng rng(21);
  std::normal_distribution<double> normal;
  Panel p;
  p.values.resize(40, 3);
  for (Eigen::Index t = 0; t < 40; ++t)
    for (Eigen::Index i = 0; i < 3; ++i) p.values(t, i) = normal(rng) * 1e7;
  p.series_ids = {"s0", "s1", "s2"};
  p.dates = default_calendar(40);
  const auto path = temp_file("roundtrip.csv");
  save_panel(p, path.string());
  const Panel q = load_panel(path.string());
  CHECK(p.values == q.values);

  save_panel(q, path.string());
  const Panel r = load_panel(path.string());
  CHECK(q.values == r.values);
}

TEST_CASE("duplicate ids and empty series sets are rejected") {
  const auto path = temp_file("dup.csv");
  write_file(path, "date,a,a\n2021-04-01,1,2\n");
  CHECK_THROWS_AS((void)load_panel(path.string()), DataError);
  const auto empty = temp_file("empty.csv");
  write_file(empty, "date\n");
  CHECK_THROWS_AS((void)load_panel(empty.string()), DataError);
}

namespace {

Panel make_panel(const std::vector<std::vector<double>>& columns) {
  Panel p;
  const auto n = static_cast<Eigen::Index>(columns.front().size());
  p.values.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    p.series_ids.push_back("s" + std::to_string(i));
    for (Eigen::Index t = 0; t < n; ++t)
      p.values(t, static_cast<Eigen::Index>(i)) = columns[i][static_cast<std::size_t>(t)];
  }
  p.dates = default_calendar(n);
  return p;
}

}  // namespace

TEST_CASE("activity filters apply the documented rules") {
  const int n = 730;
  std::vector<double> constant(n, 10.0);

  std::vector<double> active(n, 0.0);
  {
    // 104 scattered changes, no dormant stretch of 200 days.
    double level = 0.0;
    for (int t = 1; t < n; ++t) {
      if (t % 7 == 3 && level < 104) level += 1.0;
      active[static_cast<std::size_t>(t)] = level;
    }
  }

  std::vector<double> dormant(n, 0.0);
  {
    for (int t = 1; t < n; ++t) {
      double v = dormant[static_cast<std::size_t>(t - 1)];
      if (t < 400 || t >= 650) v += 1.0;  // a 250-day frozen stretch
      dormant[static_cast<std::size_t>(t)] = v;
    }
  }

  Panel p = make_panel({constant, active, dormant});
  ActivityFilterConfig cfg;
  const auto result = apply_activity_filters(p, cfg);

  REQUIRE(result.exclusions.size() == 2);
  CHECK(result.exclusions[0].series_id == "s0");
  CHECK(result.exclusions[0].rule == "min_operations");
  CHECK(result.exclusions[1].series_id == "s2");
  CHECK(result.exclusions[1].rule == "dormant");
  REQUIRE(result.panel.n_series() == 1);
  CHECK(result.panel.series_ids[0] == "s1");
  CHECK(result.panel.values.col(0) == p.values.col(1));  // survivors untouched
}

TEST_CASE("cutoff-date rules flag inactive and closed accounts") {
  const int n = 400;
  std::vector<double> early(n, 0.0), late(n, 0.0);
  for (int t = 1; t < n; ++t) {
    early[static_cast<std::size_t>(t)] =
        t < 150 ? early[t - 1] + 1.0 : early[t - 1];
    late[static_cast<std::size_t>(t)] = late[t - 1] + (t % 2 ? 1.0 : 0.0);
  }
  Panel p = make_panel({early, late});
  ActivityFilterConfig cfg;
  cfg.min_operations = 10;
  cfg.max_dormant_days = 1000;
  cfg.inactivity_cutoff_date = p.dates[200];
  const auto result = apply_activity_filters(p, cfg);
  REQUIRE(result.exclusions.size() == 1);
  CHECK(result.exclusions[0].series_id == "s0");
  CHECK(result.exclusions[0].rule == "inactive");
}

TEST_CASE("first difference matches the worked example") {
  Panel p = make_panel({{1.0, 3.0, 2.0}});
  const Panel d = first_difference(p);
  CHECK(d.n_obs() == 2);
  CHECK(d.values(0, 0) == 2.0);
  CHECK(d.values(1, 0) == -1.0);
  CHECK(d.layout == PanelLayout::Differenced);
  CHECK(d.dates[0] == p.dates[1]);

  Panel flat = make_panel({{5.0, 5.0, 5.0, 5.0}});
  CHECK(first_difference(flat).values.cwiseAbs().maxCoeff() == 0.0);

  Panel tiny = make_panel({{1.0}});
  CHECK_THROWS_AS((void)first_difference(tiny), DataError);
}

TEST_CASE("difference then cumulative sum restores the panel") {
  StdRng rng(33);
  std::uniform_real_distribution<double> unif(-1e6, 1e6);
  Panel p;
  p.values.resize(300, 4);
  for (Eigen::Index t = 0; t < 300; ++t)
    for (Eigen::Index i = 0; i < 4; ++i) p.values(t, i) = unif(rng);
  p.series_ids = {"a", "b", "c", "d"};
  p.dates = default_calendar(300);

  const Panel d = first_difference(p);
  const Panel q = cumulative_sum(d, p.values.row(0).transpose(), p.dates[0]);
  REQUIRE(q.n_obs() == p.n_obs());
  CHECK((q.values - p.values).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(q.dates == p.dates);
}
