#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mwp/errors.hpp"
#include "mwp/features.hpp"
#include "mwp/rng.hpp"

using namespace mwp;

namespace {

// Brute-force re-derivation of the candidate formulas, written independently
// of the engine (explicit sort, std::pow throughout).
std::map<std::string, double> oracle_features(double lx, double ly, double lz, double dx,
                                              double dy) {
  double dims[3] = {lx, ly, lz};
  std::sort(dims, dims + 3);
  double vol = lx * ly * lz;
  double surf = 2.0 * lx * ly + 2.0 * ly * lz + 2.0 * lx * lz;
  double psi = std::pow(3.141592653589793, 1.0 / 3.0) * std::pow(6.0 * vol, 2.0 / 3.0) / surf;
  std::map<std::string, double> f;
  f["log_volume"] = std::log(1.0 + vol);
  f["log_surf_area"] = std::log(1.0 + surf);
  f["log_max_dim"] = std::log(1.0 + dims[2]);
  f["log_geo_mean"] = std::log(1.0 + std::pow(vol, 1.0 / 3.0));
  f["compactness"] = dims[0] / dims[2];
  f["log_vol_surf"] = std::log(1.0 + vol / surf);
  f["elongation"] = dims[2] / dims[1];
  f["aspect_xy"] = lx / ly;
  f["aspect_yz"] = ly / lz;
  f["sphericity"] = psi;
  f["flatness"] = dims[0] / dims[1];
  f["surf_sphere"] = std::log(1.0 + surf) * psi;
  f["vol_compact"] = std::log(1.0 + vol) * (dims[0] / dims[2]);
  f["log_dist"] = std::log(1.0 + std::sqrt(dx * dx + dy * dy));
  f["log_app_vol"] = std::log(1.0 + vol / (dx * dx));
  return f;
}

RawGeometry random_geometry(Rng& rng) {
  RawGeometry g;
  g.lx = rng.log_uniform(1.0, 200.0);
  g.ly = rng.log_uniform(1.0, 200.0);
  g.lz = rng.log_uniform(1.0, 200.0);
  g.dx = rng.log_uniform(5.0, 200.0);
  g.dy = rng.log_uniform(5.0, 200.0);
  return g;
}

}  // namespace

TEST_CASE("all fifteen formulas match an independent oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    RawGeometry g = random_geometry(rng);
    auto got = compute_all_features(g);
    auto want = oracle_features(g.lx, g.ly, g.lz, g.dx, g.dy);
    REQUIRE(got.size() == 15);
    for (const char* name : kAllFeatureNames) {
      double a = got.at(name), b = want.at(name);
      double rel = std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-300});
      CAPTURE(name);
      CHECK(rel < 1e-10);
    }
  }
}

TEST_CASE("frozen reference values") {
  RawGeometry cube{1, 1, 1, 1, 1};
  auto f = compute_all_features(cube);
  CHECK(f.at("sphericity") == doctest::Approx(0.80600).epsilon(1e-4));
  CHECK(f.at("compactness") == 1.0);
  CHECK(f.at("elongation") == 1.0);
  CHECK(f.at("aspect_xy") == 1.0);
  CHECK(f.at("log_dist") == doctest::Approx(std::log(1.0 + std::sqrt(2.0))).epsilon(1e-12));
  CHECK(f.at("log_dist") == doctest::Approx(0.8814).epsilon(1e-4));

  RawGeometry brick{2, 1, 1, 1, 1};
  auto fb = compute_all_features(brick);
  CHECK(fb.at("log_volume") == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(fb.at("elongation") == 2.0);
  CHECK(fb.at("aspect_xy") == 2.0);
}

TEST_CASE("compactness and elongation ranges") {
  Rng rng(55);
  for (int i = 0; i < 300; ++i) {
    auto f = compute_all_features(random_geometry(rng));
    CHECK(f.at("compactness") > 0.0);
    CHECK(f.at("compactness") <= 1.0);
    CHECK(f.at("elongation") >= 1.0);
    CHECK(f.at("flatness") > 0.0);
    CHECK(f.at("flatness") <= 1.0);
  }
}

TEST_CASE("dimensionless features are scale invariant") {
  const char* dimensionless[] = {"compactness", "elongation", "aspect_xy", "aspect_yz",
                                 "sphericity"};
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    RawGeometry g = random_geometry(rng);
    auto base = compute_all_features(g);
    for (double s : {0.5, 2.0, 4.0, 1024.0}) {  // power-of-two scaling is exact
      RawGeometry gs{g.lx * s, g.ly * s, g.lz * s, g.dx, g.dy};
      auto scaled = compute_all_features(gs);
      for (const char* name : dimensionless) CHECK(scaled.at(name) == base.at(name));
    }
    double s = rng.uniform(0.3, 7.0);
    RawGeometry gs{g.lx * s, g.ly * s, g.lz * s, g.dx, g.dy};
    auto scaled = compute_all_features(gs);
    for (const char* name : dimensionless)
      CHECK(scaled.at(name) == doctest::Approx(base.at(name)).epsilon(1e-12));
  }
}

TEST_CASE("permutation behaviour of extent features") {
  RawGeometry g{3, 5, 7, 2, 2};
  RawGeometry p{7, 3, 5, 2, 2};
  auto a = compute_all_features(g);
  auto b = compute_all_features(p);
  for (const char* name : {"log_volume", "log_max_dim", "compactness", "elongation"})
    CHECK(a.at(name) == b.at(name));
  CHECK(a.at("aspect_xy") != b.at("aspect_xy"));
  CHECK(a.at("aspect_yz") != b.at("aspect_yz"));
}

TEST_CASE("selection order and missing-key contract") {
  RawGeometry g{4, 3, 2, 6, 8};
  auto all = compute_all_features(g);
  FeatureVector v = select_features(all, 5);
  CHECK(v.category_index == 5);
  CHECK(v.values[0] == all.at("log_volume"));
  CHECK(v.values[1] == all.at("log_max_dim"));
  CHECK(v.values[2] == all.at("compactness"));
  CHECK(v.values[3] == all.at("log_vol_surf"));
  CHECK(v.values[4] == all.at("elongation"));
  CHECK(v.values[5] == all.at("aspect_xy"));
  CHECK(v.values[6] == all.at("aspect_yz"));
  CHECK(v.values[7] == all.at("surf_sphere"));
  CHECK(v.values[8] == all.at("log_dist"));

  all.erase("surf_sphere");
  CHECK_THROWS_WITH_AS(select_features(all, 0), doctest::Contains("surf_sphere"),
                       ValidationError);
}

TEST_CASE("geometry validation") {
  CHECK_THROWS_AS(compute_all_features(RawGeometry{0, 1, 1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(compute_all_features(RawGeometry{1, -2, 1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(compute_all_features(RawGeometry{1, 1, 1, 0, 1}), ValidationError);
}

TEST_CASE("standardizer fits training statistics") {
  Rng rng(9);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 500; ++i) rows.push_back(compute_features(random_geometry(rng), i % 11));
  Standardizer s = fit_standardizer(rows);

  for (std::size_t j = 0; j < kSelectedFeatureCount; ++j) {
    double m = 0.0, v = 0.0;
    for (const auto& r : rows) m += (r.values[j] - s.mean[j]) / s.stdev[j];
    m /= static_cast<double>(rows.size());
    for (const auto& r : rows) {
      double z = (r.values[j] - s.mean[j]) / s.stdev[j] - m;
      v += z * z;
    }
    v /= static_cast<double>(rows.size());
    CHECK(std::fabs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }

  for (const auto& r : rows) {
    FeatureVector rt = s.inverse(s.transform(r));
    CHECK(rt.category_index == r.category_index);
    for (std::size_t j = 0; j < kSelectedFeatureCount; ++j) {
      double rel = std::fabs(rt.values[j] - r.values[j]) /
                   std::max(std::fabs(r.values[j]), 1e-12);
      CHECK(rel < 1e-9);
    }
  }
}

TEST_CASE("degenerate feature raises a named error") {
  std::vector<FeatureVector> rows;
  RawGeometry g{2, 3, 4, 5, 6};
  for (int i = 0; i < 10; ++i) rows.push_back(compute_features(g, 0));  // zero variance
  CHECK_THROWS_WITH_AS(fit_standardizer(rows), doctest::Contains("log_volume"),
                       ValidationError);
}

TEST_CASE("target log transform") {
  CHECK(target_log(0.0) == 0.0);
  CHECK(target_log(751.93) == doctest::Approx(std::log(752.93)).epsilon(1e-12));
  CHECK_THROWS_AS(target_log(-0.1), DomainError);

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    double y = rng.uniform(0.0, 5000.0);
    double rt = target_log_inverse(target_log(y));
    CHECK(std::fabs(rt - y) <= 1e-9 * std::max(1.0, y));
  }
}
