#include <catch_amalgamated.hpp>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
using Catch::Approx;

TEST_CASE("chamfer of a point set against itself is zero") {
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.4);
  ChamferConfig cfg;
  cfg.points = 3000;
  std::mt19937_64 rng(1);
  const auto pts = surface_points(s, {}, cfg, rng);
  REQUIRE(pts.size() == 3000);
  const ChamferResult r = chamfer_points(pts, pts);
  CHECK(r.symmetric == 0.0);
  // two independent samplings of the same shape: only sampling noise remains
  const ChamferResult noise = chamfer(s, {}, s, {}, cfg);
  CHECK(noise.symmetric < 0.5);
  CHECK_THROWS_AS(chamfer_points(pts, std::vector<Vec3>{}), NumericError);
  cfg.points = 0;
  CHECK_THROWS_AS(chamfer(s, {}, s, {}, cfg), ConfigError);
}

TEST_CASE("concentric spheres match the radial gap") {
  const auto gt = AnalyticField::sphere(Vec3::Zero(), 0.3);
  const auto pred = AnalyticField::sphere(Vec3::Zero(), 0.5);
  // every gt point's nearest neighbour is (up to sampling) 0.2 away along the radius
  const double expect = 1000.0 * 0.2 * 0.2;
  const ChamferResult r = chamfer(gt, {}, pred, {}, ChamferConfig{});
  CHECK(r.a_to_b == Approx(expect).epsilon(0.10));
  CHECK(r.b_to_a == Approx(expect).epsilon(0.10));
  CHECK(r.symmetric == Approx(r.a_to_b + r.b_to_a));
}

TEST_CASE("chamfer is stable across seeds") {
  const auto a = AnalyticField::box(Vec3::Zero(), Vec3(0.3, 0.25, 0.35));
  const auto b = AnalyticField::sphere(Vec3(0.02, 0, 0), 0.35);
  ChamferConfig cfg;
  std::vector<double> values;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    values.push_back(chamfer(a, {}, b, {}, cfg).a_to_b);
  }
  for (double v : values) CHECK(v == Approx(values[0]).epsilon(0.05));
}
