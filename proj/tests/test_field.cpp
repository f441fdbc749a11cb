#include <catch_amalgamated.hpp>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
using Catch::Approx;

namespace {

std::vector<Vec3> ball_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = sample_unit_ball(rng);
  return pts;
}

// fitted once, shared by the neural cases below
const FitResult& sphere_fit() {
  static const FitResult fit = [] {
    FitConfig cfg;
    cfg.arch.code_dim = 0;
    cfg.arch.hidden_activation = Activation::tanh;  // smooth normals for the radial check
    cfg.seed = 2;
    return fit_to_analytic(AnalyticField::sphere(Vec3::Zero(), 0.4), cfg);
  }();
  return fit;
}

}  // namespace

TEST_CASE("analytic primitives are exact") {
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
  CHECK(s.distance(Vec3::Zero()) == -0.5);
  CHECK(s.distance(Vec3(1, 0, 0)) == 0.5);
  const auto pl = AnalyticField::plane(Vec3(0, 0, 2), 0.25);  // normalised internally
  for (const Vec3& p : ball_points(50, 1)) CHECK(pl.distance(p) == Approx(p.z() - 0.25).margin(1e-15));
  const auto b = AnalyticField::box(Vec3(0.1, 0, 0), Vec3(0.2, 0.3, 0.4));
  CHECK(b.distance(Vec3(0.1, 0, 0)) == Approx(-0.2));
  CHECK(b.distance(Vec3(0.6, 0, 0)) == Approx(0.3));
  CHECK(b.distance(Vec3(0.6, 0.7, 0)) == Approx(std::sqrt(0.3 * 0.3 + 0.4 * 0.4)));
}

TEST_CASE("union is the exact pointwise minimum") {
  const auto a = AnalyticField::sphere(Vec3(0.2, 0, 0), 0.3);
  const auto b = AnalyticField::box(Vec3(-0.2, 0.1, 0), Vec3(0.2, 0.1, 0.3));
  const auto u = AnalyticField::union_of({a, b});
  for (const Vec3& p : ball_points(200, 2)) CHECK(u.distance(p) == std::min(a.distance(p), b.distance(p)));
}

TEST_CASE("wrappers translate and scale") {
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.2);
  const auto t = AnalyticField::translated(s, Vec3(0.1, 0.2, 0.3));
  CHECK(t.distance(Vec3(0.1, 0.2, 0.3)) == Approx(-0.2));
  const auto k = AnalyticField::scaled(s, 2.0);
  CHECK(k.distance(Vec3(0.8, 0, 0)) == Approx(0.4));
}

TEST_CASE("eikonal spot check on analytic fields") {
  const std::vector<AnalyticField> fields{AnalyticField::sphere(Vec3(0.1, 0, 0), 0.4),
                                          AnalyticField::plane(Vec3(1, 2, 3), 0.1),
                                          AnalyticField::box(Vec3::Zero(), Vec3(0.3, 0.2, 0.25))};
  for (const auto& f : fields) {
    for (const Vec3& p : ball_points(100, 3)) {
      std::vector<double> x{p.x(), p.y(), p.z()};
      const auto g = finite_diff([&](std::span<const double> v) { return f.distance(Vec3(v[0], v[1], v[2])); }, x, 1e-6);
      const double n = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      // box interior has medial axes where the gradient jumps; skip those
      if (f.kind() == AnalyticField::Kind::box && f.distance(p) < 0.0 && std::abs(n - 1.0) > 1e-3) continue;
      CHECK(n == Approx(1.0).margin(1e-3));
    }
  }
}

TEST_CASE("analytic eval_taped gradients") {
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
  const std::vector<Vec3> pts{Vec3(0.3, 0.4, 0.0), Vec3(0, 0, -0.9)};
  const TapedEval te = s.eval_taped(pts, {});
  CHECK(te.values().values == s.eval(pts, {}));
  const auto g = te.backward(std::vector<double>{1.0, 2.0});
  CHECK(g.at("points")[0] == Approx(0.6));
  CHECK(g.at("points")[1] == Approx(0.8));
  CHECK(g.at("points")[5] == Approx(-2.0));
  CHECK_THROWS_AS(s.eval(pts, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("zero-layer linear field has gradient w exactly") {
  Mlp net;
  net.head = Activation::identity;
  net.layers.push_back(DenseLayer{3, 1, {0.3, -0.2, 0.7}, {0.05}});
  const NeuralField f(0, net);
  const std::vector<Vec3> pts{Vec3(0.1, 0.2, 0.3), Vec3(-0.5, 0.0, 0.4)};
  const TapedEval te = f.eval_taped(pts, {});
  const auto g = te.backward(std::vector<double>{1.0, 1.0});
  CHECK(g.at("points").values == std::vector<double>{0.3, -0.2, 0.7, 0.3, -0.2, 0.7});
  CHECK(te.values()[0] == Approx(0.03 - 0.04 + 0.21 + 0.05));
}

TEST_CASE("neural eval and eval_taped agree bit for bit") {
  NeuralField::Architecture arch;
  arch.code_dim = 3;
  const NeuralField f = NeuralField::create(arch, 4);
  const auto pts = ball_points(777, 4);
  const std::vector<double> code{0.1, -0.2, 0.05};
  const auto a = f.eval(pts, code);
  const TapedEval te = f.eval_taped(pts, code);
  CHECK(a == te.values().values);
  for (double v : a) CHECK(std::abs(v) < 1.0);  // tanh head
  CHECK(f.eval(pts, code) == a);
}

TEST_CASE("code gradient of a 2-dim toy field matches finite differences") {
  const FitResult fam = gradcheck::smooth_family();
  const auto r = gradcheck::sdf_code_gradient(fam.field, fam.codes[0]);
  INFO("max rel error " << r.max_rel_error);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("fit_to_analytic on sphere(0.4)") {
  const FitResult& fit = sphere_fit();
  CHECK(fit.report.ok);
  CHECK(fit.report.validation_mae < 5e-3);
  // 1k random points against the closed form
  const auto target = AnalyticField::sphere(Vec3::Zero(), 0.4);
  const auto pts = ball_points(1000, 7);
  const auto v = fit.field.eval(pts, {});
  double mae = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) mae += std::abs(v[i] - target.distance(pts[i]));
  CHECK(mae / 1000.0 < 5e-3);

  SECTION("point gradients are radial near the surface") {
    std::mt19937_64 rng(8);
    std::vector<Vec3> surf(100);
    for (Vec3& p : surf) p = sample_surface(target, rng);
    const TapedEval te = fit.field.eval_taped(surf, {});
    const auto g = te.backward(std::vector<double>(surf.size(), 1.0)).at("points");
    double worst = 1.0;
    for (std::size_t i = 0; i < surf.size(); ++i) {
      const Vec3 gi(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
      worst = std::min(worst, gi.normalized().dot(surf[i].normalized()));
    }
    CHECK(worst > 0.99);
  }
}

TEST_CASE("fit edge cases") {
  FitConfig cfg;
  cfg.arch.code_dim = 0;
  cfg.epochs = 0;
  cfg.samples = 2000;
  const FitResult none = fit_to_analytic(AnalyticField::sphere(Vec3::Zero(), 0.4), cfg);
  CHECK(none.report.validation_mae == none.report.initial_validation_mae);
  CHECK_FALSE(none.report.ok);
  CHECK_THROWS_AS(fit_family({}, cfg), ConfigError);
}

TEST_CASE("fit_family on two spheres and on duplicates") {
  FitConfig cfg;
  cfg.arch.code_dim = 2;
  cfg.epochs = 15;
  cfg.samples = 20000;
  cfg.seed = 3;
  const auto small = AnalyticField::sphere(Vec3::Zero(), 0.3);
  const auto large = AnalyticField::sphere(Vec3::Zero(), 0.5);
  const FitResult fam = fit_family({small, large}, cfg);
  REQUIRE(fam.codes.size() == 2);
  CHECK(fam.codes[0] != fam.codes[1]);
  for (double e : fam.report.per_target_mae) CHECK(e < 1e-2);

  const FitResult dup = fit_family({small, small}, cfg);
  const auto pts = ball_points(500, 9);
  const auto a = dup.field.eval(pts, dup.codes[0]);
  const auto b = dup.field.eval(pts, dup.codes[1]);
  double diff = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff / static_cast<double>(pts.size()) < 2.0 * dup.report.validation_mae);
}

TEST_CASE("fit of a two-sphere union") {
  FitConfig cfg;
  cfg.arch.code_dim = 0;
  cfg.epochs = 25;
  cfg.seed = 4;
  const auto u = AnalyticField::union_of(
      {AnalyticField::sphere(Vec3(0.25, 0, 0), 0.3), AnalyticField::sphere(Vec3(-0.3, 0.1, 0), 0.25)});
  CHECK(fit_to_analytic(u, cfg).report.validation_mae < 1e-2);
}

TEST_CASE("attribute fields") {
  const auto c = AttributeField::constant(2, 1, {0.2, 0.4, 0.6});
  const std::vector<Vec3> pts{Vec3(0.1, 0, 0), Vec3(0, -0.3, 0.2)};
  const RowMatrix v = c.eval(pts, std::vector<double>{1, 2}, std::vector<double>{3});
  CHECK(v(1, 2) == Approx(0.6));
  const auto pos = AttributeField::position(0, 0);
  const RowMatrix pv = pos.eval(pts, {}, {});
  CHECK(pv(1, 1) == -0.3);
  const auto tex = AttributeField::texture(2, 0, 1, 7);
  const RowMatrix tv = tex.eval(ball_points(100, 1), std::vector<double>{0, 0}, {});
  CHECK(tv.maxCoeff() < 1.0);
  CHECK(tv.minCoeff() > 0.0);
  CHECK(tv.maxCoeff() - tv.minCoeff() > 0.2);  // carries texture
}
