#include <catch_amalgamated.hpp>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
using Catch::Approx;

namespace {

Intrinsics square(int res) {
  Intrinsics in;
  in.width = in.height = res;
  return in;
}

RayBundle single_ray(const Vec3& origin, const Vec3& dir, double scale = 1.0) {
  RayBundle b;
  b.width = b.height = 1;
  b.origin = origin;
  b.directions = {dir.normalized()};
  b.camera_dirs = {Vec3(0, 0, 1)};
  b.depth_scale = {scale};
  return b;
}

TraceResult wrap(TraceState s) {
  TraceResult r;
  r.state = std::move(s);
  return r;
}

const Pose kFront = Pose::look_at(Vec3(0, 0, -2), Vec3::Zero());

}  // namespace

TEST_CASE("ray distance") {
  CHECK(ray_distance(0.0, 0.2, 1.5) == 0.2);
  CHECK(ray_distance(1.0, 0.25, 1.0) == 1.25);
  // alpha = 1: after marching the accumulated distance is the sum of the queried values
  const auto plane = AnalyticField::plane(Vec3(0, 0, -1), 0.3);  // surface z = -0.3, camera outside
  TraceConfig cfg;
  cfg.alpha = 1.0;
  cfg.coarse_start_scale = 1;
  const TraceResult r = trace(plane, {}, square(1), kFront, cfg);
  REQUIRE(r.converged(0));
  CHECK(ray_distance(r.state, 0, 1.0) == Approx(1.7).margin(cfg.epsilon));

  SECTION("head-on sphere at alpha 1.5") {
    TraceConfig a = cfg;
    a.alpha = 1.5;
    const TraceResult h = trace(AnalyticField::sphere(Vec3::Zero(), 0.5), {}, square(1), kFront, a);
    REQUIRE(h.converged(0));
    CHECK(std::abs(ray_distance(h.state, 0, 1.5) - 1.5) < 2.0 * a.epsilon);
  }
  TraceState open = init_rays(single_ray(Vec3(0, 0, -2), Vec3(0, 0, 1)));
  CHECK_THROWS_AS(ray_distance(open, 0, 1.0), ConfigError);
}

TEST_CASE("depth map divides by the ray's depth scale") {
  TraceState s = init_rays(single_ray(Vec3(0, 0, -2), Vec3(1, 0, 1), std::sqrt(2.0)));
  s.distance[0] = std::sqrt(2.0) - 1e-5;
  s.last_value[0] = 1e-5;
  s.status[0] = RayStatus::converged;
  const auto z = depth_map(wrap(s));
  CHECK(z[0] == Approx(1.0).epsilon(1e-14));

  s.status[0] = RayStatus::escaped;
  CHECK(std::isinf(depth_map(wrap(s))[0]));
}

TEST_CASE("normals") {
  TraceConfig cfg;
  cfg.coarse_start_scale = 1;
  SECTION("sphere center normal faces the camera") {
    const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
    const TraceResult r = trace(s, {}, square(63), kFront, cfg);
    const NormalImage n = normal_map(r, s, {}, cfg.normal_delta);
    const std::size_t c = r.state.rays.index(31, 31);
    REQUIRE(n.valid[c]);
    CHECK((n.normal[c] - Vec3(0, 0, -1)).norm() < 1e-6);
    CHECK(n.queries == 6 * static_cast<std::size_t>(std::count(n.valid.begin(), n.valid.end(), 1)));
  }
  SECTION("plane normals are exact") {
    const Vec3 nrm = Vec3(0.2, -0.3, -1).normalized();
    const auto pl = AnalyticField::plane(nrm, -0.1);
    const TraceResult r = trace(pl, {}, square(16), kFront, cfg);
    const NormalImage n = normal_map(r, pl, {}, cfg.normal_delta);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n.valid.size(); ++i) {
      if (!n.valid[i]) continue;
      ++count;
      CHECK((n.normal[i] - nrm).norm() < 1e-12);
    }
    CHECK(count > 100);
  }
  SECTION("neural sphere normals stay within 2 degrees") {
    // relu fields are piecewise linear and give faceted normals; a smooth activation does not
    FitConfig fc;
    fc.arch.code_dim = 0;
    fc.arch.hidden_activation = Activation::tanh;
    fc.seed = 5;
    const auto target = AnalyticField::sphere(Vec3::Zero(), 0.5);
    const FitResult fit = fit_to_analytic(target, fc);
    const TraceResult r = trace(fit.field, {}, square(32), kFront, cfg);
    const NormalImage n = normal_map(r, fit.field, {}, cfg.normal_delta);
    double worst = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n.valid.size(); ++i) {
      if (!n.valid[i]) continue;
      ++count;
      const Vec3 p = surface_point(r, i);
      worst = std::max(worst, std::acos(std::clamp(n.normal[i].dot(p.normalized()), -1.0, 1.0)));
    }
    CHECK(count > 200);
    CHECK(worst * 180.0 / std::numbers::pi < 2.0);
  }
  CHECK_THROWS_AS(normal_map(trace(AnalyticField::sphere(Vec3::Zero(), 0.5), {}, square(2), kFront, cfg),
                             AnalyticField::sphere(Vec3::Zero(), 0.5), {}, 0.0),
                  ConfigError);
}

TEST_CASE("soft silhouette") {
  const double eps = 5e-5;
  SECTION("converged ray is negative") {
    TraceState s = init_rays(single_ray(Vec3(0, 0, -2), Vec3(0, 0, 1)));
    s.push_sample(0, 1.5, 1e-5);
    s.status[0] = RayStatus::converged;
    CHECK(soft_silhouette(wrap(s), eps)[0] < 0.0);
  }
  SECTION("ray passing at 0.8 from a 0.5 sphere") {
    const auto sphere = AnalyticField::sphere(Vec3::Zero(), 0.5);
    TraceConfig cfg;
    cfg.coarse_start_scale = 1;
    RayBundle b = single_ray(Vec3(0, 0.8, -2), Vec3(0, 0, 1));
    TraceResult r;
    r.config = cfg;
    r.state = init_rays(b);
    while (march_step(r.state, sphere, {}, cfg) > 0) {
    }
    CHECK(r.state.status[0] == RayStatus::escaped);
    // discrete samples bracket the closest approach from above
    const double sil = soft_silhouette(r, eps)[0];
    CHECK(sil >= 0.3 - eps - 1e-12);
    CHECK(sil < 0.3 + 0.02);
  }
  SECTION("miss of the unit sphere uses the closest approach") {
    TraceState s = init_rays(single_ray(Vec3(0, 1.5, -2), Vec3(0, 0, 1)));
    CHECK(soft_silhouette(wrap(s), eps)[0] == Approx(0.5));
  }
}

TEST_CASE("render maps are consistent") {
  const auto s = AnalyticField::sphere(Vec3(0.1, 0, 0), 0.45);
  TraceConfig cfg;
  const TraceResult r = trace(s, {}, square(32), kFront, cfg);
  const AttributeField constant = AttributeField::constant(0, 0, {0.25, 0.5, 0.75});
  const RenderMaps m = render_maps(r, s, {}, RenderOptions{true, &constant, {}});
  REQUIRE(m.size() == 1024);
  std::size_t fg = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool hit = m.hard_mask[i] != 0;
    fg += hit;
    CHECK(hit == r.converged(i));
    CHECK(hit == std::isfinite(m.depth[i]));
    CHECK(hit == (m.normal_valid[i] != 0));
    if (hit) CHECK(m.soft_silhouette[i] < 0.0);
    CHECK(m.attribute[i * 3 + 1] == (hit ? 0.5 : 0.0));
  }
  CHECK(fg > 100);

  const AttributeField position = AttributeField::position(0, 0);
  const auto pm = attribute_map(r, position, {}, {});
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!r.converged(i)) continue;
    const Vec3 p = surface_point(r, i);
    CHECK(pm[i * 3] == p.x());
    CHECK(pm[i * 3 + 2] == p.z());
  }
}

TEST_CASE("differentiable heads") {
  const FitResult fam = gradcheck::smooth_family();
  const NeuralField& field = fam.field;
  TraceConfig cfg;
  cfg.k_samples = 3;
  cfg.coarse_start_scale = 1;
  const TraceResult r = trace(field, fam.codes[0], square(16), kFront, cfg);
  const DiffHeads h = diff_heads(r, field, fam.codes[0], HeadOptions{true, true, true});
  std::size_t fg = 0;
  for (std::size_t i = 0; i < h.pixels; ++i) {
    if (!r.converged(i)) {
      CHECK(h.depth_end(i) == h.depth_begin(i));
      continue;
    }
    ++fg;
    CHECK(h.depth_end(i) - h.depth_begin(i) == r.state.record(i).size());
    CHECK(h.depth_end(i) - h.depth_begin(i) <= 3);
    // best sample's surrogate reproduces the traced distance
    CHECK(std::abs(h.depth_surrogate(h.depth_begin(i)) - ray_distance(r.state, i, cfg.alpha)) < cfg.epsilon);
    CHECK(h.has_normal(i));
    CHECK(h.has_silhouette(i));
  }
  CHECK(fg > 20);

  const auto check = gradcheck::heads_code_gradient(field, fam.codes[0]);
  INFO("max rel error " << check.max_rel_error);
  CHECK(check.pass);
}

TEST_CASE("attribute field fit reproduces a two-tone boundary") {
  const auto sphere = AnalyticField::sphere(Vec3::Zero(), 0.5);
  auto tone = [](const Vec3& p) { return std::vector<double>{p.x() > 0.0 ? 1.0 : 0.0}; };
  AttributeFitConfig cfg;
  cfg.seed = 3;
  const AttributeFitResult fit = fit_attribute(sphere, 1, tone, cfg);
  INFO("train mse " << fit.train_mse);

  TraceConfig tc;
  const TraceResult r = trace(sphere, {}, square(128), kFront, tc);
  const auto map = attribute_map(r, fit.field, {}, {});
  std::size_t fg = 0, wrong = 0;
  double worst_px = 0.0;
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const std::size_t i = r.state.rays.index(x, y);
      if (!r.converged(i)) continue;
      ++fg;
      const bool want = tone(surface_point(r, i))[0] > 0.5;
      if ((map[i] > 0.5) == want) continue;
      ++wrong;
      // x = 0 projects onto the principal column
      worst_px = std::max(worst_px, std::abs(x + 0.5 - r.intrinsics.cx()));
    }
  }
  INFO("misclassified " << wrong << " of " << fg << ", farthest " << worst_px << " px");
  CHECK(fg > 5000);
  CHECK(worst_px <= 2.0);
}
