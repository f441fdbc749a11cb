#include <catch_amalgamated.hpp>

#include "difftrace/difftrace.hpp"

using namespace difftrace;
using Catch::Approx;

namespace {

Observation depth_obs(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  Observation o{ObservationKind::depth, Image::zeros(n, 1), std::vector<std::uint8_t>(values.size(), 1)};
  o.image.data = std::move(values);
  return o;
}

Observation sil_obs(std::vector<double> values) {
  Observation o{ObservationKind::silhouette, Image::zeros(static_cast<int>(values.size()), 1), {}};
  o.image.data = std::move(values);
  return o;
}

Intrinsics square(int res) {
  Intrinsics in;
  in.width = in.height = res;
  return in;
}

}  // namespace

TEST_CASE("depth loss") {
  const std::vector<std::size_t> one{0, 1};
  const LossResult zero = depth_loss(std::vector<double>{1.0}, one, depth_obs({1.0}));
  CHECK(zero.value == 0.0);
  const LossResult r = depth_loss(std::vector<double>{1.2}, one, depth_obs({1.0}));
  CHECK(r.value == Approx(0.2));
  CHECK(r.grad[0] == 1.0);
  CHECK(r.count == 1);

  SECTION("sparse mask equals the dense loss restricted to those pixels") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    const std::size_t n = 200;
    std::vector<double> z(n), obs(n);
    std::vector<std::size_t> offsets(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = u(rng);
      obs[i] = u(rng);
      offsets[i + 1] = i + 1;
    }
    Observation sparse = depth_obs(obs);
    std::vector<double> kept_z, kept_obs;
    std::vector<std::size_t> kept_off{0};
    for (std::size_t i = 0; i < n; ++i) {
      sparse.mask[i] = i % 10 == 3;
      if (!sparse.mask[i]) continue;
      kept_z.push_back(z[i]);
      kept_obs.push_back(obs[i]);
      kept_off.push_back(kept_z.size());
    }
    const LossResult a = depth_loss(z, offsets, sparse);
    const LossResult b = depth_loss(kept_z, kept_off, depth_obs(kept_obs));
    CHECK(a.value == Approx(b.value).epsilon(1e-14));
    CHECK(a.count == 20);
    for (std::size_t i = 0; i < n; ++i) {
      if (!sparse.mask[i]) CHECK(a.grad[i] == 0.0);  // masking is total
    }
  }
  SECTION("K samples share a pixel's weight") {
    const std::vector<std::size_t> off{0, 2};
    const LossResult k2 = depth_loss(std::vector<double>{1.2, 0.9}, off, depth_obs({1.0}));
    CHECK(k2.value == Approx(0.15));
    CHECK(k2.grad == std::vector<double>{0.5, -0.5});
  }
  SECTION("no overlap is zero, not an error") {
    const std::vector<std::size_t> empty{0, 0};
    CHECK(depth_loss(std::vector<double>{}, empty, depth_obs({1.0})).value == 0.0);
  }
  CHECK_THROWS_AS(depth_loss(std::vector<double>{1.0}, std::vector<std::size_t>{0, 1}, depth_obs({1.0, 2.0})), ConfigError);
}

TEST_CASE("silhouette loss") {
  CHECK(silhouette_loss(std::vector<double>{0.3}, sil_obs({1.0})).value == Approx(0.3));
  CHECK(silhouette_loss(std::vector<double>{0.3}, sil_obs({0.0})).value == 0.0);
  CHECK(silhouette_loss(std::vector<double>{-0.2}, sil_obs({0.0})).value == Approx(0.2));
  CHECK(silhouette_loss(std::vector<double>{-0.2}, sil_obs({1.0})).value == 0.0);
  const LossResult mean = silhouette_loss(std::vector<double>{0.3, -0.2, 0.5, -1.0}, sil_obs({1, 0, 0, 1}));
  CHECK(mean.value == Approx((0.3 + 0.2) / 4.0));
  CHECK(mean.grad == std::vector<double>{0.25, -0.25, 0.0, 0.0});
  CHECK_THROWS_AS(silhouette_loss(std::vector<double>{0.1}, sil_obs({0.5})), ConfigError);
}

TEST_CASE("normal loss") {
  Observation o{ObservationKind::normal, Image::zeros(2, 1, 3), {}};
  o.image.data = {0, 0, -1, 1, 0, 0};
  const std::vector<Vec3> aligned{Vec3(0, 0, -3), Vec3(2, 0, 0)};
  CHECK(normal_loss(aligned, {}, o).value == Approx(-1.0));
  const std::vector<Vec3> ortho{Vec3(1, 0, 0), Vec3(0, 1, 0)};
  CHECK(normal_loss(ortho, {}, o).value == Approx(0.0).margin(1e-15));
  // rendered-invalid pixel contributes nothing
  const NormalLossResult half = normal_loss(aligned, std::vector<std::uint8_t>{1, 0}, o);
  CHECK(half.count == 1);
  CHECK(half.grad[1] == Vec3::Zero());
}

TEST_CASE("normal loss gradient in the code through frozen samples") {
  const FitResult fam = gradcheck::smooth_family();
  const NeuralField& field = fam.field;
  TraceConfig cfg;
  cfg.coarse_start_scale = 1;
  const Pose pose = Pose::look_at(Vec3(0.2, 0.3, -2), Vec3::Zero());
  const TraceResult obs_trace = trace(field, fam.codes[1], square(12), pose, cfg);
  const Observation obs = normal_observation(render_maps(obs_trace, field, fam.codes[1]));

  const std::vector<double> code = fam.codes[0].values;
  const TraceResult r = trace(field, code, square(12), pose, cfg);
  const DiffHeads h = diff_heads(r, field, code, HeadOptions{false, false, true});
  std::vector<Vec3> pts(h.samples.size());
  for (std::size_t s = 0; s < pts.size(); ++s) pts[s] = h.samples[s].position;

  auto loss_at = [&](std::span<const double> z) {
    const std::vector<double> f = field.eval(pts, z);
    std::vector<Vec3> raw(h.pixels, Vec3::Zero());
    for (std::size_t p = 0; p < h.pixels; ++p) {
      if (!h.has_normal(p)) continue;
      const auto s = static_cast<std::size_t>(h.normal_first[p]);
      const double d = 2.0 * h.delta;
      raw[p] = Vec3((f[s] - f[s + 1]) / d, (f[s + 2] - f[s + 3]) / d, (f[s + 4] - f[s + 5]) / d);
    }
    return normal_loss(raw, {}, obs);
  };
  const NormalLossResult nl = loss_at(code);
  REQUIRE(nl.count > 10);
  HeadSeeds seeds = HeadSeeds::zeros(h.samples.size(), h.pixels);
  seeds.normal = nl.grad;
  const HeadGradients g = h.backward(seeds);
  const auto fd = finite_diff([&](std::span<const double> z) { return loss_at(z).value; }, code, 1e-5);
  CHECK(max_relative_error(g.code, fd) < 1e-3);
}

TEST_CASE("visibility") {
  const std::vector<double> a{1.0, 2.0, kBackgroundDepth};
  CHECK(visibility_mask(a, a) == std::vector<std::uint8_t>{1, 1, 0});
  // 0.05^2 = 0.0025 >= 0.001: occluded
  CHECK(visibility_mask(std::vector<double>{1.05}, std::vector<double>{1.0})[0] == 0);
  CHECK(visibility_mask(std::vector<double>{1.02}, std::vector<double>{1.0})[0] == 1);
  CHECK_THROWS_AS(visibility_mask(std::vector<double>{1.0}, std::vector<double>{}), ConfigError);

  SECTION("sphere seen from opposite sides barely overlaps") {
    const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
    const Intrinsics in = square(32);
    const Pose front = Pose::look_at(Vec3(0, 0, -2), Vec3::Zero());
    const Pose back = Pose::look_at(Vec3(0, 0, 2), Vec3::Zero());
    TraceConfig cfg;
    const auto df = depth_map(trace(s, {}, in, front, cfg));
    const auto db = depth_map(trace(s, {}, in, back, cfg));
    View vf{in, front, Image::zeros(32, 32)};
    View vb{in, back, Image::zeros(32, 32)};
    const PhotometricResult r = photometric_loss(vf, df, vb, db);
    const auto fg = static_cast<std::size_t>(std::count_if(df.begin(), df.end(), [](double z) { return std::isfinite(z); }));
    CHECK(fg > 300);
    CHECK(r.visible < fg / 50);
  }
}

TEST_CASE("photometric loss") {
  const Intrinsics in = square(24);
  const Pose pose = Pose::look_at(Vec3(0.1, 0.2, -2), Vec3::Zero());
  const auto s = AnalyticField::sphere(Vec3::Zero(), 0.5);
  TraceConfig cfg;
  const auto depth = depth_map(trace(s, {}, in, pose, cfg));
  Image gray = Image::zeros(24, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) gray.at(x, y) = 0.5 + 0.4 * std::sin(0.5 * x) * std::cos(0.3 * y);
  const View v{in, pose, gray};
  const PhotometricResult same = photometric_loss(v, depth, v, depth);
  CHECK(same.visible > 100);
  CHECK(same.value == Approx(0.0).margin(1e-12));

  SECTION("constant images give zero for any depth") {
    Image flat = Image::zeros(24, 24);
    std::fill(flat.data.begin(), flat.data.end(), 0.4);
    const Pose other = Pose::look_at(Vec3(0.5, 0.2, -1.9), Vec3::Zero());
    const auto d2 = depth_map(trace(s, {}, in, other, cfg));
    std::vector<double> bent = depth;
    for (double& z : bent)
      if (std::isfinite(z)) z += 0.003;
    const PhotometricResult r = photometric_loss(View{in, pose, flat}, bent, View{in, other, flat}, d2);
    CHECK(r.visible > 0);
    CHECK(r.value == Approx(0.0).margin(1e-12));  // bilinear weights sum to 1 up to rounding
  }
  SECTION("per-pixel depth gradient matches FD") {
    const auto r = gradcheck::photometric_depth_gradient();
    INFO("max rel error " << r.max_rel_error);
    CHECK(r.pass);
  }
  SECTION("background pixels carry no gradient") {
    const Pose other = Pose::look_at(Vec3(0.4, 0.2, -1.9), Vec3::Zero());
    const auto d2 = depth_map(trace(s, {}, in, other, cfg));
    const PhotometricResult r = photometric_loss(v, depth, View{in, other, gray}, d2);
    for (std::size_t p = 0; p < depth.size(); ++p) {
      if (!r.visibility[p]) CHECK(r.grad[p] == 0.0);
    }
  }
}

TEST_CASE("latent regulariser and weights") {
  CHECK(latent_reg(std::vector<double>{0.0, 0.0}).value == 0.0);
  const LossResult r = latent_reg(std::vector<double>{3.0, 4.0});
  CHECK(r.value == 25.0);
  CHECK(r.grad == std::vector<double>{6.0, 8.0});
  const LossWeights w;
  CHECK(w.reg == 1.0);
  LossWeights bad;
  bad.depth = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("loss layers against finite differences") {
  const auto r = gradcheck::objective_losses();
  INFO("max rel error " << r.max_rel_error);
  CHECK(r.pass);
}
