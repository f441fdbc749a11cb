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

const FitResult& family() {
  static const FitResult fam = gradcheck::smooth_family();
  return fam;
}

ShapeProblem observe(const AnyField& field, std::span<const double> code, const Intrinsics& in, const Pose& pose) {
  return std::visit(
      [&](const auto& f) {
        const TraceResult r = trace(f, code, in, pose, TraceConfig{});
        const RenderMaps m = render_maps(r, f, code, RenderOptions{false, nullptr, {}});
        return ShapeProblem{in, pose, depth_observation(m), silhouette_observation(m), std::nullopt};
      },
      field);
}

AnalyticField blobs() {
  return AnalyticField::union_of({AnalyticField::sphere(Vec3(0.15, 0, 0), 0.35),
                                  AnalyticField::sphere(Vec3(-0.3, 0.3, 0.1), 0.22),
                                  AnalyticField::sphere(Vec3(-0.1, -0.35, -0.2), 0.18)});
}

const Pose kPose = Pose::look_at(Vec3(0.4, 0.3, -2.3), Vec3::Zero());

}  // namespace

TEST_CASE("adam") {
  std::vector<double> x{1.0, -2.0};
  Adam zero(2);
  zero.step(x, std::vector<double>{0.0, 0.0});
  CHECK(x == std::vector<double>{1.0, -2.0});

  // f = x^2 at x = 1: bias-corrected first step has magnitude ~lr
  std::vector<double> y{1.0};
  Adam a(1, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  a.step(y, std::vector<double>{2.0});
  CHECK(y[0] == Approx(0.9).epsilon(1e-7));

  auto run = [] {
    std::vector<double> p{0.3, -0.1, 2.0};
    Adam opt(3);
    for (int i = 0; i < 50; ++i) opt.step(p, std::vector<double>{2 * p[0], std::sin(p[1]), p[2] - 1.0});
    return p;
  };
  CHECK(run() == run());

  std::vector<double> q{1.0};
  Adam b(1);
  CHECK_FALSE(b.step(q, std::vector<double>{std::nan("")}));
  CHECK(q[0] == 1.0);
  CHECK(b.skipped() == 1);
  CHECK(b.steps() == 0);
  CHECK_THROWS_AS(b.step(q, std::vector<double>{1.0, 2.0}), ConfigError);
}

TEST_CASE("shape completion") {
  const NeuralField& field = family().field;
  const auto& codes = family().codes;
  const Intrinsics in = square(24);
  const Pose pose = Pose::look_at(Vec3(0.3, 0.4, -2.0), Vec3::Zero());
  const ShapeProblem prob = observe(field, codes[1].values, in, pose);

  SECTION("zero iterations returns z0 and the initial loss") {
    OptimizeConfig cfg;
    cfg.iterations = 0;
    const OptimizeReport rep = complete_shape(field, prob, cfg);
    CHECK(rep.iterations.size() == 1);
    CHECK(rep.final_code == std::vector<double>(field.code_dim(), 0.0));
    CHECK(rep.best_loss == rep.iterations[0].loss.total);
  }
  SECTION("true code is a fixed point") {
    OptimizeConfig cfg;
    cfg.iterations = 5;
    cfg.trace = TraceConfig{};  // K = 1, as rendered: every residual is exactly zero
    cfg.weights.reg = 0.0;  // the prior alone would pull the code toward the mean
    const OptimizeReport rep = complete_shape(field, prob, cfg, codes[1].values);
    for (const IterationRecord& r : rep.iterations) CHECK(std::abs(r.loss.total - rep.iterations[0].loss.total) < 1e-8);
  }
  SECTION("converges from the other shape, with an exact report") {
    // this small family's codes sit far from zero, so the mean code renders empty
    OptimizeConfig cfg;
    cfg.iterations = 60;
    const OptimizeReport rep = complete_shape(field, prob, cfg, codes[0].values);
    REQUIRE(rep.iterations[0].loss.depth > 0.0);
    CHECK(rep.converged);
    CHECK(rep.best_terms.depth < 0.1 * rep.iterations[0].loss.depth);
    // report integrity
    const Evaluation again = evaluate_shape_objective(field, rep.final_code, prob, pose, cfg.trace, cfg.weights);
    CHECK(again.loss.total == rep.best_loss);
    // monotone best envelope
    double best = std::numeric_limits<double>::infinity();
    for (const IterationRecord& r : rep.iterations) best = std::min(best, r.loss.total);
    CHECK(best == rep.best_loss);
    CHECK(rep.iterations[rep.best_iteration].loss.total == rep.best_loss);
  }
  SECTION("misuse") {
    ShapeProblem empty{in, pose, std::nullopt, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(complete_shape(field, empty, OptimizeConfig{}), ConfigError);
    CHECK_THROWS_AS(complete_shape(field, prob, OptimizeConfig{}, std::vector<double>{1.0, 2.0, 3.0}), ConfigError);
  }
}

TEST_CASE("pose recovery") {
  const AnyField field = blobs();
  const AnalyticField& f = std::get<AnalyticField>(field);
  const Intrinsics in = square(48);
  const ShapeProblem prob = observe(field, {}, in, kPose);
  OptimizeConfig cfg;
  cfg.trace.k_samples = 1;

  SECTION("ground truth is a fixed point") {
    cfg.iterations = 5;
    const OptimizeReport rep = recover_pose(f, {}, prob, kPose, cfg);
    REQUIRE(rep.final_pose);
    CHECK(rep.best_loss == rep.iterations[0].loss.total);
    CHECK((rep.final_pose->translation - kPose.translation).norm() < 1e-4);
    CHECK((rep.final_pose->rotation - kPose.rotation).norm() < 1e-4);
  }
  SECTION("axial offset recovered from depth alone") {
    ShapeProblem depth_only = prob;
    depth_only.silhouette.reset();
    Pose init = kPose;
    init.translation.z() += 0.05;  // camera z is the optical axis
    cfg.iterations = 100;
    const OptimizeReport rep = recover_pose(f, {}, depth_only, init, cfg);
    REQUIRE(rep.final_pose);
    INFO("final translation error " << (rep.final_pose->translation - kPose.translation).norm());
    CHECK((rep.final_pose->translation - kPose.translation).norm() < 1e-3);
    LossWeights w = cfg.weights;
    w.reg = 0.0;
    const Evaluation again = evaluate_shape_objective(f, {}, depth_only, *rep.final_pose, cfg.trace, w, true);
    CHECK(again.loss.total == rep.best_loss);
  }
  CHECK_THROWS_AS(recover_pose(f, {}, prob, Pose::look_at(Vec3(0, 0, -0.5), Vec3(0, 0, 1)), cfg), ConfigError);
}

TEST_CASE("multi-view reconstruction bookkeeping") {
  const NeuralField& field = family().field;
  const Intrinsics in = square(16);
  const auto poses = orbit_poses(3, 2.2, 0.3);
  const AttributeField tex = AttributeField::texture(field.code_dim(), 0, 1, 7);
  std::vector<View> views;
  for (const Pose& p : poses) {
    const TraceResult r = trace(field, family().codes[0].values, in, p, TraceConfig{});
    const auto a = attribute_map(r, tex, family().codes[0].values, {});
    View v{in, p, Image::zeros(16, 16)};
    v.gray.data = a;
    views.push_back(v);
  }
  MultiViewConfig cfg;
  cfg.opt.iterations = 8;
  CHECK_THROWS_AS(reconstruct_multiview(field, std::span<const View>(views).first(1), cfg), ConfigError);

  const OptimizeReport rep = reconstruct_multiview(field, std::span<const View>(views), cfg);
  CHECK(rep.identifiable);
  double best = std::numeric_limits<double>::infinity();
  for (const IterationRecord& r : rep.iterations) best = std::min(best, r.loss.total);
  CHECK(best == rep.best_loss);
  std::vector<std::size_t> all{0, 1, 2};
  const Evaluation again =
      evaluate_multiview_objective(field, rep.final_code, std::span<const View>(views), all, cfg.opt.trace, cfg.opt.weights);
  CHECK(again.loss.total == rep.best_loss);

  SECTION("flat images are flagged unidentifiable") {
    std::vector<View> flat = views;
    for (View& v : flat) std::fill(v.gray.data.begin(), v.gray.data.end(), 0.5);
    CHECK_FALSE(reconstruct_multiview(field, std::span<const View>(flat), cfg).identifiable);
  }
}

TEST_CASE("optimizer defaults") {
  const OptimizeConfig cfg;
  CHECK(cfg.adam.lr == 1e-2);
  CHECK(cfg.trace.k_samples == 3);
  CHECK(cfg.lr_at(0) == cfg.lr_at(50));
  OptimizeConfig decay;
  decay.lr_final_fraction = 0.1;
  CHECK(decay.lr_at(0) == Approx(1e-2));
  CHECK(decay.lr_at(100) == Approx(1e-3));
  CHECK(MultiViewConfig{}.views_per_iter == 8);
  const LossWeights w;
  CHECK(w.depth == 10.0);
  CHECK(w.silhouette == 1.0);
  CHECK(w.photometric == 5.0);
}
