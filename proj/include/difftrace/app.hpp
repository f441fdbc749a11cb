#pragma once

// One function per command-line tool. Each writes its outputs plus report.json into
// the output directory and returns the one-line summary the tool prints.

#include <chrono>
#include <cstdio>
#include <thread>

#include "difftrace/bench.hpp"
#include "difftrace/chamfer.hpp"
#include "difftrace/gradcheck.hpp"
#include "difftrace/image_io.hpp"
#include "difftrace/scene.hpp"

namespace difftrace {

inline constexpr int kReportVersion = 1;

struct CommonOptions {
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: all cores
  int res = 0;           // 0: camera resolution as stored
  std::string out;       // empty: the scene's output directory
};

struct CommandResult {
  std::string summary;
  std::vector<std::string> table;  // printed above the summary
  Json report;
  int exit_code = 0;
};

namespace app {

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

inline void apply_threads(const CommonOptions& o) {
  set_num_threads(o.threads > 0 ? o.threads : std::max(1u, std::thread::hardware_concurrency()));
}

inline std::string out_dir(const SceneConfig* s, const CommonOptions& o) {
  const std::string dir = !o.out.empty() ? o.out : (s != nullptr ? s->output : std::string("out"));
  ensure_directory(dir);
  return dir;
}

inline std::string join(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

inline Json header(const char* command, const CommonOptions& o) {
  return {{"schema", "difftrace-report"}, {"version", kReportVersion}, {"command", command},
          {"seed", o.seed},               {"threads", num_threads()},  {"outputs", Json::array()}};
}

inline void finish(CommandResult& r, const std::string& dir) {
  r.report["summary"] = r.summary;
  r.report["exit_code"] = r.exit_code;
  r.report["outputs"].push_back("report.json");
  write_json_file(join(dir, "report.json"), r.report);
}

inline Json terms_json(const LossTerms& t) {
  return {{"depth", t.depth},         {"silhouette", t.silhouette}, {"normal", t.normal},
          {"photometric", t.photometric}, {"reg", t.reg},           {"total", t.total}};
}

inline Json optimize_json(const OptimizeReport& rep) {
  Json trace = Json::array();
  for (std::size_t i = 0; i < rep.iterations.size(); ++i) {
    const IterationRecord& it = rep.iterations[i];
    Json e = terms_json(it.loss);
    e["iteration"] = i;
    e["grad_norm"] = it.grad_norm;
    e["queries"] = it.queries;
    e["foreground"] = it.foreground;
    trace.push_back(e);
  }
  Json j = {{"best_iteration", rep.best_iteration}, {"best_loss", rep.best_loss}, {"best_terms", terms_json(rep.best_terms)},
            {"final_code", rep.final_code}, {"converged", rep.converged}, {"identifiable", rep.identifiable},
            {"skipped_steps", rep.skipped_steps}, {"seconds", rep.seconds}, {"iterations", trace}};
  if (!rep.note.empty()) j["note"] = rep.note;
  return j;
}

inline OptimizeConfig optimize_config(const SceneConfig& s, const CommonOptions& o) {
  OptimizeConfig c;
  const int k = c.trace.k_samples;
  c.iterations = s.iterations;
  c.adam.lr = s.lr;
  c.lr_final_fraction = s.lr_final_fraction;
  c.trace = s.trace;
  if (!s.trace_k_set) c.trace.k_samples = k;
  c.weights = s.weights;
  c.seed = o.seed;
  return c;
}

inline ChamferConfig chamfer_config(const SceneConfig& s, const CommonOptions& o) {
  ChamferConfig c;
  c.points = s.chamfer_points;
  c.seed = o.seed;
  return c;
}

template <class F>
decltype(auto) visit_field(const AnyField& f, F&& fn) {
  return std::visit(std::forward<F>(fn), f);
}

/// Depth, silhouette and normal maps of one camera.
inline RenderMaps render_camera(const AnyField& field, std::span<const double> code, const Camera& cam,
                                const TraceConfig& tcfg, const AttributeField* attr = nullptr,
                                std::size_t* queries = nullptr) {
  return visit_field(field, [&](const auto& f) {
    const TraceResult r = trace(f, code, cam.intrinsics, cam.pose, tcfg);
    if (queries != nullptr) *queries = r.queries;
    RenderOptions ro;
    ro.attribute = attr;
    return render_maps(r, f, code, ro);
  });
}

/// Keeps `count` randomly chosen valid pixels of an observation.
inline void sparsify(Observation& obs, std::size_t count, std::uint64_t seed) {
  if (count == 0) return;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < obs.pixels(); ++i) {
    if (obs.valid(i)) valid.push_back(i);
  }
  if (count > valid.size()) throw ConfigError("sparse_pixels exceeds the observed foreground");
  std::mt19937_64 rng(seed);
  std::shuffle(valid.begin(), valid.end(), rng);
  obs.mask.assign(obs.pixels(), 0);
  for (std::size_t k = 0; k < count; ++k) obs.mask[valid[k]] = 1;
}

/// Observations from files when the scene names them, otherwise rendered from the target code.
inline ShapeProblem shape_problem(const SceneConfig& s, const CommonOptions& o, const Camera& cam,
                                  std::span<const double> target) {
  ShapeProblem p{cam.intrinsics, cam.pose, {}, {}, {}};
  const ObservationFiles& f = s.observations;
  if (!f.depth.empty() || !f.silhouette.empty() || !f.normal.empty()) {
    if (!f.depth.empty()) {
      Observation d{ObservationKind::depth, read_depth_pfm(f.depth), {}};
      d.mask.assign(d.pixels(), 0);
      for (std::size_t i = 0; i < d.pixels(); ++i) d.mask[i] = std::isfinite(d.image.data[i]) ? 1 : 0;
      p.depth = std::move(d);
    }
    if (!f.silhouette.empty() && s.use_silhouette) p.silhouette = Observation{ObservationKind::silhouette, read_pgm(f.silhouette), {}};
    if (!f.normal.empty() && s.use_normals) {
      Observation n{ObservationKind::normal, Image::zeros(cam.intrinsics.width, cam.intrinsics.height, 3), {}};
      std::vector<Vec3> normals;
      decode_normals(read_png(f.normal), normals, n.mask);
      if (normals.size() != n.pixels()) throw ConfigError("normal image resolution does not match the camera");
      for (std::size_t i = 0; i < normals.size(); ++i) {
        for (int c = 0; c < 3; ++c) n.image.data[3 * i + static_cast<std::size_t>(c)] = normals[i][c];
      }
      p.normal = std::move(n);
    }
  } else {
    const RenderMaps maps = render_camera(scene_field(s), target, cam, s.trace);
    p.depth = depth_observation(maps);
    if (s.use_silhouette) p.silhouette = silhouette_observation(maps);
    if (s.use_normals) p.normal = normal_observation(maps);
  }
  if (p.depth) sparsify(*p.depth, s.sparse_pixels, o.seed);
  return p;
}

inline std::size_t count_valid(const Observation& obs) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < obs.pixels(); ++i) n += obs.valid(i) ? 1 : 0;
  return n;
}

}  // namespace app

// --- commands -------------------------------------------------------------------

inline CommandResult run_render(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  const AnyField& field = scene_field(s);
  const Camera cam = scene_cameras(s, o.res).front();
  const std::vector<double> code = resolve_code(field, s.code);
  std::optional<AttributeField> tex;
  if (s.texture) tex = AttributeField::texture(code.size(), 0, 3, s.texture->seed, s.texture->frequency, s.texture->waves);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t queries = 0;
  const RenderMaps maps = app::render_camera(field, code, cam, s.trace, tex ? &*tex : nullptr, &queries);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string dir = app::out_dir(&s, o);
  CommandResult r;
  r.report = app::header("render", o);
  write_depth_pfm(app::join(dir, "depth.pfm"), maps.depth, maps.width, maps.height);
  write_png(app::join(dir, "normal.png"), encode_normals(maps.normal, maps.normal_valid, maps.width, maps.height));
  write_mask_pgm(app::join(dir, "sil.pgm"), maps.hard_mask, maps.width, maps.height);
  r.report["outputs"] = {"depth.pfm", "normal.png", "sil.pgm"};
  if (tex) {
    Image color = Image::zeros(maps.width, maps.height, 3);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (!maps.hard_mask[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) color.data[3 * i + c] = maps.attribute[3 * i + c];
    }
    write_png(app::join(dir, "color.png"), color);
    r.report["outputs"].push_back("color.png");
  }
  std::size_t fg = 0;
  for (auto m : maps.hard_mask) fg += m;
  r.report["metrics"] = {{"width", maps.width}, {"height", maps.height}, {"foreground", fg}, {"queries", queries},
                         {"seconds", secs}};
  r.report["trace"] = detail::trace_to_json(s.trace);
  r.report["camera"] = camera_to_json(cam.intrinsics, cam.pose);
  r.summary = app::fmt("render: %dx%d, %zu foreground px, %zu queries, %.3f s -> %s", maps.width, maps.height, fg, queries,
                       secs, dir.c_str());
  app::finish(r, dir);
  return r;
}

inline CommandResult run_complete_depth(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  const AnyField& field = scene_field(s);
  if (field_code_dim(field) == 0) throw ConfigError("complete-depth needs a neural field with a latent code");
  const Camera cam = scene_cameras(s, o.res).front();
  const bool has_target = !s.target_code.is_null();
  const std::vector<double> target = resolve_code(field, s.target_code);
  const ShapeProblem prob = app::shape_problem(s, o, cam, target);
  const std::vector<double> z0 = resolve_code(field, s.code);
  const OptimizeReport rep = app::visit_field(field, [&](const auto& f) { return complete_shape(f, prob, app::optimize_config(s, o), z0); });

  const std::string dir = app::out_dir(&s, o);
  CommandResult r;
  r.report = app::header("complete-depth", o);
  const RenderMaps maps = app::render_camera(field, rep.final_code, cam, s.trace);
  write_depth_pfm(app::join(dir, "depth.pfm"), maps.depth, maps.width, maps.height);
  r.report["outputs"] = {"depth.pfm"};
  r.report["optimization"] = app::optimize_json(rep);
  const double d0 = rep.iterations.front().loss.depth;
  Json m = {{"depth_pixels", prob.depth ? app::count_valid(*prob.depth) : 0}, {"initial_depth_loss", d0},
            {"final_depth_loss", rep.best_terms.depth},
            {"depth_reduction", d0 > 0.0 ? 1.0 - rep.best_terms.depth / d0 : 0.0}};
  std::string extra;
  if (has_target) {
    const ChamferConfig cc = app::chamfer_config(s, o);
    const std::vector<double> mean(target.size(), 0.0);
    const double ch = app::visit_field(field, [&](const auto& f) { return chamfer(f, target, f, rep.final_code, cc).a_to_b; });
    const double base = app::visit_field(field, [&](const auto& f) { return chamfer(f, target, f, mean, cc).a_to_b; });
    m["chamfer_gt_to_pred"] = ch;
    m["chamfer_mean_shape"] = base;
    extra = app::fmt(", chamfer %.4g (mean shape %.4g)", ch, base);
  }
  r.report["metrics"] = m;
  r.summary = app::fmt("complete-depth: depth L1 %.4g -> %.4g (-%.1f%%) at iteration %zu%s, %.1f s", d0, rep.best_terms.depth,
                       100.0 * m["depth_reduction"].get<double>(), rep.best_iteration, extra.c_str(), rep.seconds);
  app::finish(r, dir);
  return r;
}

/// `gt` rotated by exactly `degrees` about a random axis and shifted by `translation` in a random direction.
inline Pose perturb_pose(const Pose& gt, const PerturbSpec& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const Vec3 axis = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
  const Vec3 dir = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
  const Mat3 rot = rotation_from_axis_angle(axis * degrees_to_radians(p.degrees)) * gt.rotation_matrix();
  return Pose::from_matrix(rot, gt.translation + p.translation * dir);
}

inline double rotation_error_deg(const Pose& a, const Pose& b) {
  return radians_to_degrees(axis_angle_from_rotation(a.rotation_matrix() * b.rotation_matrix().transpose()).norm());
}

inline CommandResult run_recover_pose(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  const AnyField& field = scene_field(s);
  const Camera gt = scene_cameras(s, o.res).front();
  const std::vector<double> code = resolve_code(field, s.code);
  const ShapeProblem prob = app::shape_problem(s, o, gt, code);
  const Pose init = perturb_pose(gt.pose, s.perturb, o.seed);
  const OptimizeReport rep =
      app::visit_field(field, [&](const auto& f) { return recover_pose(f, code, prob, init, app::optimize_config(s, o)); });

  const std::string dir = app::out_dir(&s, o);
  CommandResult r;
  r.report = app::header("recover-pose", o);
  const Pose& fin = *rep.final_pose;
  write_camera(app::join(dir, "camera.json"), gt.intrinsics, fin);
  r.report["outputs"] = {"camera.json"};
  r.report["optimization"] = app::optimize_json(rep);
  const double rot = rotation_error_deg(fin, gt.pose);
  const double trans = (fin.translation - gt.pose.translation).norm();
  r.report["metrics"] = {{"initial_rotation_error_deg", rotation_error_deg(init, gt.pose)},
                         {"initial_translation_error", (init.translation - gt.pose.translation).norm()},
                         {"rotation_error_deg", rot},
                         {"translation_error", trans},
                         {"final_pose", fin.as_array()}};
  r.summary = app::fmt("recover-pose: rotation error %.4f deg, translation error %.2e after %zu iterations (best %zu), %.1f s",
                       rot, trans, rep.iterations.size() - 1, rep.best_iteration, rep.seconds);
  app::finish(r, dir);
  return r;
}

/// Grayscale textured renders of the target code from every scene camera; background is 0.
inline std::vector<View> textured_views(const SceneConfig& s, const CommonOptions& o, std::span<const double> target) {
  const TextureSpec spec = s.texture.value_or(TextureSpec{});
  const AttributeField tex = AttributeField::texture(target.size(), 0, 1, spec.seed, spec.frequency, spec.waves);
  std::vector<View> views;
  for (const Camera& cam : scene_cameras(s, o.res)) {
    const RenderMaps maps = app::render_camera(scene_field(s), target, cam, s.trace, &tex);
    Image img = Image::zeros(maps.width, maps.height, 1);
    for (std::size_t i = 0; i < maps.size(); ++i) img.data[i] = maps.hard_mask[i] ? maps.attribute[i] : 0.0;
    views.push_back({cam.intrinsics, cam.pose, std::move(img)});
  }
  return views;
}

inline CommandResult run_mvs(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  const AnyField& field = scene_field(s);
  if (field_code_dim(field) == 0) throw ConfigError("mvs needs a neural field with a latent code");
  if (s.target_code.is_null()) throw ConfigError("mvs needs target_code to render the input views");
  const std::vector<double> target = resolve_code(field, s.target_code);
  const std::vector<View> views = textured_views(s, o, target);
  MultiViewConfig mc;
  const int k = mc.opt.trace.k_samples;
  mc.opt = app::optimize_config(s, o);
  if (!s.trace_k_set) mc.opt.trace.k_samples = k;  // single sample for mvs
  mc.views_per_iter = s.views_per_iter;
  const OptimizeReport rep = app::visit_field(field, [&](const auto& f) { return reconstruct_multiview(f, views, mc); });

  const std::string dir = app::out_dir(&s, o);
  CommandResult r;
  r.report = app::header("mvs", o);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string name = "view" + std::to_string(i) + ".png";
    write_png(app::join(dir, name.c_str()), views[i].gray);
    r.report["outputs"].push_back(name);
  }
  r.report["optimization"] = app::optimize_json(rep);
  const ChamferConfig cc = app::chamfer_config(s, o);
  const std::vector<double> mean(target.size(), 0.0);
  const double ch = app::visit_field(field, [&](const auto& f) { return chamfer(f, target, f, rep.final_code, cc).a_to_b; });
  const double base = app::visit_field(field, [&](const auto& f) { return chamfer(f, target, f, mean, cc).a_to_b; });
  r.report["metrics"] = {{"views", views.size()}, {"chamfer_gt_to_pred", ch}, {"chamfer_mean_shape", base},
                         {"ratio", base > 0.0 ? ch / base : 0.0}, {"identifiable", rep.identifiable}};
  r.summary = app::fmt("mvs: %zu views, photometric %.4g -> %.4g, chamfer %.4g vs mean shape %.4g (%.1f%%), %.1f s",
                       views.size(), rep.iterations.front().loss.total, rep.best_loss, ch, base,
                       base > 0.0 ? 100.0 * ch / base : 0.0, rep.seconds);
  app::finish(r, dir);
  return r;
}

inline CommandResult run_fit_toy(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  if (!s.fit) throw ConfigError("fit-toy needs a 'fit' section listing analytic shapes");
  FitConfig fc = s.fit->config;
  fc.seed = o.seed;
  FitResult fit = fit_family(s.fit->shapes, fc);
  fit.field.codes().clear();
  for (std::size_t i = 0; i < fit.codes.size(); ++i) fit.field.codes().push_back({s.fit->names[i], fit.codes[i]});

  const std::string dir = app::out_dir(&s, o);
  CommandResult r;
  r.report = app::header("fit-toy", o);
  write_field(app::join(dir, "field.json"), fit.field);
  r.report["outputs"] = {"field.json"};
  Json codes = Json::object();
  for (std::size_t i = 0; i < fit.codes.size(); ++i) codes[s.fit->names[i]] = fit.codes[i].values;
  r.report["metrics"] = {{"validation_mae", fit.report.validation_mae}, {"per_target_mae", fit.report.per_target_mae},
                         {"initial_validation_mae", fit.report.initial_validation_mae}, {"epoch_loss", fit.report.epoch_loss},
                         {"codes", codes}, {"ok", fit.report.ok}};
  r.exit_code = fit.report.ok ? 0 : static_cast<int>(ErrorCategory::numeric);
  r.summary = app::fmt("fit-toy: %zu shapes, D=%zu, validation MAE %.3g (%s) -> %s", s.fit->shapes.size(), fc.arch.code_dim,
                       fit.report.validation_mae, fit.report.ok ? "ok" : "above tolerance", dir.c_str());
  app::finish(r, dir);
  return r;
}

inline CommandResult run_gradcheck_command(const CommonOptions& o) {
  app::apply_threads(o);
  const std::vector<GradCheckResult> checks = run_gradchecks();
  CommandResult r;
  r.report = app::header("gradcheck", o);
  Json rows = Json::array();
  std::size_t failed = 0;
  for (const GradCheckResult& c : checks) {
    rows.push_back({{"name", c.name}, {"max_rel_error", c.max_rel_error}, {"tolerance", c.tolerance},
                    {"components", c.components}, {"pass", c.pass}});
    r.table.push_back(app::fmt("  %-38s %10.3e  tol %.0e  %s", c.name.c_str(), c.max_rel_error, c.tolerance, c.pass ? "ok" : "FAIL"));
    failed += c.pass ? 0 : 1;
  }
  r.report["checks"] = rows;
  r.exit_code = failed == 0 ? 0 : static_cast<int>(ErrorCategory::numeric);
  r.summary = app::fmt("gradcheck: %zu/%zu checks passed", checks.size() - failed, checks.size());
  const std::string dir = app::out_dir(nullptr, o);
  app::finish(r, dir);
  return r;
}

inline CommandResult run_bench_command(const SceneConfig& s, const CommonOptions& o) {
  app::apply_threads(o);
  const AnyField& field = scene_field(s);
  const Camera cam = scene_cameras(s, o.res).front();
  const std::vector<double> code = resolve_code(field, s.code);
  const std::vector<BenchRecord> rows =
      app::visit_field(field, [&](const auto& f) { return run_bench(f, code, cam.intrinsics, cam.pose, s.trace); });

  CommandResult r;
  r.report = app::header("bench", o);
  Json jr = Json::array();
  r.table.push_back(app::fmt("  %-16s %7s %9s %10s %10s %12s %9s", "strategy", "dynamic", "aggressive", "coarse2fine",
                             "foreground", "queries", "seconds"));
  for (const BenchRecord& b : rows) {
    jr.push_back({{"strategy", b.strategy}, {"parallel", b.parallel}, {"dynamic", b.dynamic}, {"aggressive", b.aggressive},
                  {"coarse_to_fine", b.coarse_to_fine}, {"width", b.width}, {"height", b.height},
                  {"max_steps", b.max_steps}, {"queries", b.queries}, {"foreground", b.foreground}, {"seconds", b.seconds}});
    r.table.push_back(app::fmt("  %-16s %7s %9s %10s %10zu %12zu %9.3f", b.strategy.c_str(), b.dynamic ? "yes" : "no",
                               b.aggressive ? "yes" : "no", b.coarse_to_fine ? "yes" : "no", b.foreground, b.queries, b.seconds));
  }
  const bool mono = strictly_decreasing(rows);
  r.report["rows"] = jr;
  r.report["metrics"] = {{"strictly_decreasing", mono}, {"width", cam.intrinsics.width}, {"height", cam.intrinsics.height}};
  r.summary = app::fmt("bench: %dx%d, queries %zu -> %zu, %s", cam.intrinsics.width, cam.intrinsics.height,
                       rows.front().queries, rows.back().queries, mono ? "strictly decreasing" : "NOT strictly decreasing");
  const std::string dir = app::out_dir(&s, o);
  app::finish(r, dir);
  return r;
}

}  // namespace difftrace
