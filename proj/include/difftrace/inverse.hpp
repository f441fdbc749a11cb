#pragma once

// Inverse-problem drivers: latent code from depth (+ silhouette), camera pose from
// depth + silhouette, latent code from multi-view photometric consistency.
// Each iteration is trace -> diff_heads -> losses -> one tape backward -> Adam,
// and every driver returns the lowest-loss iterate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "difftrace/adam.hpp"
#include "difftrace/objective.hpp"
#include "difftrace/shading.hpp"
#include "difftrace/tracer.hpp"

namespace difftrace {

struct LossTerms {
  double depth = 0.0;
  double silhouette = 0.0;
  double normal = 0.0;
  double photometric = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct IterationRecord {
  LossTerms loss;
  double grad_norm = 0.0;
  std::size_t queries = 0;  // cumulative field queries
  std::size_t foreground = 0;
};

struct OptimizeReport {
  std::vector<IterationRecord> iterations;
  std::vector<double> final_code;
  std::optional<Pose> final_pose;
  std::size_t best_iteration = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  LossTerms best_terms;
  bool converged = false;  // best loss below the initial loss (or already zero)
  bool identifiable = true;
  long skipped_steps = 0;
  double seconds = 0.0;
  std::string note;
};

struct OptimizeConfig {
  std::size_t iterations = 100;
  AdamConfig adam;
  double lr_final_fraction = 1.0;  // cosine decay target; 1 keeps lr constant
  TraceConfig trace;
  LossWeights weights;
  std::uint64_t seed = 0;

  OptimizeConfig() { trace.k_samples = 3; }

  double lr_at(std::size_t it) const {
    if (iterations == 0 || lr_final_fraction == 1.0) return adam.lr;
    const double t = static_cast<double>(it) / static_cast<double>(iterations);
    return adam.lr * (lr_final_fraction + (1.0 - lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
  }
};

/// Observations for shape completion and pose recovery, all seen from one camera.
struct ShapeProblem {
  Intrinsics intrinsics;
  Pose pose;
  std::optional<Observation> depth;
  std::optional<Observation> silhouette;
  std::optional<Observation> normal;
};

struct Evaluation {
  LossTerms loss;
  std::vector<double> code_grad;
  PoseGradient pose_grad;
  std::size_t queries = 0;
  std::size_t foreground = 0;
};

namespace detail {
inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}
}  // namespace detail

/// Total objective at (code, pose) and its frozen-position gradients.
template <SignedDistanceField Field>
Evaluation evaluate_shape_objective(const Field& field, std::span<const double> code, const ShapeProblem& prob,
                                    const Pose& pose, const TraceConfig& tcfg, const LossWeights& w,
                                    bool want_pose = false) {
  w.validate();
  const TraceResult r = trace(field, code, prob.intrinsics, pose, tcfg);
  const TraceState& st = r.state;
  HeadOptions opts;
  opts.depth = prob.depth.has_value() && w.depth > 0.0;
  opts.silhouette = prob.silhouette.has_value() && w.silhouette > 0.0;
  opts.normals = prob.normal.has_value() && w.normal > 0.0;
  const DiffHeads heads = diff_heads(r, field, code, opts);

  Evaluation ev;
  ev.queries = r.queries + heads.samples.size();
  for (std::size_t i = 0; i < r.pixel_count(); ++i) ev.foreground += r.converged(i) ? 1 : 0;
  HeadSeeds seeds = HeadSeeds::zeros(heads.samples.size(), heads.pixels);
  std::vector<RayGradient> ray_grads;

  if (opts.depth) {
    const std::size_t ns = heads.depth_offsets.back();
    std::vector<double> z(ns);
    for (std::size_t s = 0; s < ns; ++s) z[s] = heads.depth_surrogate(s) / heads.depth_scale[heads.samples[s].pixel];
    const LossResult l = depth_loss(z, heads.depth_offsets, *prob.depth);
    ev.loss.depth = l.value;
    for (std::size_t s = 0; s < ns; ++s) seeds.depth[s] = w.depth * l.grad[s] / heads.depth_scale[heads.samples[s].pixel];
  }
  if (opts.silhouette) {
    std::vector<double> soft(heads.pixels, std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (heads.has_silhouette(p)) {
        soft[p] = heads.silhouette_surrogate(p);
      } else if (!st.hits_unit_sphere[p]) {
        soft[p] = st.miss_value[p];
      }
    }
    const LossResult l = silhouette_loss(soft, *prob.silhouette);
    ev.loss.silhouette = l.value;
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (l.grad[p] == 0.0) continue;
      if (heads.has_silhouette(p)) {
        seeds.silhouette[p] = w.silhouette * l.grad[p];
      } else if (want_pose) {
        ray_grads.push_back(miss_silhouette_gradient(st, p, w.silhouette * l.grad[p]));
      }
    }
  }
  if (opts.normals) {
    std::vector<Vec3> raw(heads.pixels, Vec3::Zero());
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (heads.has_normal(p)) raw[p] = heads.normal_raw(p);
    }
    const NormalLossResult l = normal_loss(raw, {}, *prob.normal);
    ev.loss.normal = l.value;
    for (std::size_t p = 0; p < heads.pixels; ++p) seeds.normal[p] = w.normal * l.grad[p];
  }
  const LossResult reg = latent_reg(code);
  ev.loss.reg = reg.value;
  ev.loss.total = w.depth * ev.loss.depth + w.silhouette * ev.loss.silhouette + w.normal * ev.loss.normal +
                  w.reg * ev.loss.reg;

  const HeadGradients g = heads.backward(seeds);
  ev.code_grad.assign(code.size(), 0.0);
  for (std::size_t i = 0; i < code.size(); ++i) {
    ev.code_grad[i] = (g.code.empty() ? 0.0 : g.code[i]) + w.reg * reg.grad[i];
  }
  if (want_pose) {
    for (const SampleGradient& s : g.points) ray_grads.push_back({s.ray, s.grad_point, s.distance * s.grad_point});
    ev.pose_grad = pose_gradient(st.rays, pose, std::span<const RayGradient>(ray_grads));
  }
  return ev;
}

namespace detail {
inline void record_best(OptimizeReport& rep, const Evaluation& ev, std::size_t it, bool& improved) {
  improved = ev.loss.total < rep.best_loss;
  if (improved) {
    rep.best_loss = ev.loss.total;
    rep.best_terms = ev.loss;
    rep.best_iteration = it;
  }
}

inline void finish_report(OptimizeReport& rep, std::chrono::steady_clock::time_point t0) {
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double initial = rep.iterations.empty() ? 0.0 : rep.iterations.front().loss.total;
  rep.converged = rep.best_loss < initial || initial == 0.0;
}
}  // namespace detail

/// Latent code from depth (+ silhouette, + normals), starting from z0 (zero = mean shape).
template <SignedDistanceField Field>
OptimizeReport complete_shape(const Field& field, const ShapeProblem& prob, const OptimizeConfig& cfg,
                              std::vector<double> z0 = {}) {
  if (!prob.depth && !prob.silhouette) throw ConfigError("complete_shape needs a depth or silhouette observation");
  if (z0.empty()) z0.assign(field.code_dim(), 0.0);
  if (z0.size() != field.code_dim()) throw ConfigError("initial code has the wrong dimension");
  const auto t0 = std::chrono::steady_clock::now();
  OptimizeReport rep;
  std::vector<double> z = z0;
  rep.final_code = z;
  Adam adam(z.size(), cfg.adam);
  std::size_t queries = 0;
  for (std::size_t it = 0; it <= cfg.iterations; ++it) {
    const Evaluation ev = evaluate_shape_objective(field, z, prob, prob.pose, cfg.trace, cfg.weights);
    if (!std::isfinite(ev.loss.total)) throw NumericError("shape completion loss is not finite");
    if (it == 0 && ev.foreground == 0 && !prob.silhouette) {
      throw NumericError("initial render is all background and there is no silhouette to pull it back");
    }
    queries += ev.queries;
    rep.iterations.push_back({ev.loss, detail::norm2(ev.code_grad), queries, ev.foreground});
    bool improved = false;
    detail::record_best(rep, ev, it, improved);
    if (improved) rep.final_code = z;
    if (it == cfg.iterations) break;
    adam.set_lr(cfg.lr_at(it));
    adam.step(z, ev.code_grad);
  }
  rep.skipped_steps = adam.skipped();
  detail::finish_report(rep, t0);
  return rep;
}

/// Six pose parameters from depth + silhouette with the code held fixed.
template <SignedDistanceField Field>
OptimizeReport recover_pose(const Field& field, std::span<const double> code, const ShapeProblem& prob,
                            const Pose& init, const OptimizeConfig& cfg) {
  if (!prob.depth && !prob.silhouette) throw ConfigError("recover_pose needs a depth or silhouette observation");
  if (init.center().squaredNorm() <= 1.0) throw ConfigError("initial camera center must lie outside the unit sphere");
  const auto t0 = std::chrono::steady_clock::now();
  OptimizeReport rep;
  auto arr = init.as_array();
  std::vector<double> params(arr.begin(), arr.end());
  rep.final_pose = init;
  rep.final_code.assign(code.begin(), code.end());
  Adam adam(6, cfg.adam);
  LossWeights w = cfg.weights;
  w.reg = 0.0;
  std::size_t queries = 0;
  bool obs_foreground = false;
  if (prob.depth) {
    for (std::size_t p = 0; p < prob.depth->pixels(); ++p) obs_foreground |= prob.depth->valid(p);
  }
  if (prob.silhouette) {
    for (double v : prob.silhouette->image.data) obs_foreground |= v != 0.0;
  }
  for (std::size_t it = 0; it <= cfg.iterations; ++it) {
    const Pose pose = Pose::from_array(params);
    const Evaluation ev = evaluate_shape_objective(field, code, prob, pose, cfg.trace, w, true);
    if (!std::isfinite(ev.loss.total)) throw NumericError("pose recovery loss is not finite");
    if (it == 0 && ev.foreground == 0 && !obs_foreground) {
      throw NumericError("render and observation are both background; pose has no gradient");
    }
    queries += ev.queries;
    const auto g = ev.pose_grad.as_array();
    rep.iterations.push_back({ev.loss, detail::norm2(g), queries, ev.foreground});
    bool improved = false;
    detail::record_best(rep, ev, it, improved);
    if (improved) rep.final_pose = pose;
    if (it == cfg.iterations) break;
    adam.set_lr(cfg.lr_at(it));
    adam.step(params, g);
  }
  rep.skipped_steps = adam.skipped();
  detail::finish_report(rep, t0);
  return rep;
}

// --- multi-view ---------------------------------------------------------------

struct MultiViewConfig {
  OptimizeConfig opt;
  std::size_t views_per_iter = 8;
  double code_init_sigma = 0.1;

  MultiViewConfig() { opt.trace.k_samples = 1; }
};

/// Index of the view whose optical axis is closest in angle to view i's.
inline std::size_t nearest_view(std::span<const View> views, std::size_t i) {
  const Vec3 axis = views[i].pose.rotation_matrix().row(2).transpose();
  std::size_t best = i;
  double best_cos = -2.0;
  for (std::size_t j = 0; j < views.size(); ++j) {
    if (j == i) continue;
    const double c = axis.dot(views[j].pose.rotation_matrix().row(2).transpose());
    if (c > best_cos) {
      best_cos = c;
      best = j;
    }
  }
  return best;
}

/// Photometric objective over the given subset of views, each warped from its nearest neighbour.
template <SignedDistanceField Field>
Evaluation evaluate_multiview_objective(const Field& field, std::span<const double> code, std::span<const View> views,
                                        std::span<const std::size_t> subset, const TraceConfig& tcfg,
                                        const LossWeights& w) {
  w.validate();
  Evaluation ev;
  ev.code_grad.assign(code.size(), 0.0);
  if (subset.empty()) throw ConfigError("multi-view objective needs at least one view");
  const double inv_views = 1.0 / static_cast<double>(subset.size());
  for (std::size_t i : subset) {
    const std::size_t j = nearest_view(views, i);
    const TraceResult ri = trace(field, code, views[i].intrinsics, views[i].pose, tcfg);
    const TraceResult rj = trace(field, code, views[j].intrinsics, views[j].pose, tcfg);
    HeadOptions opts;
    opts.silhouette = false;
    const DiffHeads heads = diff_heads(ri, field, code, opts);
    std::vector<double> depth_i(heads.pixels, kBackgroundDepth);
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (heads.depth_end(p) > heads.depth_begin(p)) {
        depth_i[p] = heads.depth_surrogate(heads.depth_begin(p)) / heads.depth_scale[p];
        ++ev.foreground;
      }
    }
    const std::vector<double> depth_j = depth_map(rj);
    const PhotometricResult ph = photometric_loss(views[i], depth_i, views[j], depth_j);
    ev.loss.photometric += inv_views * ph.value;
    ev.queries += ri.queries + rj.queries + heads.samples.size();
    HeadSeeds seeds = HeadSeeds::zeros(heads.samples.size(), heads.pixels);
    seeds.silhouette.clear();
    seeds.normal.clear();
    bool any = false;
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (ph.grad[p] == 0.0) continue;
      seeds.depth[heads.depth_begin(p)] = w.photometric * inv_views * ph.grad[p] / heads.depth_scale[p];
      any = true;
    }
    if (!any) continue;
    const HeadGradients g = heads.backward(seeds);
    for (std::size_t k = 0; k < code.size() && k < g.code.size(); ++k) ev.code_grad[k] += g.code[k];
  }
  const LossResult reg = latent_reg(code);
  ev.loss.reg = reg.value;
  for (std::size_t k = 0; k < code.size(); ++k) ev.code_grad[k] += w.reg * reg.grad[k];
  ev.loss.total = w.photometric * ev.loss.photometric + w.reg * ev.loss.reg;
  return ev;
}

/// Latent code from >= 2 calibrated grayscale views, starting from a random code.
template <SignedDistanceField Field>
OptimizeReport reconstruct_multiview(const Field& field, std::span<const View> views, const MultiViewConfig& cfg) {
  if (views.size() < 2) throw ConfigError("multi-view reconstruction needs at least 2 views");
  if (cfg.views_per_iter == 0) throw ConfigError("views_per_iter must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  OptimizeReport rep;
  std::mt19937_64 rng(cfg.opt.seed);
  std::normal_distribution<double> init(0.0, cfg.code_init_sigma);
  std::vector<double> z(field.code_dim());
  for (double& v : z) v = init(rng);
  rep.final_code = z;

  // texture check: a flat image carries no photometric signal
  double spread = 0.0;
  for (const View& v : views) {
    if (v.gray.data.empty()) continue;
    const auto [lo, hi] = std::minmax_element(v.gray.data.begin(), v.gray.data.end());
    spread = std::max(spread, *hi - *lo);
  }
  if (spread < 1e-9) {
    rep.identifiable = false;
    rep.note = "images carry no texture; the photometric loss is flat in the latent code";
  }

  std::vector<std::size_t> all(views.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Adam adam(z.size(), cfg.opt.adam);
  std::size_t queries = 0;
  for (std::size_t it = 0; it <= cfg.opt.iterations; ++it) {
    std::vector<std::size_t> subset = all;
    if (cfg.views_per_iter < views.size()) {
      std::shuffle(subset.begin(), subset.end(), rng);
      subset.resize(cfg.views_per_iter);
      std::sort(subset.begin(), subset.end());
    }
    const Evaluation ev = evaluate_multiview_objective(field, z, views, subset, cfg.opt.trace, cfg.opt.weights);
    if (!std::isfinite(ev.loss.total)) throw NumericError("multi-view loss is not finite");
    queries += ev.queries;
    rep.iterations.push_back({ev.loss, detail::norm2(ev.code_grad), queries, ev.foreground});
    bool improved = false;
    detail::record_best(rep, ev, it, improved);
    if (improved) rep.final_code = z;
    if (it == cfg.opt.iterations) break;
    adam.set_lr(cfg.opt.lr_at(it));
    adam.step(z, ev.code_grad);
  }
  rep.skipped_steps = adam.skipped();
  detail::finish_report(rep, t0);
  return rep;
}

}  // namespace difftrace
