#pragma once

// Registered gradient checks: every analytic gradient in the pipeline against
// central finite differences of the same scalar function.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "difftrace/camera.hpp"
#include "difftrace/fit.hpp"
#include "difftrace/objective.hpp"
#include "difftrace/shading.hpp"
#include "difftrace/tracer.hpp"

namespace difftrace {

/// Componentwise |a - b| / max(|a|, |b|, floor), floor = 1e-3 of the largest
/// component, so components that are zero up to noise do not dominate.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("max_relative_error: size mismatch");
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t components = 0;
  bool pass = false;
};

namespace gradcheck {

inline GradCheckResult make(const std::string& name, std::span<const double> analytic, std::span<const double> fd,
                            double tol) {
  const double err = max_relative_error(analytic, fd);
  return {name, err, tol, analytic.size(), err < tol && std::isfinite(err)};
}

/// Random 3-layer tanh/sigmoid net: parameters and inputs against FD.
inline GradCheckResult diffmath_random_net(std::uint64_t seed = 1) {
  Mlp net = Mlp::create(5, {8, 8}, 2, Activation::tanh, Activation::sigmoid, seed);
  std::mt19937_64 rng(seed + 7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 4;
  std::vector<double> x(n * 5);
  for (double& v : x) v = u(rng);
  std::vector<double> seed_v(n * 2);
  for (double& v : seed_v) v = u(rng);
  auto loss = [&](const Mlp& m, std::span<const double> input) {
    Tape tape;
    const NodeId in = tape.constant(Tensor::matrix(n, 5, std::vector<double>(input.begin(), input.end())));
    const NodeId y = m.forward_taped(tape, in, "");
    const Tensor& out = tape.value(y);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += seed_v[i] * out[i];
    return acc;
  };
  Tape tape;
  const NodeId in = tape.leaf("x", Tensor::matrix(n, 5, x));
  const NodeId y = net.forward_taped(tape, in, "");
  const auto grads = tape.backward(y, Tensor::matrix(n, 2, seed_v));
  std::vector<double> analytic = net.gradient_vector(grads, "");
  const auto& gx = grads.at("x").values;
  analytic.insert(analytic.end(), gx.begin(), gx.end());

  const std::vector<double> params = net.parameters();
  Mlp probe = net;
  std::vector<double> fd = finite_diff(
      [&](std::span<const double> p) {
        probe.set_parameters(p);
        return loss(probe, x);
      },
      params, 1e-5);
  const std::vector<double> fdx = finite_diff([&](std::span<const double> xi) { return loss(net, xi); }, x, 1e-5);
  fd.insert(fd.end(), fdx.begin(), fdx.end());
  return make("diffmath.random_net", analytic, fd, 1e-5);
}

/// Small smooth neural family (two sphere radii) used by the field-level checks.
inline FitResult smooth_family(std::uint64_t seed = 3) {
  FitConfig cfg;
  cfg.arch.code_dim = 2;
  cfg.arch.hidden = {32, 32};
  cfg.arch.hidden_activation = Activation::tanh;
  cfg.samples = 6000;
  cfg.validation_samples = 500;
  cfg.epochs = 12;
  cfg.lr = 5e-3;
  cfg.code_init_sigma = 0.3;
  cfg.seed = seed;
  return fit_family({AnalyticField::sphere(Vec3::Zero(), 0.35), AnalyticField::sphere(Vec3(0.05, 0.0, 0.0), 0.5)}, cfg);
}

inline GradCheckResult sdf_code_gradient(const NeuralField& field, std::span<const double> code) {
  std::mt19937_64 rng(11);
  std::vector<Vec3> pts(16);
  for (Vec3& p : pts) p = sample_unit_ball(rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(pts.size());
  for (double& v : w) v = u(rng);
  const TapedEval te = field.eval_taped(pts, code);
  const auto g = te.backward(w);
  std::vector<double> analytic = g.at("code").values;
  const auto& gp = g.at("points").values;
  analytic.insert(analytic.end(), gp.begin(), gp.end());
  auto loss_code = [&](std::span<const double> z) {
    const auto v = field.eval(pts, z);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += w[i] * v[i];
    return acc;
  };
  std::vector<double> fd = finite_diff(loss_code, code, 1e-5);
  std::vector<double> flat(pts.size() * 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int k = 0; k < 3; ++k) flat[3 * i + static_cast<std::size_t>(k)] = pts[i][k];
  }
  const std::vector<double> fdp = finite_diff(
      [&](std::span<const double> f) {
        std::vector<Vec3> q(pts.size());
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = Vec3(f[3 * i], f[3 * i + 1], f[3 * i + 2]);
        const auto v = field.eval(q, code);
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) acc += w[i] * v[i];
        return acc;
      },
      flat, 1e-5);
  fd.insert(fd.end(), fdp.begin(), fdp.end());
  return make("sdf.code_and_point_gradient", analytic, fd, 1e-4);
}

/// Frozen-position surrogates (depth, silhouette, normal) against FD in the code.
inline GradCheckResult heads_code_gradient(const NeuralField& field, std::span<const double> code, int k_samples = 3) {
  Intrinsics intr;
  intr.width = 32;
  intr.height = 32;
  const Pose pose = Pose::look_at(Vec3(0.3, -0.2, -2.2), Vec3::Zero());
  TraceConfig cfg;
  cfg.k_samples = k_samples;
  const TraceResult r = trace(field, code, intr, pose, cfg);
  const DiffHeads heads = diff_heads(r, field, code, HeadOptions{true, true, true});
  if (heads.samples.empty()) throw NumericError("gradcheck: render has no samples");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  HeadSeeds seeds = HeadSeeds::zeros(heads.samples.size(), heads.pixels);
  for (std::size_t s = 0; s < heads.depth_offsets.back(); ++s) seeds.depth[s] = u(rng);
  for (std::size_t p = 0; p < heads.pixels; ++p) {
    if (heads.has_silhouette(p)) seeds.silhouette[p] = u(rng);
    if (heads.has_normal(p)) seeds.normal[p] = Vec3(u(rng), u(rng), u(rng));
  }
  const HeadGradients g = heads.backward(seeds);

  std::vector<Vec3> pts(heads.samples.size());
  for (std::size_t s = 0; s < pts.size(); ++s) pts[s] = heads.samples[s].position;
  auto loss = [&](std::span<const double> z) {
    const std::vector<double> f = field.eval(pts, z);
    double acc = 0.0;
    for (std::size_t s = 0; s < heads.depth_offsets.back(); ++s) acc += seeds.depth[s] * (heads.samples[s].distance + f[s]);
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (heads.has_silhouette(p)) acc += seeds.silhouette[p] * (f[static_cast<std::size_t>(heads.silhouette_sample[p])] - heads.epsilon);
      if (heads.has_normal(p)) {
        const auto s0 = static_cast<std::size_t>(heads.normal_first[p]);
        const double h2 = 2.0 * heads.delta;
        const Vec3 n((f[s0] - f[s0 + 1]) / h2, (f[s0 + 2] - f[s0 + 3]) / h2, (f[s0 + 4] - f[s0 + 5]) / h2);
        acc += seeds.normal[p].dot(n);
      }
    }
    return acc;
  };
  const std::vector<double> fd = finite_diff(loss, code, 1e-5);
  return make("heads.surrogate_code_gradient", g.code, fd, 1e-4);
}

/// Pose gradient of a frozen-distance sample loss plus miss-ray silhouettes.
inline GradCheckResult pose_gradient_check() {
  const AnalyticField field = AnalyticField::union_of(
      {AnalyticField::sphere(Vec3(0.1, 0.05, 0.0), 0.35), AnalyticField::sphere(Vec3(-0.25, 0.2, 0.1), 0.2)});
  Intrinsics intr;
  intr.width = 24;
  intr.height = 24;
  intr.focal_mm = 35.0;
  const Pose pose{Vec3(0.05, -0.1, 0.08), Vec3(0.02, -0.03, 2.1)};
  TraceConfig cfg;
  cfg.k_samples = 2;
  const TraceResult r = trace(field, {}, intr, pose, cfg);
  const DiffHeads heads = diff_heads(r, field, {}, HeadOptions{true, true, false});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  HeadSeeds seeds = HeadSeeds::zeros(heads.samples.size(), heads.pixels);
  std::vector<double> sample_w(heads.samples.size(), 0.0);
  for (std::size_t s = 0; s < heads.depth_offsets.back(); ++s) sample_w[s] = seeds.depth[s] = u(rng);
  for (std::size_t p = 0; p < heads.pixels; ++p) {
    if (!heads.has_silhouette(p)) continue;
    seeds.silhouette[p] = u(rng);
    sample_w[static_cast<std::size_t>(heads.silhouette_sample[p])] += seeds.silhouette[p];
  }
  std::vector<double> miss_w(heads.pixels, 0.0);
  std::vector<RayGradient> ray_grads;
  for (std::size_t p = 0; p < heads.pixels; ++p) {
    if (r.state.hits_unit_sphere[p]) continue;
    miss_w[p] = u(rng);
    ray_grads.push_back(miss_silhouette_gradient(r.state, p, miss_w[p]));
  }
  const HeadGradients g = heads.backward(seeds);
  for (const SampleGradient& s : g.points) ray_grads.push_back({s.ray, s.grad_point, s.distance * s.grad_point});
  const PoseGradient pg = pose_gradient(r.state.rays, pose, std::span<const RayGradient>(ray_grads));
  const auto analytic = pg.as_array();

  const auto p0 = pose.as_array();
  auto loss = [&](std::span<const double> params) {
    const Pose q = Pose::from_array(params);
    const RayBundle rays = generate_rays(intr, q, 1);
    double acc = 0.0;
    for (std::size_t s = 0; s < heads.samples.size(); ++s) {
      if (sample_w[s] == 0.0) continue;
      const DiffSample& ds = heads.samples[s];
      acc += sample_w[s] * field.distance(rays.origin + ds.distance * rays.directions[ds.pixel]);
    }
    for (std::size_t p = 0; p < heads.pixels; ++p) {
      if (miss_w[p] == 0.0) continue;
      const Vec3& c = rays.origin;
      const double cv = c.dot(rays.directions[p]);
      const double closest = cv < 0.0 ? std::sqrt(c.squaredNorm() - cv * cv) : c.norm();
      acc += miss_w[p] * (closest - 1.0);
    }
    return acc;
  };
  const std::vector<double> fd = finite_diff(loss, p0, 1e-6);
  return make("camera.pose_gradient", analytic, fd, 1e-3);
}

/// Loss layers against FD in their own inputs (surrogate values held as plain numbers).
inline GradCheckResult objective_losses() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int w = 6;
  const int h = 5;
  const std::size_t n = static_cast<std::size_t>(w * h);
  std::vector<double> analytic;
  std::vector<double> fd;

  // depth: 2 samples on even pixels, none on odd; residuals kept away from 0
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<double> z;
  Observation dobs{ObservationKind::depth, Image::zeros(w, h), std::vector<std::uint8_t>(n, 1)};
  for (std::size_t p = 0; p < n; ++p) {
    offsets[p] = z.size();
    dobs.image.data[p] = 1.5 + 0.2 * u(rng);
    if (p % 2 == 0) {
      z.push_back(dobs.image.data[p] + (u(rng) > 0 ? 0.1 : -0.1));
      z.push_back(dobs.image.data[p] + (u(rng) > 0 ? 0.05 : -0.05));
    }
    if (p % 7 == 0) dobs.mask[p] = 0;
  }
  offsets[n] = z.size();
  const LossResult dl = depth_loss(z, offsets, dobs);
  analytic.insert(analytic.end(), dl.grad.begin(), dl.grad.end());
  const auto fd_d = finite_diff([&](std::span<const double> v) { return depth_loss(v, offsets, dobs).value; }, z, 1e-6);
  fd.insert(fd.end(), fd_d.begin(), fd_d.end());

  // silhouette
  std::vector<double> soft(n);
  Observation sobs{ObservationKind::silhouette, Image::zeros(w, h), {}};
  for (std::size_t p = 0; p < n; ++p) {
    soft[p] = (u(rng) > 0 ? 1.0 : -1.0) * (0.01 + 0.2 * std::abs(u(rng)));
    sobs.image.data[p] = u(rng) > 0 ? 1.0 : 0.0;
  }
  const LossResult sl = silhouette_loss(soft, sobs);
  analytic.insert(analytic.end(), sl.grad.begin(), sl.grad.end());
  const auto fd_s = finite_diff([&](std::span<const double> v) { return silhouette_loss(v, sobs).value; }, soft, 1e-6);
  fd.insert(fd.end(), fd_s.begin(), fd_s.end());

  // normals
  std::vector<double> raw(3 * n);
  for (double& v : raw) v = u(rng);
  Observation nobs{ObservationKind::normal, Image::zeros(w, h, 3), std::vector<std::uint8_t>(n, 1)};
  for (std::size_t p = 0; p < n; ++p) {
    const Vec3 o = Vec3(u(rng), u(rng), u(rng)).normalized();
    for (int c = 0; c < 3; ++c) nobs.image.data[3 * p + static_cast<std::size_t>(c)] = o[c];
  }
  auto to_vecs = [&](std::span<const double> v) {
    std::vector<Vec3> out(n);
    for (std::size_t p = 0; p < n; ++p) out[p] = Vec3(v[3 * p], v[3 * p + 1], v[3 * p + 2]);
    return out;
  };
  const NormalLossResult nl = normal_loss(to_vecs(raw), {}, nobs);
  for (const Vec3& g : nl.grad) analytic.insert(analytic.end(), {g.x(), g.y(), g.z()});
  const auto fd_n = finite_diff([&](std::span<const double> v) { return normal_loss(to_vecs(v), {}, nobs).value; }, raw, 1e-6);
  fd.insert(fd.end(), fd_n.begin(), fd_n.end());

  // latent reg
  std::vector<double> code{0.3, -0.7, 0.2};
  const LossResult rl = latent_reg(code);
  analytic.insert(analytic.end(), rl.grad.begin(), rl.grad.end());
  const auto fd_r = finite_diff([&](std::span<const double> v) { return latent_reg(v).value; }, code, 1e-6);
  fd.insert(fd.end(), fd_r.begin(), fd_r.end());
  return make("objective.loss_layers", analytic, fd, 1e-4);
}

/// Smooth texture seen by two cameras; photometric gradient in view-i depth.
inline GradCheckResult photometric_depth_gradient() {
  Intrinsics intr;
  intr.width = 16;
  intr.height = 16;
  intr.focal_mm = 30.0;
  const Pose pi = Pose::look_at(Vec3(0.0, 0.0, -2.0), Vec3::Zero());
  const Pose pj = Pose::look_at(Vec3(0.3, 0.1, -1.95), Vec3::Zero());
  auto texture = [](double u, double v) { return 0.5 + 0.3 * std::sin(0.4 * u) * std::cos(0.3 * v); };
  View vi{intr, pi, Image::zeros(16, 16)};
  View vj{intr, pj, Image::zeros(16, 16)};
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      vi.gray.at(x, y) = texture(x + 0.3, y - 0.2);
      vj.gray.at(x, y) = texture(x, y);
    }
  }
  // depth of the plane z_world = 0 seen by view i
  std::vector<double> di(vi.gray.pixels());
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) di[static_cast<std::size_t>(y * 16 + x)] = 2.0 + 0.01 * std::sin(x + 2.0 * y);
  }
  // view j's rendered depth: its own reprojected depths are used so every in-frame pixel is visible
  std::vector<double> dj(vj.gray.pixels(), 0.0);
  {
    const auto proj = project(std::vector<Vec3>{Vec3::Zero()}, intr, pj);
    std::fill(dj.begin(), dj.end(), proj[0].depth);
  }
  const PhotometricResult base = photometric_loss(vi, di, vj, dj, 1.0);
  const auto fd = finite_diff([&](std::span<const double> d) { return photometric_loss(vi, d, vj, dj, 1.0).value; }, di, 1e-7);
  // drop pixels whose residual or bilinear cell changes inside the FD stencil
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t p = 0; p < di.size(); ++p) {
    if (!base.visibility[p]) continue;
    std::vector<double> up(di.begin(), di.end());
    std::vector<double> dn = up;
    up[p] += 1e-7;
    dn[p] -= 1e-7;
    const auto ru = photometric_loss(vi, up, vj, dj, 1.0);
    const auto rd = photometric_loss(vi, dn, vj, dj, 1.0);
    if (ru.visible != base.visible || rd.visible != base.visible) continue;
    if (std::abs(base.grad[p]) < 1e-9 && std::abs(fd[p]) < 1e-9) continue;
    a.push_back(base.grad[p]);
    b.push_back(fd[p]);
  }
  return make("objective.photometric_depth_gradient", a, b, 1e-3);
}

}  // namespace gradcheck

/// Every registered check; the neural ones share one small fitted family.
inline std::vector<GradCheckResult> run_gradchecks() {
  std::vector<GradCheckResult> out;
  out.push_back(gradcheck::diffmath_random_net());
  const FitResult fam = gradcheck::smooth_family();
  out.push_back(gradcheck::sdf_code_gradient(fam.field, fam.codes[0]));
  out.push_back(gradcheck::heads_code_gradient(fam.field, fam.codes[1]));
  out.push_back(gradcheck::pose_gradient_check());
  out.push_back(gradcheck::objective_losses());
  out.push_back(gradcheck::photometric_depth_gradient());
  return out;
}

}  // namespace difftrace
