#pragma once

// Chamfer distance between two rendered surfaces. Point clouds come from ray
// casting each field from cameras spread over a sphere, so only visible
// surface is sampled, as with depth-based evaluation.

#include <algorithm>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "difftrace/parallel.hpp"
#include "difftrace/shading.hpp"
#include "difftrace/tracer.hpp"

namespace difftrace {

struct ChamferConfig {
  std::size_t points = 10000;
  std::size_t views = 8;
  int resolution = 64;
  double camera_radius = 2.5;
  std::uint64_t seed = 0;
  TraceConfig trace;

  ChamferConfig() {
    trace.alpha = 1.0;
    trace.coarse_start_scale = 1;
  }
};

struct ChamferResult {
  double a_to_b = 0.0;  // mean squared NN distance from a's points to b, x1000
  double b_to_a = 0.0;
  double symmetric = 0.0;  // a_to_b + b_to_a
  std::size_t points_a = 0;
  std::size_t points_b = 0;
};

/// Surface points seen from `views` cameras, randomly subsampled to at most `points`.
template <SignedDistanceField Field>
std::vector<Vec3> surface_points(const Field& field, std::span<const double> code, const ChamferConfig& cfg,
                                 std::mt19937_64& rng) {
  Intrinsics intr;
  intr.width = cfg.resolution;
  intr.height = cfg.resolution;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<Vec3> pts;
  for (const Pose& pose : orbit_poses(cfg.views, cfg.camera_radius, phase(rng))) {
    const TraceResult r = trace(field, code, intr, pose, cfg.trace);
    for (std::size_t i = 0; i < r.pixel_count(); ++i) {
      if (r.converged(i)) pts.push_back(surface_point(r, i));
    }
  }
  if (pts.size() > cfg.points) {
    std::shuffle(pts.begin(), pts.end(), rng);
    pts.resize(cfg.points);
  }
  return pts;
}

/// Mean over a of the squared distance to the nearest point of b (brute force).
inline double mean_nn_sq(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw NumericError("chamfer: empty point cloud");
  std::vector<double> best(a.size());
  parallel_for_blocks(a.size(), 64, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (const Vec3& q : b) m = std::min(m, (a[i] - q).squaredNorm());
      best[i] = m;
    }
  });
  double acc = 0.0;
  for (double v : best) acc += v;
  return acc / static_cast<double>(a.size());
}

inline ChamferResult chamfer_points(std::span<const Vec3> a, std::span<const Vec3> b) {
  ChamferResult r;
  r.points_a = a.size();
  r.points_b = b.size();
  r.a_to_b = 1000.0 * mean_nn_sq(a, b);
  r.b_to_a = 1000.0 * mean_nn_sq(b, a);
  r.symmetric = r.a_to_b + r.b_to_a;
  return r;
}

/// Pass the ground truth as `a` to read the gt->pred direction from a_to_b.
template <SignedDistanceField FieldA, SignedDistanceField FieldB>
ChamferResult chamfer(const FieldA& fa, std::span<const double> code_a, const FieldB& fb,
                      std::span<const double> code_b, const ChamferConfig& cfg = {}) {
  if (cfg.points == 0 || cfg.views == 0) throw ConfigError("chamfer needs points > 0 and views > 0");
  std::mt19937_64 rng(cfg.seed);
  const std::vector<Vec3> a = surface_points(fa, code_a, cfg, rng);
  const std::vector<Vec3> b = surface_points(fb, code_b, cfg, rng);
  return chamfer_points(a, b);
}

}  // namespace difftrace
