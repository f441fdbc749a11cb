#pragma once

// Batched sphere tracing with unit-sphere initialization, aggressive marching,
// a dynamic live-ray mask and coarse-to-fine ray splitting. Every ray keeps the
// K samples with the smallest |f| seen along its path; those feed the
// differentiable heads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <vector>

#include "difftrace/camera.hpp"
#include "difftrace/field.hpp"

namespace difftrace {

struct TraceConfig {
  double alpha = 1.5;
  double epsilon = 5e-5;
  int max_steps = 100;
  int k_samples = 1;
  int coarse_start_scale = 4;
  int split_interval = 3;
  double normal_delta = 1e-3;
  bool dynamic = true;  // query only live rays

  void validate() const {
    if (!(alpha >= 1.0 && alpha < 2.0)) throw ConfigError("alpha must lie in [1, 2)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (k_samples < 1) throw ConfigError("k_samples must be >= 1");
    if (coarse_start_scale < 1 || (coarse_start_scale & (coarse_start_scale - 1)) != 0) {
      throw ConfigError("coarse_start_scale must be a power of two");
    }
    if (split_interval < 1) throw ConfigError("split_interval must be >= 1");
    if (!(normal_delta > 0.0)) throw ConfigError("normal_delta must be positive");
  }
};

enum class RayStatus : std::uint8_t { marching, converged, escaped, exhausted };

/// One entry of a ray's min-|f| record.
struct TraceSample {
  double distance = 0.0;  // along the ray, at the query
  double value = 0.0;     // signed field value there
};

/// Structure-of-arrays state for every ray of one resolution level.
struct TraceState {
  RayBundle rays;
  int k = 1;
  std::vector<double> distance;  // position of the latest query
  std::vector<double> last_value;  // f at that query
  std::vector<RayStatus> status;
  std::vector<int> steps;  // queries issued for this ray
  std::vector<std::uint8_t> hits_unit_sphere;
  std::vector<double> entry_distance;  // near unit-sphere hit (0 when the camera is inside)
  std::vector<double> miss_value;  // distance from origin to the ray, minus 1 (misses only)
  std::vector<TraceSample> samples;  // k slots per ray, ascending |value|
  std::vector<std::uint8_t> sample_count;
  bool camera_inside = false;

  std::size_t size() const { return status.size(); }

  std::span<const TraceSample> record(std::size_t ray) const {
    return std::span<const TraceSample>(samples).subspan(ray * static_cast<std::size_t>(k), sample_count[ray]);
  }

  void push_sample(std::size_t ray, double dist, double value) {
    const auto kk = static_cast<std::size_t>(k);
    TraceSample* slot = samples.data() + ray * kk;
    std::size_t count = sample_count[ray];
    const double mag = std::abs(value);
    // ties keep the earlier sample
    std::size_t pos = count;
    while (pos > 0 && std::abs(slot[pos - 1].value) > mag) --pos;
    if (pos >= kk) return;
    const std::size_t last = std::min(count, kk - 1);
    for (std::size_t j = last; j > pos; --j) slot[j] = slot[j - 1];
    slot[pos] = TraceSample{dist, value};
    if (count < kk) sample_count[ray] = static_cast<std::uint8_t>(count + 1);
  }

  void clear_record(std::size_t ray) { sample_count[ray] = 0; }

  Vec3 position(std::size_t ray) const { return rays.origin + distance[ray] * rays.directions[ray]; }
};

struct TraceResult {
  TraceState state;  // full resolution
  Intrinsics intrinsics;
  Pose pose;
  TraceConfig config;
  std::size_t queries = 0;
  std::vector<std::size_t> live_per_step;
  std::size_t field_errors = 0;

  int width() const { return state.rays.width; }
  int height() const { return state.rays.height; }
  std::size_t pixel_count() const { return state.size(); }
  bool converged(std::size_t i) const { return state.status[i] == RayStatus::converged; }
};

/// Starts every ray at its near intersection with the unit sphere; rays that miss
/// are escaped from the outset and carry the miss silhouette value.
inline TraceState init_rays(const RayBundle& bundle, int k_samples = 1) {
  if (k_samples < 1 || k_samples > 255) throw ConfigError("k_samples out of range");
  TraceState s;
  s.rays = bundle;
  s.k = k_samples;
  const std::size_t n = bundle.size();
  s.distance.assign(n, 0.0);
  s.last_value.assign(n, 0.0);
  s.status.assign(n, RayStatus::marching);
  s.steps.assign(n, 0);
  s.hits_unit_sphere.assign(n, 0);
  s.entry_distance.assign(n, 0.0);
  s.miss_value.assign(n, 0.0);
  s.samples.assign(n * static_cast<std::size_t>(k_samples), TraceSample{});
  s.sample_count.assign(n, 0);

  const Vec3& c = bundle.origin;
  const double c2 = c.squaredNorm();
  s.camera_inside = c2 < 1.0;
  if (s.camera_inside) {
    std::cerr << "difftrace: camera center lies inside the unit sphere; rays start at d = 0\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& v = bundle.directions[i];
    const double cv = c.dot(v);
    if (s.camera_inside) {
      s.hits_unit_sphere[i] = 1;
      continue;
    }
    const double perp2 = std::max(0.0, c2 - cv * cv);
    const double disc = 1.0 - perp2;
    // closest approach on the half-line d >= 0
    const double closest = cv < 0.0 ? std::sqrt(perp2) : std::sqrt(c2);
    if (disc >= 0.0 && cv < 0.0) {
      s.hits_unit_sphere[i] = 1;
      s.entry_distance[i] = std::max(0.0, -cv - std::sqrt(disc));
      s.distance[i] = s.entry_distance[i];
    } else {
      s.status[i] = RayStatus::escaped;
      s.miss_value[i] = closest - 1.0;
    }
  }
  return s;
}

/// One synchronized marching step. Returns the number of field queries issued.
template <SignedDistanceField Field>
std::size_t march_step(TraceState& s, const Field& field, std::span<const double> code, const TraceConfig& cfg,
                       std::size_t* field_errors = nullptr) {
  std::vector<std::size_t> query;
  query.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool live = s.status[i] == RayStatus::marching;
    if (live || (!cfg.dynamic && s.hits_unit_sphere[i])) query.push_back(i);
  }
  if (query.empty()) return 0;

  std::vector<Vec3> pts(query.size());
  for (std::size_t j = 0; j < query.size(); ++j) pts[j] = s.position(query[j]);
  const std::vector<double> values = field.eval(pts, code);

  for (std::size_t j = 0; j < query.size(); ++j) {
    const std::size_t i = query[j];
    if (s.status[i] != RayStatus::marching) continue;  // non-dynamic mode: wasted query
    const double b = values[j];
    ++s.steps[i];
    if (!std::isfinite(b)) {
      s.status[i] = RayStatus::exhausted;
      if (field_errors) ++*field_errors;
      continue;
    }
    s.last_value[i] = b;
    s.push_sample(i, s.distance[i], b);
    if (std::abs(b) < cfg.epsilon) {
      s.status[i] = RayStatus::converged;
      continue;
    }
    s.distance[i] += cfg.alpha * b;
    const Vec3 p = s.position(i);
    if (b > 0.0 && p.squaredNorm() > 1.0 && p.dot(s.rays.directions[i]) > 0.0) {
      s.status[i] = RayStatus::escaped;
      continue;
    }
    if (s.steps[i] >= cfg.max_steps) s.status[i] = RayStatus::exhausted;
  }
  return query.size();
}

namespace detail {

/// Replaces a level-L state by its 2x finer children. Children inherit the
/// parent's distance (never less than their own unit-sphere entry) and step
/// count, restart marching, and begin a fresh min-|f| record.
/// When inherit_record is set (final splits after the step budget ran out) the
/// children keep the parent's record instead.
inline TraceState split_rays(const TraceState& parent, const Intrinsics& intr, const Pose& pose,
                             bool inherit_record = false) {
  const int level = parent.rays.level / 2;
  TraceState child = init_rays(generate_rays(intr, pose, level), parent.k);
  for (int y = 0; y < child.rays.height; ++y) {
    for (int x = 0; x < child.rays.width; ++x) {
      const std::size_t i = child.rays.index(x, y);
      const std::size_t p = parent.rays.index(x / 2, y / 2);
      child.steps[i] = parent.steps[p];
      if (!child.hits_unit_sphere[i]) continue;
      if (parent.hits_unit_sphere[p]) child.distance[i] = std::max(parent.distance[p], child.entry_distance[i]);
      if (parent.status[p] == RayStatus::exhausted) child.status[i] = RayStatus::exhausted;
      if (inherit_record) {
        for (const TraceSample& smp : parent.record(p)) child.push_sample(i, smp.distance, smp.value);
      }
    }
  }
  return child;
}

}  // namespace detail

/// Full render trace. Starts at 1/coarse_start_scale resolution per dimension and
/// doubles the resolution every split_interval steps.
template <SignedDistanceField Field>
TraceResult trace(const Field& field, std::span<const double> code, const Intrinsics& intr, const Pose& pose,
                  const TraceConfig& cfg) {
  cfg.validate();
  intr.validate();
  int level = cfg.coarse_start_scale;
  if (intr.width % level != 0 || intr.height % level != 0) {
    throw ConfigError("resolution must be divisible by coarse_start_scale");
  }
  TraceResult result;
  result.intrinsics = intr;
  result.pose = pose;
  result.config = cfg;
  TraceState state = init_rays(generate_rays(intr, pose, level), cfg.k_samples);

  auto any_live = [&] {
    return std::any_of(state.status.begin(), state.status.end(), [](RayStatus st) { return st == RayStatus::marching; });
  };

  int step = 0;
  int since_split = 0;
  while (step < cfg.max_steps) {
    if (level > 1 && (since_split == cfg.split_interval || !any_live())) {
      state = detail::split_rays(state, intr, pose);
      level /= 2;
      since_split = 0;
      continue;
    }
    if (!any_live()) break;
    const std::size_t q = march_step(state, field, code, cfg, &result.field_errors);
    result.queries += q;
    result.live_per_step.push_back(q);
    ++step;
    ++since_split;
  }
  while (level > 1) {
    state = detail::split_rays(state, intr, pose, true);
    level /= 2;
  }
  for (auto& st : state.status) {
    if (st == RayStatus::marching) st = RayStatus::exhausted;
  }
  result.state = std::move(state);
  return result;
}

/// Lower bound on marching steps for a ray meeting a plane at grazing angle theta,
/// from |d (1 - alpha sin theta)^k| < epsilon.
inline int min_steps_bound(double d, double alpha, double theta, double epsilon) {
  if (!(d > 0.0) || !(epsilon > 0.0)) throw ConfigError("min_steps_bound: d and epsilon must be positive");
  const double rate = std::abs(1.0 - alpha * std::sin(theta));
  if (rate >= 1.0) throw NumericError("min_steps_bound: divergent regime |1 - alpha sin(theta)| >= 1");
  if (rate == 0.0) return 1;
  const double k = (std::log(epsilon) - std::log(d)) / std::log(rate);
  return std::max(0, static_cast<int>(std::ceil(k)));
}

/// Threshold at which neighbouring pixels' surface points stay separable:
/// d_min S cos^2(theta) / (2 f R), with R the horizontal resolution.
inline double epsilon_bound(const Intrinsics& intr, double d_min, double theta = 0.0) {
  intr.validate();
  if (!(d_min > 0.0)) throw ConfigError("epsilon_bound: d_min must be positive");
  const double c = std::cos(theta);
  return d_min * intr.sensor_mm * c * c / (2.0 * intr.focal_mm * intr.width);
}

inline double degrees_to_radians(double deg) { return deg * std::numbers::pi / 180.0; }
inline double radians_to_degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace difftrace
