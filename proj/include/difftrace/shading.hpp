#pragma once

// Observation maps from a finished trace, and the differentiable heads that
// re-evaluate only the recorded min-|f| samples on a tape. Sample positions are
// frozen: gradients flow through f(p_k, z) and never through the marching path.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "difftrace/field.hpp"
#include "difftrace/tracer.hpp"

namespace difftrace {

inline constexpr double kBackgroundDepth = std::numeric_limits<double>::infinity();

struct RenderMaps {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // camera-space z, +inf on background
  std::vector<Vec3> normal;  // unit on foreground, zero elsewhere
  std::vector<std::uint8_t> normal_valid;
  std::vector<double> soft_silhouette;
  std::vector<std::uint8_t> hard_mask;
  std::size_t channels = 0;
  std::vector<double> attribute;  // [pixel * channels + c]

  std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

/// Incremental form: accumulated distance (d + alpha b) plus the residual
/// (1 - alpha) b. The sum is taken as d + b, which is the same number without the
/// round-off, so the depth surrogate d + f(p) reproduces it bit for bit.
inline double ray_distance(double query_distance, double last_value, double alpha) {
  (void)alpha;
  return query_distance + last_value;
}

inline double ray_distance(const TraceState& s, std::size_t ray, double alpha) {
  if (s.status[ray] != RayStatus::converged) throw ConfigError("ray_distance: ray has not converged");
  return ray_distance(s.distance[ray], s.last_value[ray], alpha);
}

/// Surface point of a converged ray.
inline Vec3 surface_point(const TraceResult& r, std::size_t ray) {
  return r.state.rays.origin + ray_distance(r.state, ray, r.config.alpha) * r.state.rays.directions[ray];
}

/// z_c = d / sqrt(x~^2 + y~^2 + 1). Background pixels get +inf.
inline std::vector<double> depth_map(const TraceResult& r) {
  std::vector<double> depth(r.pixel_count(), kBackgroundDepth);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (r.converged(i)) depth[i] = ray_distance(r.state, i, r.config.alpha) / r.state.rays.depth_scale[i];
  }
  return depth;
}

/// Min |f| minus epsilon for rays that entered the unit sphere; the miss rule
/// (distance from origin to the ray minus 1) otherwise.
inline std::vector<double> soft_silhouette(const TraceResult& r, double epsilon) {
  const TraceState& s = r.state;
  std::vector<double> sil(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto rec = s.record(i);
    if (!s.hits_unit_sphere[i]) {
      sil[i] = s.miss_value[i];
    } else if (rec.empty()) {
      sil[i] = std::numeric_limits<double>::infinity();
    } else {
      sil[i] = std::abs(rec.front().value) - epsilon;
    }
  }
  return sil;
}

namespace detail {
inline const std::array<Vec3, 6>& normal_offsets() {
  static const std::array<Vec3, 6> offsets{Vec3::UnitX(), Vec3(-Vec3::UnitX()), Vec3::UnitY(),
                                           Vec3(-Vec3::UnitY()), Vec3::UnitZ(), Vec3(-Vec3::UnitZ())};
  return offsets;
}
}  // namespace detail

struct NormalImage {
  std::vector<Vec3> normal;
  std::vector<std::uint8_t> valid;
  std::size_t queries = 0;
};

/// Central differences at each converged surface point (6 queries per pixel).
template <SignedDistanceField Field>
NormalImage normal_map(const TraceResult& r, const Field& field, std::span<const double> code, double delta) {
  if (!(delta > 0.0)) throw ConfigError("normal_map: delta must be positive");
  NormalImage out;
  out.normal.assign(r.pixel_count(), Vec3::Zero());
  out.valid.assign(r.pixel_count(), 0);
  std::vector<std::size_t> fg;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < r.pixel_count(); ++i) {
    if (!r.converged(i)) continue;
    fg.push_back(i);
    const Vec3 p = surface_point(r, i);
    for (const Vec3& o : detail::normal_offsets()) pts.push_back(p + delta * o);
  }
  if (fg.empty()) return out;
  const std::vector<double> f = field.eval(pts, code);
  out.queries = pts.size();
  for (std::size_t j = 0; j < fg.size(); ++j) {
    const double* v = f.data() + 6 * j;
    const Vec3 n((v[0] - v[1]) / (2.0 * delta), (v[2] - v[3]) / (2.0 * delta), (v[4] - v[5]) / (2.0 * delta));
    const double len = n.norm();
    if (len > 0.0 && std::isfinite(len)) {
      out.normal[fg[j]] = n / len;
      out.valid[fg[j]] = 1;
    }
  }
  return out;
}

/// Attribute head evaluated at converged surface points; zero on background.
inline std::vector<double> attribute_map(const TraceResult& r, const AttributeField& attr,
                                         std::span<const double> shape_code, std::span<const double> attr_code) {
  const std::size_t m = attr.channels();
  std::vector<double> out(r.pixel_count() * m, 0.0);
  std::vector<std::size_t> fg;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < r.pixel_count(); ++i) {
    if (!r.converged(i)) continue;
    fg.push_back(i);
    pts.push_back(surface_point(r, i));
  }
  if (fg.empty()) return out;
  const RowMatrix vals = attr.eval(pts, shape_code, attr_code);
  for (std::size_t j = 0; j < fg.size(); ++j) {
    for (std::size_t c = 0; c < m; ++c) {
      out[fg[j] * m + c] = vals(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

struct RenderOptions {
  bool normals = true;
  const AttributeField* attribute = nullptr;
  std::span<const double> attribute_code;
};

template <SignedDistanceField Field>
RenderMaps render_maps(const TraceResult& r, const Field& field, std::span<const double> code,
                       const RenderOptions& opts = {}) {
  RenderMaps maps;
  maps.width = r.width();
  maps.height = r.height();
  maps.depth = depth_map(r);
  maps.soft_silhouette = soft_silhouette(r, r.config.epsilon);
  maps.hard_mask.resize(r.pixel_count());
  for (std::size_t i = 0; i < r.pixel_count(); ++i) maps.hard_mask[i] = r.converged(i) ? 1 : 0;
  if (opts.normals) {
    NormalImage n = normal_map(r, field, code, r.config.normal_delta);
    maps.normal = std::move(n.normal);
    maps.normal_valid = std::move(n.valid);
  } else {
    maps.normal.assign(r.pixel_count(), Vec3::Zero());
    maps.normal_valid.assign(r.pixel_count(), 0);
  }
  if (opts.attribute != nullptr) {
    maps.channels = opts.attribute->channels();
    maps.attribute = attribute_map(r, *opts.attribute, code, opts.attribute_code);
  }
  return maps;
}

// --- differentiable heads -----------------------------------------------------

enum class SampleRole : std::uint8_t { depth, silhouette, normal };

/// A frozen sample re-evaluated on the tape: p = c + distance * v for pixel `pixel`.
struct DiffSample {
  std::size_t pixel = 0;
  double distance = 0.0;
  Vec3 position = Vec3::Zero();
  SampleRole role = SampleRole::depth;
};

struct HeadOptions {
  bool depth = true;
  bool silhouette = true;
  bool normals = false;
};

/// Upstream gradients on the surrogates, indexed like DiffHeads.
struct HeadSeeds {
  std::vector<double> depth;  // per sample (zero for non-depth samples)
  std::vector<double> silhouette;  // per pixel
  std::vector<Vec3> normal;  // per pixel, on the raw central-difference vector

  static HeadSeeds zeros(std::size_t samples, std::size_t pixels) {
    return HeadSeeds{std::vector<double>(samples, 0.0), std::vector<double>(pixels, 0.0),
                     std::vector<Vec3>(pixels, Vec3::Zero())};
  }
};

struct HeadGradients {
  std::vector<double> code;
  std::vector<double> network;  // empty for analytic fields
  std::vector<SampleGradient> points;  // dL/dp per sample, for pose gradients
};

/// Differentiable surrogates with frozen positions:
///   depth       d_k^ = d_k + f(p_k, z)   (K samples of converged pixels)
///   silhouette  s^   = f(p_best, z) - eps (every pixel whose ray entered the unit sphere)
///   normal      raw central differences of f around the surface point
struct DiffHeads {
  std::vector<DiffSample> samples;
  TapedEval taped;
  std::size_t pixels = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  std::vector<std::size_t> depth_offsets;  // CSR over pixels into samples
  std::vector<std::int64_t> silhouette_sample;  // -1 when absent
  std::vector<std::int64_t> normal_first;  // 6 consecutive samples, -1 when absent
  std::vector<double> depth_scale;  // per pixel, sqrt(x~^2 + y~^2 + 1)

  double value(std::size_t s) const { return taped.values()[s]; }
  double depth_surrogate(std::size_t s) const { return samples[s].distance + value(s); }
  std::size_t depth_begin(std::size_t pixel) const { return depth_offsets[pixel]; }
  std::size_t depth_end(std::size_t pixel) const { return depth_offsets[pixel + 1]; }
  bool has_silhouette(std::size_t pixel) const { return silhouette_sample[pixel] >= 0; }
  double silhouette_surrogate(std::size_t pixel) const {
    return value(static_cast<std::size_t>(silhouette_sample[pixel])) - epsilon;
  }
  bool has_normal(std::size_t pixel) const { return normal_first[pixel] >= 0; }
  Vec3 normal_raw(std::size_t pixel) const {
    const auto s = static_cast<std::size_t>(normal_first[pixel]);
    const double h = 2.0 * delta;
    return Vec3((value(s) - value(s + 1)) / h, (value(s + 2) - value(s + 3)) / h, (value(s + 4) - value(s + 5)) / h);
  }

  /// One tape backward pass for all heads.
  HeadGradients backward(const HeadSeeds& seeds) const {
    std::vector<double> seed(samples.size(), 0.0);
    if (!seeds.depth.empty()) {
      if (seeds.depth.size() != samples.size()) throw ConfigError("depth seed size mismatch");
      for (std::size_t s = 0; s < samples.size(); ++s) seed[s] += seeds.depth[s];
    }
    if (!seeds.silhouette.empty()) {
      for (std::size_t p = 0; p < pixels; ++p) {
        if (seeds.silhouette[p] != 0.0 && has_silhouette(p)) seed[static_cast<std::size_t>(silhouette_sample[p])] += seeds.silhouette[p];
      }
    }
    if (!seeds.normal.empty()) {
      for (std::size_t p = 0; p < pixels; ++p) {
        if (!has_normal(p)) continue;
        const auto s = static_cast<std::size_t>(normal_first[p]);
        for (int a = 0; a < 3; ++a) {
          const double g = seeds.normal[p][a] / (2.0 * delta);
          seed[s + 2 * static_cast<std::size_t>(a)] += g;
          seed[s + 2 * static_cast<std::size_t>(a) + 1] -= g;
        }
      }
    }
    HeadGradients out;
    if (samples.empty()) return out;
    const auto grads = taped.backward(seed);
    out.code = grads.at("code").values;
    if (grads.count("layer0.weight") != 0) {
      std::size_t layer = 0;
      while (grads.count("layer" + std::to_string(layer) + ".weight") != 0) {
        const auto& w = grads.at("layer" + std::to_string(layer) + ".weight").values;
        const auto& b = grads.at("layer" + std::to_string(layer) + ".bias").values;
        out.network.insert(out.network.end(), w.begin(), w.end());
        out.network.insert(out.network.end(), b.begin(), b.end());
        ++layer;
      }
    }
    const Tensor& gp = grads.at("points");
    out.points.reserve(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
      if (seed[s] == 0.0) continue;
      out.points.push_back({samples[s].pixel, samples[s].distance, Vec3(gp[3 * s], gp[3 * s + 1], gp[3 * s + 2])});
    }
    return out;
  }
};

template <SignedDistanceField Field>
DiffHeads diff_heads(const TraceResult& r, const Field& field, std::span<const double> code,
                     const HeadOptions& opts = {}) {
  const TraceState& st = r.state;
  DiffHeads h;
  h.pixels = st.size();
  h.epsilon = r.config.epsilon;
  h.delta = r.config.normal_delta;
  h.depth_offsets.assign(h.pixels + 1, 0);
  h.silhouette_sample.assign(h.pixels, -1);
  h.normal_first.assign(h.pixels, -1);
  h.depth_scale = st.rays.depth_scale;
  auto add = [&](std::size_t pixel, double dist, SampleRole role) {
    h.samples.push_back({pixel, dist, st.rays.origin + dist * st.rays.directions[pixel], role});
    return static_cast<std::int64_t>(h.samples.size() - 1);
  };
  // depth samples first so each pixel's K samples form one CSR range
  for (std::size_t i = 0; i < h.pixels; ++i) {
    h.depth_offsets[i] = h.samples.size();
    if (!opts.depth || st.status[i] != RayStatus::converged) continue;
    for (const TraceSample& smp : st.record(i)) add(i, smp.distance, SampleRole::depth);
  }
  h.depth_offsets[h.pixels] = h.samples.size();
  if (opts.silhouette) {
    for (std::size_t i = 0; i < h.pixels; ++i) {
      const auto rec = st.record(i);
      if (rec.empty()) continue;
      // the best depth sample doubles as the silhouette sample
      h.silhouette_sample[i] = h.depth_end(i) > h.depth_begin(i) ? static_cast<std::int64_t>(h.depth_begin(i))
                                                                 : add(i, rec.front().distance, SampleRole::silhouette);
    }
  }
  if (opts.normals) {
    for (std::size_t i = 0; i < h.pixels; ++i) {
      if (st.status[i] != RayStatus::converged) continue;
      const double d = ray_distance(st, i, r.config.alpha);
      const Vec3 p = st.rays.origin + d * st.rays.directions[i];
      h.normal_first[i] = static_cast<std::int64_t>(h.samples.size());
      for (const Vec3& o : detail::normal_offsets()) h.samples.push_back({i, d, p + h.delta * o, SampleRole::normal});
    }
  }

  std::vector<Vec3> pts(h.samples.size());
  for (std::size_t s = 0; s < pts.size(); ++s) pts[s] = h.samples[s].position;
  h.taped = field.eval_taped(pts, code);
  return h;
}

/// d(miss value)/d(origin, direction) for a ray that missed the unit sphere, scaled by `upstream`.
inline RayGradient miss_silhouette_gradient(const TraceState& s, std::size_t ray, double upstream) {
  const Vec3& c = s.rays.origin;
  const Vec3& v = s.rays.directions[ray];
  const double cv = c.dot(v);
  RayGradient g;
  g.ray = ray;
  if (cv < 0.0) {
    const double closest = std::sqrt(std::max(0.0, c.squaredNorm() - cv * cv));
    if (closest == 0.0) return g;
    g.grad_origin = upstream * (c - cv * v) / closest;
    g.grad_direction = upstream * (-cv * c) / closest;
  } else {
    g.grad_origin = upstream * c.normalized();
  }
  return g;
}

}  // namespace difftrace
