#pragma once

// Image-plane losses. Each returns its value plus the gradient with respect to
// the quantity it consumes (surrogate depths, soft silhouettes, raw normals,
// rendered depths); the drivers turn those into head seeds.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <span>
#include <vector>

#include "difftrace/camera.hpp"
#include "difftrace/image.hpp"
#include "difftrace/shading.hpp"

namespace difftrace {

enum class ObservationKind { depth, silhouette, normal, color };

/// One observed map plus a validity mask (sparse depth keeps only sampled pixels).
struct Observation {
  ObservationKind kind = ObservationKind::depth;
  Image image;
  std::vector<std::uint8_t> mask;

  std::size_t pixels() const { return image.pixels(); }
  bool valid(std::size_t p) const { return mask.empty() || mask[p] != 0; }

  void check(ObservationKind expected, std::size_t pixels_expected) const {
    if (kind != expected) throw ConfigError("observation has the wrong kind");
    if (image.pixels() != pixels_expected) throw ConfigError("observation resolution does not match the render");
    if (!mask.empty() && mask.size() != image.pixels()) throw ConfigError("observation mask size mismatch");
  }
};

/// Depth observation from a rendered map; background (+inf) pixels become invalid.
inline Observation depth_observation(const RenderMaps& maps) {
  Observation o{ObservationKind::depth, Image::zeros(maps.width, maps.height), {}};
  o.mask.assign(maps.size(), 0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (std::isfinite(maps.depth[i])) {
      o.image.data[i] = maps.depth[i];
      o.mask[i] = 1;
    }
  }
  return o;
}

inline Observation silhouette_observation(const RenderMaps& maps) {
  Observation o{ObservationKind::silhouette, Image::zeros(maps.width, maps.height), {}};
  for (std::size_t i = 0; i < maps.size(); ++i) o.image.data[i] = maps.hard_mask[i] ? 1.0 : 0.0;
  return o;
}

inline Observation normal_observation(const RenderMaps& maps) {
  Observation o{ObservationKind::normal, Image::zeros(maps.width, maps.height, 3), {}};
  o.mask.assign(maps.size(), 0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (!maps.normal_valid[i]) continue;
    for (int c = 0; c < 3; ++c) o.image.data[3 * i + static_cast<std::size_t>(c)] = maps.normal[i][c];
    o.mask[i] = 1;
  }
  return o;
}

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
  std::size_t count = 0;  // pixels that contributed
};

inline double l1_sign(double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }

/// Masked L1 on camera-space depth. z holds per-sample depths grouped per pixel by
/// offsets (size pixels + 1); every sample of a pixel carries weight 1/K.
inline LossResult depth_loss(std::span<const double> z, std::span<const std::size_t> offsets, const Observation& obs) {
  if (offsets.empty()) throw ConfigError("depth_loss: empty offsets");
  const std::size_t pixels = offsets.size() - 1;
  obs.check(ObservationKind::depth, pixels);
  LossResult out;
  out.grad.assign(z.size(), 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    if (offsets[p + 1] > offsets[p] && obs.valid(p)) ++out.count;
  }
  if (out.count == 0) {
    std::cerr << "difftrace: depth loss has no overlap between observation and render\n";
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(out.count);
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::size_t k = offsets[p + 1] - offsets[p];
    if (k == 0 || !obs.valid(p)) continue;
    const double w = inv_n / static_cast<double>(k);
    for (std::size_t s = offsets[p]; s < offsets[p + 1]; ++s) {
      const double r = z[s] - obs.image.data[p];
      out.value += w * std::abs(r);
      out.grad[s] = w * l1_sign(r);
    }
  }
  return out;
}

/// Hinge silhouette loss S_gt max(0, S_r) + (1 - S_gt) max(0, -S_r), mean over the image.
/// Pixels with a non-finite soft value are skipped.
inline LossResult silhouette_loss(std::span<const double> soft, const Observation& obs) {
  obs.check(ObservationKind::silhouette, soft.size());
  LossResult out;
  out.grad.assign(soft.size(), 0.0);
  if (soft.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(soft.size());
  for (std::size_t p = 0; p < soft.size(); ++p) {
    if (!obs.valid(p) || !std::isfinite(soft[p])) continue;
    ++out.count;
    const double gt = obs.image.data[p];
    if (gt != 0.0 && gt != 1.0) throw ConfigError("silhouette observation must be binary");
    if (gt == 1.0 && soft[p] > 0.0) {
      out.value += inv_n * soft[p];
      out.grad[p] = inv_n;
    } else if (gt == 0.0 && soft[p] < 0.0) {
      out.value -= inv_n * soft[p];
      out.grad[p] = -inv_n;
    }
  }
  return out;
}

struct NormalLossResult {
  double value = 0.0;
  std::vector<Vec3> grad;  // with respect to the raw (unnormalized) normals
  std::size_t count = 0;
};

/// Mean of -n.n_obs over pixels valid in the observation with a non-degenerate render.
inline NormalLossResult normal_loss(std::span<const Vec3> raw, std::span<const std::uint8_t> rendered_valid,
                                    const Observation& obs) {
  obs.check(ObservationKind::normal, raw.size());
  if (obs.image.channels != 3) throw ConfigError("normal observation needs 3 channels");
  NormalLossResult out;
  out.grad.assign(raw.size(), Vec3::Zero());
  auto usable = [&](std::size_t p) {
    return obs.valid(p) && (rendered_valid.empty() || rendered_valid[p]) && raw[p].norm() > 0.0;
  };
  for (std::size_t p = 0; p < raw.size(); ++p) out.count += usable(p) ? 1 : 0;
  if (out.count == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(out.count);
  for (std::size_t p = 0; p < raw.size(); ++p) {
    if (!usable(p)) continue;
    const Vec3 o(obs.image.data[3 * p], obs.image.data[3 * p + 1], obs.image.data[3 * p + 2]);
    const double len = raw[p].norm();
    const Vec3 n = raw[p] / len;
    out.value -= inv_n * n.dot(o);
    out.grad[p] = -inv_n * (o - n.dot(o) * n) / len;
  }
  return out;
}

/// (reprojected z - rendered z)^2 < threshold; background on either side is invisible.
inline std::vector<std::uint8_t> visibility_mask(std::span<const double> reprojected, std::span<const double> rendered,
                                                 double threshold = 1e-3) {
  if (reprojected.size() != rendered.size()) throw ConfigError("visibility_mask: size mismatch");
  std::vector<std::uint8_t> mask(reprojected.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!std::isfinite(reprojected[i]) || !std::isfinite(rendered[i])) continue;
    const double d = reprojected[i] - rendered[i];
    mask[i] = d * d < threshold ? 1 : 0;
  }
  return mask;
}

/// One view of a multi-view set: camera plus grayscale image.
struct View {
  Intrinsics intrinsics;
  Pose pose;
  Image gray;
};

struct PhotometricResult {
  double value = 0.0;
  std::vector<double> grad;  // d loss / d depth_i per pixel
  std::size_t visible = 0;
  std::vector<std::uint8_t> visibility;
};

/// L1 between I_i and I_j warped into view i through the rendered depth of view i.
/// depth_j (rendered in view j) decides visibility; out-of-frame and behind-camera
/// projections count as invisible. The mask is held fixed for the gradient.
inline PhotometricResult photometric_loss(const View& vi, std::span<const double> depth_i, const View& vj,
                                          std::span<const double> depth_j, double visibility_threshold = 1e-3) {
  const Intrinsics& ki = vi.intrinsics;
  const Intrinsics& kj = vj.intrinsics;
  if (depth_i.size() != vi.gray.pixels() || depth_j.size() != vj.gray.pixels()) {
    throw ConfigError("photometric_loss: depth and image sizes differ");
  }
  if (vi.gray.channels != 1 || vj.gray.channels != 1) throw ConfigError("photometric_loss expects grayscale images");
  const Mat3 ri_t = vi.pose.rotation_matrix().transpose();
  const Mat3 rj = vj.pose.rotation_matrix();
  PhotometricResult out;
  const std::size_t n = depth_i.size();
  out.grad.assign(n, 0.0);
  out.visibility.assign(n, 0);
  std::vector<double> reproj(n, kBackgroundDepth);
  std::vector<double> rendered(n, kBackgroundDepth);
  std::vector<Vec2> uv(n);
  std::vector<Vec3> pcs(n);
  for (int y = 0; y < vi.gray.height; ++y) {
    for (int x = 0; x < vi.gray.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(vi.gray.width) + static_cast<std::size_t>(x);
      if (!std::isfinite(depth_i[p])) continue;
      const Vec3 world = ri_t * (ki.normalized(x + 0.5, y + 0.5) * depth_i[p] - vi.pose.translation);
      const Vec3 pc = rj * world + vj.pose.translation;
      if (!(pc.z() > 0.0)) continue;
      const double u = kj.fx() * pc.x() / pc.z() + kj.cx();
      const double v = kj.fy() * pc.y() / pc.z() + kj.cy();
      if (u < 0.0 || v < 0.0 || u >= kj.width || v >= kj.height) continue;
      reproj[p] = pc.z();
      rendered[p] = depth_j[static_cast<std::size_t>(v) * static_cast<std::size_t>(kj.width) + static_cast<std::size_t>(u)];
      uv[p] = Vec2(u, v);
      pcs[p] = pc;
    }
  }
  out.visibility = visibility_mask(reproj, rendered, visibility_threshold);
  for (std::size_t p = 0; p < n; ++p) out.visible += out.visibility[p];
  if (out.visible == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(out.visible);
  for (int y = 0; y < vi.gray.height; ++y) {
    for (int x = 0; x < vi.gray.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(vi.gray.width) + static_cast<std::size_t>(x);
      if (!out.visibility[p]) continue;
      const BilinearSample s = sample_bilinear(vj.gray, uv[p].x(), uv[p].y());
      const double r = vi.gray.data[p] - s.value;
      out.value += inv_n * std::abs(r);
      // dpc/dz = Rj Ri^T h
      const Vec3 dpc = rj * (ri_t * ki.normalized(x + 0.5, y + 0.5));
      const Vec3& pc = pcs[p];
      const double iz = 1.0 / pc.z();
      const double du = kj.fx() * (dpc.x() * iz - pc.x() * dpc.z() * iz * iz);
      const double dv = kj.fy() * (dpc.y() * iz - pc.y() * dpc.z() * iz * iz);
      out.grad[p] = -inv_n * l1_sign(r) * (s.du * du + s.dv * dv);
    }
  }
  return out;
}

/// ||z||^2 and its gradient 2z.
inline LossResult latent_reg(std::span<const double> code) {
  LossResult out;
  out.grad.resize(code.size());
  for (std::size_t i = 0; i < code.size(); ++i) {
    out.value += code[i] * code[i];
    out.grad[i] = 2.0 * code[i];
  }
  out.count = code.size();
  return out;
}

struct LossWeights {
  double depth = 10.0;
  double silhouette = 1.0;
  double normal = 1.0;
  double photometric = 5.0;
  double reg = 1.0;

  void validate() const {
    if (depth < 0 || silhouette < 0 || normal < 0 || photometric < 0 || reg < 0) {
      throw ConfigError("loss weights must be nonnegative");
    }
  }
};

}  // namespace difftrace
