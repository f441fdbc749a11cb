#pragma once

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "difftrace/error.hpp"
#include "difftrace/field.hpp"

namespace difftrace {

using Vec2 = Eigen::Vector2d;

/// Pinhole intrinsics in physical units. Pixels are square with pitch sensor/width.
struct Intrinsics {
  double focal_mm = 60.0;
  double sensor_mm = 32.0;
  int width = 512;
  int height = 512;
  std::optional<double> cx_override;
  std::optional<double> cy_override;

  double fx() const { return focal_mm * width / sensor_mm; }
  double fy() const { return fx(); }
  double cx() const { return cx_override.value_or(0.5 * width); }
  double cy() const { return cy_override.value_or(0.5 * height); }

  void validate() const {
    if (!(focal_mm > 0.0) || !(sensor_mm > 0.0) || width < 1 || height < 1) {
      throw ConfigError("degenerate intrinsics (need f > 0, S > 0, resolution >= 1)");
    }
  }

  /// Same camera at 1/level resolution per dimension.
  Intrinsics downsampled(int level) const {
    if (level < 1 || width % level != 0 || height % level != 0) {
      throw ConfigError("resolution " + std::to_string(width) + "x" + std::to_string(height) +
                        " is not divisible by level " + std::to_string(level));
    }
    Intrinsics out = *this;
    out.width = width / level;
    out.height = height / level;
    if (cx_override) out.cx_override = *cx_override / level;
    if (cy_override) out.cy_override = *cy_override / level;
    return out;
  }

  /// (x~, y~, 1) = K^-1 (u, v, 1) for a continuous pixel coordinate.
  Vec3 normalized(double u, double v) const { return Vec3((u - cx()) / fx(), (v - cy()) / fy(), 1.0); }
};

inline Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return k;
}

/// Rodrigues formula.
inline Mat3 rotation_from_axis_angle(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-6) return Mat3::Identity() + k + 0.5 * k * k;
  return Mat3::Identity() + (std::sin(theta) / theta) * k + ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

inline Vec3 axis_angle_from_rotation(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// dR/dw_i for the Rodrigues map, i = 0..2.
inline std::array<Mat3, 3> rotation_jacobian(const Vec3& w) {
  std::array<Mat3, 3> d;
  const double theta2 = w.squaredNorm();
  if (theta2 < 1e-8) {
    const Mat3 k = skew(w);
    for (int i = 0; i < 3; ++i) {
      const Mat3 ei = skew(Vec3::Unit(i));
      d[static_cast<std::size_t>(i)] = ei + 0.5 * (ei * k + k * ei);
    }
    return d;
  }
  const Mat3 r = rotation_from_axis_angle(w);
  const Mat3 k = skew(w);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 col = w.cross(i_minus_r.col(i));
    d[static_cast<std::size_t>(i)] = ((w[i] * k + skew(col)) / theta2) * r;
  }
  return d;
}

/// World-to-camera transform x_cam = R(rotation) x_world + translation, with
/// camera axes x right, y down, z forward.
struct Pose {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  Mat3 rotation_matrix() const { return rotation_from_axis_angle(rotation); }
  Vec3 center() const { return -(rotation_matrix().transpose() * translation); }

  static Pose from_matrix(const Mat3& r, const Vec3& t) { return Pose{axis_angle_from_rotation(r), t}; }

  /// Camera at eye looking at target; image "up" follows the given world direction.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0.0, 1.0, 0.0)) {
    const Vec3 z = (target - eye).normalized();
    Vec3 y = -(up - up.dot(z) * z);
    if (y.norm() < 1e-12) y = Vec3(z.y(), -z.x(), 0.0).norm() > 1e-12 ? Vec3(z.y(), -z.x(), 0.0) : Vec3(1, 0, 0);
    y.normalize();
    const Vec3 x = y.cross(z);
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    return from_matrix(r, -r * eye);
  }

  std::array<double, 6> as_array() const {
    return {rotation.x(), rotation.y(), rotation.z(), translation.x(), translation.y(), translation.z()};
  }
  static Pose from_array(std::span<const double> p) {
    return Pose{Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5])};
  }
};

/// Per-pixel rays of one camera at one resolution level. All origins equal the camera center.
struct RayBundle {
  int width = 0;
  int height = 0;
  int level = 1;
  Vec3 origin = Vec3::Zero();
  std::vector<Vec3> directions;  // world frame, unit
  std::vector<Vec3> camera_dirs;  // unit, camera frame
  std::vector<double> depth_scale;  // sqrt(x~^2 + y~^2 + 1)

  std::size_t size() const { return directions.size(); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
};

/// One ray through each pixel center (x + 0.5, y + 0.5) of the grid at 1/level resolution.
inline RayBundle generate_rays(const Intrinsics& intr, const Pose& pose, int level = 1) {
  intr.validate();
  const Intrinsics grid = intr.downsampled(level);
  const Mat3 rt = pose.rotation_matrix().transpose();
  RayBundle b;
  b.width = grid.width;
  b.height = grid.height;
  b.level = level;
  b.origin = pose.center();
  const std::size_t n = static_cast<std::size_t>(grid.width) * static_cast<std::size_t>(grid.height);
  b.directions.resize(n);
  b.camera_dirs.resize(n);
  b.depth_scale.resize(n);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const Vec3 h = grid.normalized(x + 0.5, y + 0.5);
      const double len = h.norm();
      const std::size_t i = b.index(x, y);
      b.camera_dirs[i] = h / len;
      b.directions[i] = (rt * b.camera_dirs[i]).normalized();
      b.depth_scale[i] = len;
    }
  }
  return b;
}

struct Projection {
  Vec2 pixel = Vec2::Zero();  // continuous coordinates; pixel centers sit at k + 0.5
  double depth = 0.0;         // camera-space z
  bool in_front = false;      // depth > 0
};

inline std::vector<Projection> project(std::span<const Vec3> points, const Intrinsics& intr, const Pose& pose) {
  intr.validate();
  const Mat3 r = pose.rotation_matrix();
  std::vector<Projection> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = r * points[i] + pose.translation;
    Projection& pr = out[i];
    pr.depth = pc.z();
    pr.in_front = pc.z() > 0.0;
    if (pr.in_front) pr.pixel = Vec2(intr.fx() * pc.x() / pc.z() + intr.cx(), intr.fy() * pc.y() / pc.z() + intr.cy());
  }
  return out;
}

/// World point seen at continuous pixel (u, v) with camera-space depth z.
inline Vec3 unproject(double u, double v, double depth, const Intrinsics& intr, const Pose& pose) {
  const Vec3 pc = intr.normalized(u, v) * depth;
  return pose.rotation_matrix().transpose() * (pc - pose.translation);
}

struct PoseGradient {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  std::array<double, 6> as_array() const {
    return {rotation.x(), rotation.y(), rotation.z(), translation.x(), translation.y(), translation.z()};
  }
};

/// Upstream gradient dL/dp for a sample p = c + d v on ray `ray`, with d frozen.
struct SampleGradient {
  std::size_t ray = 0;
  double distance = 0.0;
  Vec3 grad_point = Vec3::Zero();
};

/// Upstream gradients on a ray's origin and direction (e.g. unit-sphere miss silhouettes).
struct RayGradient {
  std::size_t ray = 0;
  Vec3 grad_origin = Vec3::Zero();
  Vec3 grad_direction = Vec3::Zero();
};

/// Chain rule from per-ray origin/direction gradients to the 6 pose parameters.
inline PoseGradient pose_gradient(const RayBundle& rays, const Pose& pose, std::span<const RayGradient> upstream) {
  const Mat3 r = pose.rotation_matrix();
  Vec3 gc_total = Vec3::Zero();
  Mat3 m = Mat3::Zero();  // sum of (-t) gc^T + u gv^T
  for (const RayGradient& g : upstream) {
    if (g.ray >= rays.size()) throw ConfigError("pose_gradient: ray index out of range");
    gc_total += g.grad_origin;
    m += -pose.translation * g.grad_origin.transpose() + rays.camera_dirs[g.ray] * g.grad_direction.transpose();
  }
  PoseGradient out;
  out.translation = -(r * gc_total);
  const auto dr = rotation_jacobian(pose.rotation);
  for (int i = 0; i < 3; ++i) out.rotation[i] = dr[static_cast<std::size_t>(i)].cwiseProduct(m).sum();
  return out;
}

inline PoseGradient pose_gradient(const RayBundle& rays, const Pose& pose, std::span<const SampleGradient> samples) {
  std::vector<RayGradient> upstream;
  upstream.reserve(samples.size());
  for (const SampleGradient& s : samples) upstream.push_back({s.ray, s.grad_point, s.distance * s.grad_point});
  return pose_gradient(rays, pose, std::span<const RayGradient>(upstream));
}

/// n cameras on a sphere of the given radius (Fibonacci lattice), all looking at the origin.
inline std::vector<Pose> orbit_poses(std::size_t n, double radius, double phase = 0.0) {
  if (n == 0 || !(radius > 1.0)) throw ConfigError("orbit_poses: need n >= 1 and radius > 1");
  std::vector<Pose> poses;
  poses.reserve(n);
  const double golden = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double a = golden * static_cast<double>(i) + phase;
    const Vec3 eye = radius * Vec3(r * std::cos(a), y, r * std::sin(a));
    poses.push_back(Pose::look_at(eye, Vec3::Zero()));
  }
  return poses;
}

}  // namespace difftrace
