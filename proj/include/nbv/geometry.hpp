#pragma once

// Pinhole cameras, hemisphere viewpoints, rays and positional encoding.
//
// Camera frame convention: x right, y down, z forward (optical axis).
// Poses are world-from-camera; the translation is the camera centre.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "nbv/core.hpp"

namespace nbv {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx > 0 && cx < width && cy > 0 &&
           cy < height;
  }
  void validate() const { require(valid(), "Intrinsics: invalid focal length, principal point or size"); }

  /// Same field of view sampled on a different pixel grid.
  Intrinsics rescaled(int new_width, int new_height) const {
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
  }

  /// Square image with the given horizontal field of view and a centred principal point.
  static Intrinsics from_fov(int width, int height, double horizontal_fov) {
    const double f = 0.5 * width / std::tan(0.5 * horizontal_fov);
    return {f, f, 0.5 * width, 0.5 * height, width, height};
  }

  bool operator==(const Intrinsics&) const = default;
};

struct Pose {
  Mat3 rotation = Mat3::Identity();  // world-from-camera
  Vec3 translation = Vec3::Zero();   // camera centre in world

  bool is_rotation(double tol = 1e-6) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  Vec3 centre() const { return translation; }
  Vec3 optical_axis() const { return rotation.col(2); }

  Pose inverse() const { return {rotation.transpose(), -rotation.transpose() * translation}; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
  static Pose from_matrix(const Mat4& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }
};

struct CameraView {
  Intrinsics intrinsics;
  Pose pose;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

/// A camera position on a scene-centric hemisphere, always looking at the centre.
struct SphericalViewpoint {
  double azimuth = 0.0;    // [0, 2pi)
  double elevation = 0.0;  // [0, pi/2]
  double radius = 1.0;
  Vec3 centre = Vec3::Zero();

  /// Unit vector from the centre towards the camera.
  Vec3 direction() const {
    const double ce = std::cos(elevation);
    return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation)};
  }
  Vec3 position() const { return centre + radius * direction(); }

  void validate() const {
    require(radius > 0, "SphericalViewpoint: radius must be positive");
    require(elevation >= -1e-12 && elevation <= std::numbers::pi / 2 + 1e-12,
            "SphericalViewpoint: elevation outside [0, pi/2]");
  }

  /// Viewpoint whose camera sits at `centre + radius * dir` (dir need not be unit).
  static SphericalViewpoint from_direction(const Vec3& dir, double radius, const Vec3& centre) {
    const Vec3 u = dir.normalized();
    double az = std::atan2(u.y(), u.x());
    if (az < 0) az += 2 * std::numbers::pi;
    if (az >= 2 * std::numbers::pi) az = 0.0;
    const double el = std::asin(std::clamp(u.z(), -1.0, 1.0));
    return {az, el, radius, centre};
  }
};

/// Look-at pose for a hemisphere viewpoint. Up is world +z made orthogonal to the
/// optical axis; exactly at the zenith world +x is used instead.
inline Pose pose_from_spherical(const SphericalViewpoint& v) {
  v.validate();
  const Vec3 position = v.position();
  const Vec3 forward = (v.centre - position).normalized();
  Vec3 up = Vec3::UnitZ() - forward.dot(Vec3::UnitZ()) * forward;
  if (up.norm() < 1e-9) {
    up = Vec3::UnitX() - forward.dot(Vec3::UnitX()) * forward;
  }
  up.normalize();
  const Vec3 y_axis = -up;
  const Vec3 x_axis = y_axis.cross(forward);
  Pose pose;
  pose.rotation.col(0) = x_axis;
  pose.rotation.col(1) = y_axis;
  pose.rotation.col(2) = forward;
  pose.translation = position;
  return pose;
}

/// Recovers the hemisphere viewpoint of a camera relative to `centre`.
inline SphericalViewpoint spherical_from_pose(const Pose& pose, const Vec3& centre) {
  const Vec3 offset = pose.translation - centre;
  return SphericalViewpoint::from_direction(offset, offset.norm(), centre);
}

/// Pinhole back-projection of a (sub-)pixel position to a world ray.
inline Ray ray_through_pixel(const Intrinsics& intr, const Pose& pose, const Vec2& pixel) {
  const Vec3 d_cam((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0);
  return {pose.translation, (pose.rotation * d_cam).normalized()};
}

/// Position and direction expressed in a reference camera frame.
inline std::pair<Vec3, Vec3> transform_to_reference(const Pose& ref, const Vec3& x_world,
                                                    const Vec3& d_world) {
  const Mat3 rt = ref.rotation.transpose();
  return {rt * (x_world - ref.translation), rt * d_world};
}

inline constexpr double kMinProjectionDepth = 1e-6;

/// Pinhole projection of a camera-frame point. Empty when the point is behind the
/// camera (z <= 1e-6) or lands outside [0,width]x[0,height].
inline std::optional<Vec2> project_to_pixel(const Intrinsics& intr, const Vec3& x_cam) {
  if (!(x_cam.z() > kMinProjectionDepth)) return std::nullopt;
  const double u = intr.fx * x_cam.x() / x_cam.z() + intr.cx;
  const double v = intr.fy * x_cam.y() / x_cam.z() + intr.cy;
  if (!(u >= 0 && u <= intr.width && v >= 0 && v <= intr.height)) return std::nullopt;
  return Vec2(u, v);
}

inline constexpr int positional_encoding_size(int n_freq) { return 3 + 6 * n_freq; }

/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(n-1) pi x), cos(2^(n-1) pi x)],
/// each trig block covering the three coordinates.
inline Eigen::VectorXd positional_encoding(const Vec3& x, int n_freq) {
  require(n_freq >= 0, "positional_encoding: n_freq must be >= 0");
  Eigen::VectorXd out(positional_encoding_size(n_freq));
  out.head<3>() = x;
  double scale = std::numbers::pi;
  for (int j = 0; j < n_freq; ++j, scale *= 2.0) {
    for (int k = 0; k < 3; ++k) {
      out[3 + 6 * j + k] = std::sin(scale * x[k]);
      out[3 + 6 * j + 3 + k] = std::cos(scale * x[k]);
    }
  }
  return out;
}

/// Pose feature (gamma(x_n), d_n) of a sample point in one reference frame.
struct PoseFeature {
  Eigen::VectorXd encoded_position;
  Vec3 direction;

  Eigen::VectorXd concatenated() const {
    Eigen::VectorXd out(encoded_position.size() + 3);
    out << encoded_position, direction;
    return out;
  }
};

inline PoseFeature make_pose_feature(const Vec3& x_ref, const Vec3& d_ref, int n_freq) {
  return {positional_encoding(x_ref, n_freq), d_ref.normalized()};
}

/// Angle between the camera-centre directions of two viewpoints on the same sphere.
inline double angular_distance(const SphericalViewpoint& a, const SphericalViewpoint& b) {
  require((a.centre - b.centre).norm() <= 1e-9 * std::max(1.0, a.centre.norm()),
          "angular_distance: viewpoints have different centres");
  require(std::abs(a.radius - b.radius) <= 1e-9 * std::max(1.0, a.radius),
          "angular_distance: viewpoints have different radii");
  const Vec3 ua = a.direction();
  const Vec3 ub = b.direction();
  return std::atan2(ua.cross(ub).norm(), ua.dot(ub));
}

/// Uniform sample from the part of the spherical cap of half-angle `max_angle`
/// around `current` that lies on the hemisphere with elevation >= min_elevation.
inline SphericalViewpoint sample_view_within_cone(const SphericalViewpoint& current, double max_angle,
                                                  Rng& rng, double min_elevation = 0.0) {
  require(max_angle > 0 && max_angle <= std::numbers::pi + 1e-12,
          "sample_view_within_cone: max_angle outside (0, pi]");
  require(current.elevation >= min_elevation - 1e-12,
          "sample_view_within_cone: current view below the minimum elevation");
  const Vec3 axis = current.direction();
  const Vec3 helper = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 e1 = axis.cross(helper).normalized();
  const Vec3 e2 = axis.cross(e1);
  const double cos_max = std::cos(max_angle);
  const double sin_min_el = std::sin(min_elevation);
  for (;;) {
    const double cos_theta = rng.uniform(cos_max, 1.0);
    const double phi = rng.uniform(0.0, 2 * std::numbers::pi);
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const Vec3 dir = cos_theta * axis + sin_theta * (std::cos(phi) * e1 + std::sin(phi) * e2);
    if (dir.z() < sin_min_el) continue;
    SphericalViewpoint out = SphericalViewpoint::from_direction(dir, current.radius, current.centre);
    // Guard against round-off pushing the sample just past the cap boundary.
    if (angular_distance(current, out) > max_angle) continue;
    return out;
  }
}

/// Uniform random viewpoint on the hemisphere cap with elevation >= min_elevation.
inline SphericalViewpoint sample_hemisphere_view(double radius, const Vec3& centre, Rng& rng,
                                                 double min_elevation = 0.0) {
  const double z = rng.uniform(std::sin(min_elevation), 1.0);
  const double az = rng.uniform(0.0, 2 * std::numbers::pi);
  return {az, std::asin(z), radius, centre};
}

/// Area-uniform Fibonacci lattice on the hemisphere cap elevation >= min_elevation.
inline std::vector<SphericalViewpoint> fibonacci_hemisphere(int n, double radius, const Vec3& centre,
                                                            double min_elevation) {
  require(n >= 1, "fibonacci_hemisphere: n must be >= 1");
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double z_lo = std::sin(min_elevation);
  std::vector<SphericalViewpoint> views;
  views.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z = z_lo + (1.0 - z_lo) * (i + 0.5) / n;
    double az = std::fmod(i * golden_angle, 2 * std::numbers::pi);
    views.push_back({az, std::asin(z), radius, centre});
  }
  return views;
}

}  // namespace nbv
