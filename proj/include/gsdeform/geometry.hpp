#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <vector>

namespace gsdeform {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Quaternion stored as (w, x, y, z). Values may be unnormalized; every
/// consumer normalizes before converting to a rotation.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }
  double norm() const;
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  Quat operator-() const { return {-w, -x, -y, -z}; }
  Eigen::Vector4d coeffs() const { return {w, x, y, z}; }
  static Quat from_coeffs(const Eigen::Vector4d& c) { return {c[0], c[1], c[2], c[3]}; }
};

/// Normalized copy; throws kInvalidInput on a zero-norm quaternion.
Quat normalized(const Quat& q);

/// Rotation matrix of q/|q|. R(q) == R(-q).
Mat3 quat_to_rot(const Quat& q);

/// Unit quaternion for an orthonormal matrix (w >= 0).
Quat rot_to_quat(const Mat3& r);

/// Hamilton product q1 * q2, normalized. R(q1*q2) = R(q1) R(q2).
Quat quat_compose(const Quat& q1, const Quat& q2);

/// Unit quaternion rotating by `angle` radians about `axis`.
Quat quat_from_axis_angle(const Vec3& axis, double angle);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

Mat3 skew(const Vec3& v);
/// Rodrigues exponential of a rotation vector.
Mat3 so3_exp(const Vec3& omega);
/// Inverse of so3_exp on the principal branch.
Vec3 so3_log(const Mat3& r);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) after `other`: x -> this(other(x)).
  RigidTransform compose(const RigidTransform& other) const;
  Mat4 matrix() const;
  static RigidTransform from_matrix(const Mat4& m);
  bool is_proper(double tol = 1e-6) const;
};

struct Gaussian {
  Vec3 mu = Vec3::Zero();
  Quat q;
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  std::vector<float> sh;  // opaque payload, never interpreted
};

using GaussianSet = std::vector<Gaussian>;

std::vector<Vec3> positions(const GaussianSet& gaussians);

/// Length of the axis-aligned bounding-box diagonal. Zero for < 2 points.
double scene_extent(const std::vector<Vec3>& points);

struct Camera {
  int id = 0;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  RigidTransform world_to_camera;

  Vec3 to_camera(const Vec3& world) const { return world_to_camera.apply(world); }
  /// Pinhole projection; throws kBehindCamera for depth <= 0.
  Vec2 project(const Vec3& world) const;
  /// Same as project() but returns nullopt instead of throwing.
  std::optional<Vec2> try_project(const Vec3& world) const;
  bool contains(const Vec2& pixel) const;
  /// Camera centre in world coordinates.
  Vec3 center() const;

  static Camera look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& up, double f,
                        int width, int height);
};

Vec2 project(const Camera& camera, const Vec3& point);

}  // namespace gsdeform
