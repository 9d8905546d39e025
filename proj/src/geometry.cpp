#include "gsdeform/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "gsdeform/error.hpp"

namespace gsdeform {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat normalized(const Quat& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::kInvalidInput, "quaternion has zero or non-finite norm");
  }
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Mat3 quat_to_rot(const Quat& q_in) {
  const Quat q = normalized(q_in);
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat rot_to_quat(const Mat3& r) {
  Eigen::Quaterniond e(r);
  e.normalize();
  Quat q{e.w(), e.x(), e.y(), e.z()};
  if (q.w < 0) q = -q;
  return q;
}

Quat quat_compose(const Quat& a_in, const Quat& b_in) {
  const Quat a = normalized(a_in);
  const Quat b = normalized(b_in);
  Quat c{a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
         a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
         a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
         a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  return normalized(c);
}

Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw Error(ErrorCode::kInvalidInput, "rotation axis has zero length");
  const Vec3 a = axis / n * std::sin(angle / 2);
  return {std::cos(angle / 2), a.x(), a.y(), a.z()};
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-12) return Mat3::Identity() + k;
  return Mat3::Identity() + std::sin(theta) / theta * k +
         (1 - std::cos(theta)) / (theta * theta) * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

bool RigidTransform::is_proper(double tol) const {
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(rotation.determinant() - 1.0) < tol;
}

std::vector<Vec3> positions(const GaussianSet& gaussians) {
  std::vector<Vec3> out;
  out.reserve(gaussians.size());
  for (const auto& g : gaussians) out.push_back(g.mu);
  return out;
}

double scene_extent(const std::vector<Vec3>& points) {
  if (points.size() < 2) return 0.0;
  Vec3 lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

std::optional<Vec2> Camera::try_project(const Vec3& world) const {
  const Vec3 p = to_camera(world);
  if (!(p.z() > 0.0)) return std::nullopt;
  return Vec2(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
}

Vec2 Camera::project(const Vec3& world) const {
  auto px = try_project(world);
  if (!px) throw Error(ErrorCode::kBehindCamera, "point has non-positive camera depth");
  return *px;
}

bool Camera::contains(const Vec2& pixel) const {
  return pixel.x() >= 0 && pixel.y() >= 0 && pixel.x() < width && pixel.y() < height;
}

Vec3 Camera::center() const { return world_to_camera.inverse().translation; }

Camera Camera::look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& up, double f,
                       int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = (-up).cross(forward).normalized();
  const Vec3 down = forward.cross(right);
  Camera cam;
  cam.id = id;
  cam.fx = cam.fy = f;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  cam.world_to_camera.rotation.row(0) = right;
  cam.world_to_camera.rotation.row(1) = down;
  cam.world_to_camera.rotation.row(2) = forward;
  cam.world_to_camera.translation = -(cam.world_to_camera.rotation * eye);
  return cam;
}

Vec2 project(const Camera& camera, const Vec3& point) { return camera.project(point); }

}  // namespace gsdeform
