#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gsdeform/error.hpp"
#include "gsdeform/geometry.hpp"
#include "test_util.hpp"

using namespace gsdeform;
using gsdeform::testing::random_quat;
using gsdeform::testing::random_vec;

TEST_CASE("quat_to_rot analytic cases") {
  CHECK(quat_to_rot(Quat::identity()).isApprox(Mat3::Identity()));
  const Mat3 r = quat_to_rot({0, 0, 0, 1});
  CHECK((r - Eigen::Vector3d(-1, -1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-15);
  CHECK_THROWS_AS(quat_to_rot({0, 0, 0, 0}), Error);
}

TEST_CASE("quat_to_rot is orthonormal and sign invariant") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    Quat q = random_quat(rng);
    q.w *= 3.0;  // unnormalized input
    const Mat3 r = quat_to_rot(q);
    CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    CHECK((r - quat_to_rot(-q)).norm() < 1e-15);
  }
}

TEST_CASE("quat_compose matches matrix product") {
  std::mt19937_64 rng(11);
  const Quat id = Quat::identity();
  for (int i = 0; i < 100; ++i) {
    const Quat a = random_quat(rng), b = random_quat(rng);
    const Mat3 lhs = quat_to_rot(quat_compose(a, b));
    CHECK((lhs - quat_to_rot(a) * quat_to_rot(b)).cwiseAbs().maxCoeff() < 1e-10);
    const Quat ia = quat_compose(id, a);
    CHECK(std::abs(std::abs(ia.dot(a)) - 1.0) < 1e-12);
    const Quat e = quat_compose(a, a.conjugate());
    CHECK(std::abs(std::abs(e.w) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(quat_compose({0, 0, 0, 0}, id), Error);
}

TEST_CASE("rot_to_quat round trip") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Quat q = random_quat(rng);
    CHECK((quat_to_rot(rot_to_quat(quat_to_rot(q))) - quat_to_rot(q)).norm() < 1e-12);
  }
}

TEST_CASE("so3 exp and log are inverse") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Vec3 w = random_vec(rng, -1.5, 1.5);
    CHECK((so3_log(so3_exp(w)) - w).norm() < 1e-9);
  }
}

TEST_CASE("project analytic cases") {
  const Camera cam = gsdeform::testing::simple_camera(100.0);
  CHECK((project(cam, {0, 0, 5}) - Vec2(0, 0)).norm() < 1e-15);
  CHECK((project(cam, {1, 0, 5}) - Vec2(20, 0)).norm() < 1e-12);
  try {
    project(cam, {0, 0, -1});
    FAIL("expected behind-camera error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBehindCamera);
  }
}

TEST_CASE("projection is depth-scale covariant") {
  const Camera cam = gsdeform::testing::simple_camera(320.0, 320, 240);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    Vec3 p = random_vec(rng);
    p.z() = std::abs(p.z()) + 0.5;
    const double lambda = 0.1 + 3.0 * std::abs(random_vec(rng).x());
    CHECK((project(cam, lambda * p) - project(cam, p)).norm() < 1e-9);
  }
}

TEST_CASE("rigid transform preserves distances") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform t{quat_to_rot(random_quat(rng)), random_vec(rng, -5, 5)};
    CHECK(t.is_proper());
    const Vec3 p = random_vec(rng), q = random_vec(rng);
    CHECK(std::abs((t.apply(p) - t.apply(q)).norm() - (p - q).norm()) < 1e-9);
    CHECK((t.inverse().apply(t.apply(p)) - p).norm() < 1e-12);
  }
}

TEST_CASE("look_at puts the target on the optical axis") {
  const Camera cam = Camera::look_at(0, {3, 1, 2}, {0, 0, 0}, {0, 1, 0}, 500, 640, 480);
  CHECK((cam.project({0, 0, 0}) - Vec2(320, 240)).norm() < 1e-9);
  CHECK(cam.world_to_camera.is_proper());
  CHECK((cam.center() - Vec3(3, 1, 2)).norm() < 1e-12);
  // World up maps to image up (smaller v).
  CHECK(cam.project({0, 0.1, 0}).y() < 240);
}
