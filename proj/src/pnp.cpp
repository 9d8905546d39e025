#include "gsdeform/pnp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

using Mat34 = Eigen::Matrix<double, 3, 4>;

// Camera-frame pose (R', T') solves p_c = R' p + T'.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

// Absolute orientation: R, t minimizing sum |R a_i + t - b_i|^2.
CameraPose procrustes(std::span<const Vec3> a, std::span<const Vec3> b) {
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a[i];
    cb += b[i];
  }
  ca /= static_cast<double>(a.size());
  cb /= static_cast<double>(b.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) h += (b[i] - cb) * (a[i] - ca).transpose();
  CameraPose pose;
  pose.rotation = nearest_rotation(h);
  pose.translation = cb - pose.rotation * ca;
  return pose;
}

double pose_cost(std::span<const Vec3> pts, std::span<const Vec2> px, const Camera& cam,
                 const CameraPose& pose) {
  double cost = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 pc = pose.rotation * pts[i] + pose.translation;
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    cost += (uv - px[i]).squaredNorm();
  }
  return cost;
}

CameraPose refine_pose(std::span<const Vec3> pts, std::span<const Vec2> px, const Camera& cam,
                       CameraPose pose, int max_iterations) {
  double cost = pose_cost(pts, px, cam, pose);
  if (!std::isfinite(cost)) return pose;
  double damping = 1e-3;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 rp = pose.rotation * pts[i];
      const Vec3 pc = rp + pose.translation;
      const double iz = 1.0 / pc.z();
      const Vec2 r(cam.fx * pc.x() * iz + cam.cx - px[i].x(), cam.fy * pc.y() * iz + cam.cy - px[i].y());
      Eigen::Matrix<double, 2, 3> jp;
      jp << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz, 0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> j;
      j.leftCols<3>() = -jp * skew(rp);
      j.rightCols<3>() = jp;
      jtj += j.transpose() * j;
      jtr += j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal() += damping * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> delta = a.ldlt().solve(-jtr);
      CameraPose trial;
      trial.rotation = so3_exp(delta.head<3>()) * pose.rotation;
      trial.translation = pose.translation + delta.tail<3>();
      const double trial_cost = pose_cost(pts, px, cam, trial);
      if (trial_cost < cost) {
        const double gain = cost - trial_cost;
        pose = trial;
        cost = trial_cost;
        damping = std::max(damping / 10.0, 1e-12);
        improved = true;
        if (delta.norm() < 1e-14 || gain < 1e-18 * (1.0 + cost)) return pose;
        break;
      }
      damping *= 10.0;
    }
    if (!improved) break;
  }
  return pose;
}

struct Pca {
  Vec3 centroid;
  Mat3 axes;        // columns, descending variance, right-handed
  Vec3 singular;    // sqrt of summed squared extents along each axis
};

Pca principal_axes(std::span<const Vec3> pts) {
  Pca pca;
  pca.centroid = Vec3::Zero();
  for (const auto& p : pts) pca.centroid += p;
  pca.centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - pca.centroid) * (p - pca.centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  for (int k = 0; k < 3; ++k) {
    pca.axes.col(k) = es.eigenvectors().col(2 - k);
    pca.singular[k] = std::sqrt(std::max(0.0, es.eigenvalues()[2 - k]));
  }
  if (pca.axes.determinant() < 0) pca.axes.col(2) *= -1;
  return pca;
}

// Linear solve on control-point coordinates lifted from the projection
// equations, followed by the distance-constraint beta recovery.
std::vector<CameraPose> control_point_solutions(std::span<const Vec3> pts, std::span<const Vec2> px,
                                                const Camera& cam, const Pca& pca) {
  const std::size_t n = pts.size();
  Mat34 cw;
  cw.col(0) = pca.centroid;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < 3; ++k) cw.col(k + 1) = pca.centroid + pca.singular[k] * scale * pca.axes.col(k);

  Mat3 basis;
  for (int k = 0; k < 3; ++k) basis.col(k) = cw.col(k + 1) - cw.col(0);
  const Mat3 basis_inv = basis.inverse();

  std::vector<Eigen::Vector4d> alphas(n);
  Eigen::MatrixXd m(2 * n, 12);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = basis_inv * (pts[i] - cw.col(0));
    alphas[i] = Eigen::Vector4d(1.0 - a.sum(), a.x(), a.y(), a.z());
    for (int j = 0; j < 4; ++j) {
      const double al = alphas[i][j];
      m(2 * i, 3 * j) = al * cam.fx;
      m(2 * i, 3 * j + 1) = 0.0;
      m(2 * i, 3 * j + 2) = al * (cam.cx - px[i].x());
      m(2 * i + 1, 3 * j) = 0.0;
      m(2 * i + 1, 3 * j + 1) = al * cam.fy;
      m(2 * i + 1, 3 * j + 2) = al * (cam.cy - px[i].y());
    }
  }
  const Eigen::Matrix<double, 12, 12> mtm = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(mtm);
  // Null-space candidates: eigenvectors of the 4 smallest eigenvalues.
  std::array<Eigen::Matrix<double, 12, 1>, 4> v;
  for (int k = 0; k < 4; ++k) v[k] = es.eigenvectors().col(k);

  static constexpr std::array<std::array<int, 2>, 6> kPairs{
      {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
  Eigen::Matrix<double, 6, 10> l;
  Eigen::Matrix<double, 6, 1> rho;
  for (int p = 0; p < 6; ++p) {
    const int a = kPairs[p][0], b = kPairs[p][1];
    std::array<Vec3, 4> dv;
    for (int k = 0; k < 4; ++k) dv[k] = v[k].segment<3>(3 * a) - v[k].segment<3>(3 * b);
    l.row(p) << dv[0].dot(dv[0]), 2 * dv[0].dot(dv[1]), dv[1].dot(dv[1]), 2 * dv[0].dot(dv[2]),
        2 * dv[1].dot(dv[2]), dv[2].dot(dv[2]), 2 * dv[0].dot(dv[3]), 2 * dv[1].dot(dv[3]),
        2 * dv[2].dot(dv[3]), dv[3].dot(dv[3]);
    rho[p] = (cw.col(a) - cw.col(b)).squaredNorm();
  }

  auto lstsq = [](const Eigen::MatrixXd& a, const Eigen::VectorXd& b) -> Eigen::VectorXd {
    return a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  };

  std::vector<Eigen::Vector4d> betas_list;
  {  // N = 4, linearized on (b00, b01, b02, b03)
    Eigen::MatrixXd a(6, 4);
    a << l.col(0), l.col(1), l.col(3), l.col(6);
    const Eigen::VectorXd b = lstsq(a, rho);
    Eigen::Vector4d beta = Eigen::Vector4d::Zero();
    if (b[0] < 0) {
      beta[0] = std::sqrt(-b[0]);
      for (int k = 1; k < 4; ++k) beta[k] = -b[k] / beta[0];
    } else if (b[0] > 0) {
      beta[0] = std::sqrt(b[0]);
      for (int k = 1; k < 4; ++k) beta[k] = b[k] / beta[0];
    }
    betas_list.push_back(beta);
  }
  {  // N = 2
    Eigen::MatrixXd a(6, 3);
    a << l.col(0), l.col(1), l.col(2);
    const Eigen::VectorXd b = lstsq(a, rho);
    Eigen::Vector4d beta = Eigen::Vector4d::Zero();
    if (b[0] < 0) {
      beta[0] = std::sqrt(-b[0]);
      beta[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      beta[0] = std::sqrt(b[0]);
      beta[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0) beta[0] = -beta[0];
    betas_list.push_back(beta);
  }
  {  // N = 3
    Eigen::MatrixXd a(6, 5);
    a << l.col(0), l.col(1), l.col(2), l.col(3), l.col(4);
    const Eigen::VectorXd b = lstsq(a, rho);
    Eigen::Vector4d beta = Eigen::Vector4d::Zero();
    if (b[0] < 0) {
      beta[0] = std::sqrt(-b[0]);
      beta[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      beta[0] = std::sqrt(b[0]);
      beta[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0) beta[0] = -beta[0];
    beta[2] = beta[0] != 0.0 ? b[3] / beta[0] : 0.0;
    betas_list.push_back(beta);
  }

  std::vector<CameraPose> out;
  for (Eigen::Vector4d beta : betas_list) {
    // Gauss-Newton on the six distance constraints.
    for (int it = 0; it < 5; ++it) {
      Eigen::Matrix<double, 6, 4> j;
      Eigen::Matrix<double, 6, 1> r;
      for (int p = 0; p < 6; ++p) {
        const auto& row = l.row(p);
        j(p, 0) = 2 * row[0] * beta[0] + row[1] * beta[1] + row[3] * beta[2] + row[6] * beta[3];
        j(p, 1) = row[1] * beta[0] + 2 * row[2] * beta[1] + row[4] * beta[2] + row[7] * beta[3];
        j(p, 2) = row[3] * beta[0] + row[4] * beta[1] + 2 * row[5] * beta[2] + row[8] * beta[3];
        j(p, 3) = row[6] * beta[0] + row[7] * beta[1] + row[8] * beta[2] + 2 * row[9] * beta[3];
        const double model = row[0] * beta[0] * beta[0] + row[1] * beta[0] * beta[1] +
                             row[2] * beta[1] * beta[1] + row[3] * beta[0] * beta[2] +
                             row[4] * beta[1] * beta[2] + row[5] * beta[2] * beta[2] +
                             row[6] * beta[0] * beta[3] + row[7] * beta[1] * beta[3] +
                             row[8] * beta[2] * beta[3] + row[9] * beta[3] * beta[3];
        r[p] = rho[p] - model;
      }
      beta += j.colPivHouseholderQr().solve(r);
    }
    Eigen::Matrix<double, 12, 1> x = Eigen::Matrix<double, 12, 1>::Zero();
    for (int k = 0; k < 4; ++k) x += beta[k] * v[k];
    Mat34 cc;
    for (int j = 0; j < 4; ++j) cc.col(j) = x.segment<3>(3 * j);
    std::vector<Vec3> pc(n);
    for (std::size_t i = 0; i < n; ++i) pc[i] = cc * alphas[i];
    if (pc[0].z() < 0) {
      for (auto& p : pc) p = -p;
    }
    if (!pc[0].allFinite()) continue;
    out.push_back(procrustes(pts, pc));
  }
  return out;
}

// Plane-induced homography for (nearly) planar point sets.
std::optional<CameraPose> planar_solution(std::span<const Vec3> pts, std::span<const Vec2> px,
                                          const Camera& cam, const Pca& pca) {
  const std::size_t n = pts.size();
  std::vector<Vec2> plane(n), img(n);
  Vec2 pc = Vec2::Zero(), ic = Vec2::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 local = pca.axes.transpose() * (pts[i] - pca.centroid);
    plane[i] = local.head<2>();
    img[i] = Vec2((px[i].x() - cam.cx) / cam.fx, (px[i].y() - cam.cy) / cam.fy);
    pc += plane[i];
    ic += img[i];
  }
  pc /= static_cast<double>(n);
  ic /= static_cast<double>(n);
  double ps = 0, is = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ps += (plane[i] - pc).norm();
    is += (img[i] - ic).norm();
  }
  ps = ps > 0 ? std::sqrt(2.0) * static_cast<double>(n) / ps : 1.0;
  is = is > 0 ? std::sqrt(2.0) * static_cast<double>(n) / is : 1.0;
  Mat3 tp, ti;
  tp << ps, 0, -ps * pc.x(), 0, ps, -ps * pc.y(), 0, 0, 1;
  ti << is, 0, -is * ic.x(), 0, is, -is * ic.y(), 0, 0, 1;

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 s = tp * plane[i].homogeneous();
    const Vec3 d = ti * img[i].homogeneous();
    a.row(2 * i) << 0, 0, 0, -s.transpose(), d.y() * s.transpose();
    a.row(2 * i + 1) << s.transpose(), 0, 0, 0, -d.x() * s.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  const Mat3 hm = ti.inverse() * hn * tp;
  const double norm1 = hm.col(0).norm(), norm2 = hm.col(1).norm();
  if (!(norm1 > 0 && norm2 > 0)) return std::nullopt;
  double lambda = 2.0 / (norm1 + norm2);
  if ((lambda * hm.col(2)).z() < 0) lambda = -lambda;
  Mat3 r;
  r.col(0) = lambda * hm.col(0);
  r.col(1) = lambda * hm.col(1);
  r.col(2) = r.col(0).cross(r.col(1));
  const Mat3 r_plane = nearest_rotation(r);
  const Vec3 t_plane = lambda * hm.col(2);
  CameraPose pose;
  pose.rotation = r_plane * pca.axes.transpose();
  pose.translation = t_plane - pose.rotation * pca.centroid;
  if (!pose.rotation.allFinite() || !pose.translation.allFinite()) return std::nullopt;
  return pose;
}

void check_inputs(std::span<const Vec3> points, std::span<const Vec2> pixels) {
  if (points.size() != pixels.size()) {
    throw Error(ErrorCode::kInvalidInput, "pnp: point and pixel counts differ");
  }
  if (points.size() < static_cast<std::size_t>(kPnPMinimalSample)) {
    throw Error(ErrorCode::kInsufficientData, "pnp needs at least 4 correspondences");
  }
}

CameraPose to_camera_pose(const Camera& cam, const RigidTransform& motion) {
  const RigidTransform c = cam.world_to_camera.compose(motion);
  return {c.rotation, c.translation};
}

RigidTransform to_motion(const Camera& cam, const CameraPose& pose) {
  const RigidTransform inv = cam.world_to_camera.inverse();
  return inv.compose(RigidTransform{pose.rotation, pose.translation});
}

CameraPose solve_camera_pose(std::span<const Vec3> pts, std::span<const Vec2> px, const Camera& cam,
                             int refine_iterations, const CameraPose& hint) {
  const Pca pca = principal_axes(pts);
  if (!(pca.singular[0] > 0.0) || pca.singular[1] < 1e-9 * pca.singular[0]) {
    throw Error(ErrorCode::kDegenerateConfiguration, "pnp: points are coincident or collinear");
  }
  const bool planar = pca.singular[2] < 1e-5 * pca.singular[0];
  const bool nearly_planar = pca.singular[2] < 1e-2 * pca.singular[0];

  std::vector<CameraPose> candidates;
  if (!planar) candidates = control_point_solutions(pts, px, cam, pca);
  if (nearly_planar || pts.size() < 6) {
    if (auto p = planar_solution(pts, px, cam, pca)) candidates.push_back(*p);
  }
  // The zero-motion pose is a good basin when the linear solutions are poorly
  // conditioned (few points).
  candidates.push_back(hint);
  CameraPose best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (auto& c : candidates) {
    const CameraPose refined = refine_pose(pts, px, cam, c, refine_iterations);
    const double cost = pose_cost(pts, px, cam, refined);
    if (cost < best_cost) {
      best_cost = cost;
      best = refined;
    }
  }
  if (!std::isfinite(best_cost)) {
    throw Error(ErrorCode::kDegenerateConfiguration, "pnp: no solution places points in front of the camera");
  }
  return best;
}

Camera intrinsics_only(const Camera& cam) {
  Camera c = cam;
  c.world_to_camera = RigidTransform::identity();
  return c;
}

}  // namespace

std::vector<double> reprojection_errors(std::span<const Vec3> points, std::span<const Vec2> pixels,
                                        const Camera& camera, const RigidTransform& motion) {
  std::vector<double> err(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto px = camera.try_project(motion.apply(points[i]));
    err[i] = px ? (*px - pixels[i]).norm() : std::numeric_limits<double>::infinity();
  }
  return err;
}

RigidTransform pnp(std::span<const Vec3> points, std::span<const Vec2> pixels, const Camera& camera) {
  check_inputs(points, pixels);
  const CameraPose pose = solve_camera_pose(points, pixels, intrinsics_only(camera), 50,
                                           to_camera_pose(camera, RigidTransform::identity()));
  return to_motion(camera, pose);
}

RigidTransform pnp_refine(std::span<const Vec3> points, std::span<const Vec2> pixels,
                          const Camera& camera, const RigidTransform& initial, int max_iterations) {
  check_inputs(points, pixels);
  const CameraPose pose = refine_pose(points, pixels, intrinsics_only(camera),
                                      to_camera_pose(camera, initial), max_iterations);
  return to_motion(camera, pose);
}

PnPResult ransac_pnp(std::span<const Vec3> points, std::span<const Vec2> pixels,
                     const Camera& camera, const RansacParams& params) {
  check_inputs(points, pixels);
  const int n = static_cast<int>(points.size());
  const Camera intr = intrinsics_only(camera);
  const CameraPose zero_motion = to_camera_pose(camera, RigidTransform::identity());
  const double thr = params.inlier_threshold;
  std::mt19937_64 rng(params.seed);

  auto count_inliers = [&](const RigidTransform& motion, std::vector<char>& mask) {
    const auto err = reprojection_errors(points, pixels, camera, motion);
    int count = 0;
    for (int i = 0; i < n; ++i) {
      mask[i] = err[i] < thr;
      count += mask[i];
    }
    return count;
  };

  PnPResult result;
  result.seed = params.seed;
  result.inliers.assign(n, 0);
  std::vector<char> mask(n, 0);
  int best_count = -1;
  RigidTransform best_motion;
  int max_iters = params.max_iterations;
  int it = 0;
  std::array<int, kPnPMinimalSample> sample{};
  std::array<Vec3, kPnPMinimalSample> sp;
  std::array<Vec2, kPnPMinimalSample> sx;
  for (; it < max_iters; ++it) {
    for (int k = 0; k < kPnPMinimalSample; ++k) {
      int idx;
      do {
        idx = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
      } while (std::find(sample.begin(), sample.begin() + k, idx) != sample.begin() + k);
      sample[k] = idx;
      sp[k] = points[idx];
      sx[k] = pixels[idx];
    }
    RigidTransform motion;
    try {
      motion = to_motion(camera, solve_camera_pose(sp, sx, intr, 10, zero_motion));
    } catch (const Error&) {
      continue;
    }
    const int count = count_inliers(motion, mask);
    if (count > best_count) {
      best_count = count;
      best_motion = motion;
      result.inliers = mask;
      if (params.confidence < 1.0 && count > 0) {
        const double ratio = static_cast<double>(count) / n;
        const double p_good = std::pow(ratio, kPnPMinimalSample);
        if (p_good >= 1.0) {
          max_iters = std::min(max_iters, it + 1);
        } else if (p_good > 0.0) {
          const double needed = std::log(1.0 - params.confidence) / std::log(1.0 - p_good);
          if (needed < max_iters) max_iters = std::max(it + 1, static_cast<int>(std::ceil(needed)));
        }
      }
    }
  }
  result.iterations = it;
  if (best_count < params.min_consensus) {
    throw Error(ErrorCode::kNoConsensus, "ransac_pnp: best hypothesis lacks consensus");
  }

  // Re-estimate on the consensus set, then re-classify; repeat while it grows.
  RigidTransform motion = best_motion;
  int count = best_count;
  for (int round = 0; round < 3; ++round) {
    std::vector<Vec3> ip;
    std::vector<Vec2> ix;
    for (int i = 0; i < n; ++i) {
      if (result.inliers[i]) {
        ip.push_back(points[i]);
        ix.push_back(pixels[i]);
      }
    }
    RigidTransform refined = pnp_refine(ip, ix, camera, motion, 50);
    const int refined_count = count_inliers(refined, mask);
    if (refined_count < count) break;
    motion = refined;
    const bool grew = refined_count > count;
    count = refined_count;
    result.inliers = mask;
    if (!grew) break;
  }
  if (count < params.min_consensus) {
    throw Error(ErrorCode::kNoConsensus, "ransac_pnp: consensus collapsed during re-estimation");
  }
  result.transform = motion;
  result.inlier_count = count;
  const auto err = reprojection_errors(points, pixels, camera, motion);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (result.inliers[i]) sum += err[i];
  }
  result.mean_reprojection_error = sum / count;
  return result;
}

}  // namespace gsdeform
