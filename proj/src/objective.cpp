#include "gsdeform/objective.hpp"

#include <cmath>
#include <random>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

struct Gradients {
  std::vector<Vec3> d_positions;  // d/d mu_i'
  std::vector<Mat3> d_blend_rot;  // d/d B_i, B_i = R_i' R_i^T
};

double deform_term(std::span<const Vec3> y, const GaussianPixelMatchSet& g2p, const Camera& cam,
                   int* skipped, std::vector<Vec3>* grad, double scale) {
  const Mat3& rc = cam.world_to_camera.rotation;
  const Vec3& tc = cam.world_to_camera.translation;
  double loss = 0.0;
  int skip = 0;
  for (const auto& m : g2p) {
    const Vec3 pc = rc * y[static_cast<std::size_t>(m.gaussian_id)] + tc;
    if (!(pc.z() > 0.0)) {
      ++skip;
      continue;
    }
    const double iz = 1.0 / pc.z();
    const Vec2 r(cam.fx * pc.x() * iz + cam.cx - m.target.x(), cam.fy * pc.y() * iz + cam.cy - m.target.y());
    loss += m.confidence * r.squaredNorm();
    if (grad) {
      Eigen::Matrix<double, 2, 3> jp;
      jp << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz, 0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
      (*grad)[static_cast<std::size_t>(m.gaussian_id)] += scale * 2.0 * m.confidence * rc.transpose() * (jp.transpose() * r);
    }
  }
  if (skipped) *skipped = skip;
  return loss;
}

double group_exact(std::span<const int> members, std::span<const Vec3> x, std::span<const Vec3> y,
                   std::span<const Mat3> b, Gradients* grad, double scale) {
  const auto n = static_cast<double>(members.size());
  Vec3 xm = Vec3::Zero(), ym = Vec3::Zero();
  for (int id : members) {
    xm += x[id];
    ym += y[id];
  }
  xm /= n;
  ym /= n;
  double sxx = 0.0, syy = 0.0;
  Mat3 c = Mat3::Zero(), sb = Mat3::Zero();
  for (int id : members) {
    const Vec3 xc = x[id] - xm, yc = y[id] - ym;
    sxx += xc.squaredNorm();
    syy += yc.squaredNorm();
    c += xc * yc.transpose();
    sb += b[id];
  }
  double loss = 0.0;
  for (int id : members) {
    const Vec3 r = b[id] * (x[id] - xm) - (y[id] - ym);
    loss += n * r.squaredNorm() + sxx + syy - 2.0 * (b[id] * c).trace();
  }
  if (grad) {
    Vec3 mean_dy = Vec3::Zero();
    std::vector<Vec3> dy(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      const int id = members[k];
      const Vec3 xc = x[id] - xm, yc = y[id] - ym;
      const Vec3 r = b[id] * xc - yc;
      grad->d_blend_rot[id] += scale * (2.0 * n * r * xc.transpose() - 2.0 * c.transpose());
      dy[k] = -2.0 * n * r + 2.0 * n * yc - 2.0 * sb * xc;
      mean_dy += dy[k];
    }
    mean_dy /= n;
    for (std::size_t k = 0; k < members.size(); ++k) {
      grad->d_positions[members[k]] += scale * (dy[k] - mean_dy);
    }
  }
  return std::max(loss, 0.0);
}

double group_sampled(std::span<const int> members, std::span<const Vec3> x, std::span<const Vec3> y,
                     std::span<const Mat3> b, int budget, std::uint64_t seed, Gradients* grad,
                     double scale) {
  const std::uint64_t n = members.size();
  const double total_pairs = static_cast<double>(n) * static_cast<double>(n - 1);
  const double weight = total_pairs / budget;
  std::mt19937_64 rng(seed);
  double loss = 0.0;
  for (int s = 0; s < budget; ++s) {
    const auto a = static_cast<std::size_t>(rng() % n);
    auto c = static_cast<std::size_t>(rng() % (n - 1));
    if (c >= a) ++c;  // uniform over ordered pairs with i != j
    const int i = members[a], j = members[c];
    const Vec3 dx = x[i] - x[j];
    const Vec3 r = b[i] * dx - (y[i] - y[j]);
    loss += weight * r.squaredNorm();
    if (grad) {
      grad->d_blend_rot[i] += scale * weight * 2.0 * r * dx.transpose();
      grad->d_positions[i] -= scale * weight * 2.0 * r;
      grad->d_positions[j] += scale * weight * 2.0 * r;
    }
  }
  return loss;
}

double group_term(std::span<const Vec3> x, std::span<const Vec3> y, std::span<const Mat3> b,
                  const RigidGroupSet& groups, const GroupLossOptions& opt, Gradients* grad,
                  double scale) {
  double loss = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups.groups[g];
    if (members.size() < 2) continue;
    const double pairs = static_cast<double>(members.size()) * static_cast<double>(members.size() - 1);
    if (opt.pair_budget <= 0 || pairs <= opt.pair_budget) {
      loss += group_exact(members, x, y, b, grad, scale);
    } else {
      const std::uint64_t seed = opt.seed * 0x9E3779B97F4A7C15ULL + g;
      loss += group_sampled(members, x, y, b, opt.pair_budget, seed, grad, scale);
    }
  }
  return loss;
}

double arap_term(const AnchorGraph& graph, std::span<const Mat3> rot, std::vector<Mat3>* d_rot,
                 std::vector<Vec3>* d_t, double scale) {
  double loss = 0.0;
  for (std::size_t i = 0; i < graph.anchor_count(); ++i) {
    for (int k : graph.neighbors[i]) {
      const Vec3 d = graph.positions[i] - graph.positions[k];
      const Vec3 r = rot[i] * d - (d + graph.translations[i] - graph.translations[k]);
      loss += r.squaredNorm();
      if (d_rot) {
        (*d_rot)[i] += scale * 2.0 * r * d.transpose();
        (*d_t)[i] -= scale * 2.0 * r;
        (*d_t)[k] += scale * 2.0 * r;
      }
    }
  }
  return loss;
}

Eigen::Vector4d normalization_backprop(const Quat& unit, double norm, const Eigen::Vector4d& g) {
  const Eigen::Vector4d u = unit.coeffs();
  return (g - u * u.dot(g)) / norm;
}

}  // namespace

double LossReport::grad_norm() const { return flat_gradient().norm(); }

Eigen::VectorXd LossReport::flat_gradient() const {
  Eigen::VectorXd g(7 * grad_rotation.size());
  for (std::size_t a = 0; a < grad_rotation.size(); ++a) {
    g.segment<4>(7 * a) = grad_rotation[a];
    g.segment<3>(7 * a + 4) = grad_translation[a];
  }
  return g;
}

Eigen::Vector4d rotation_matrix_grad_to_quat(const Quat& q, const Mat3& g) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Eigen::Vector4d out;
  out[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  out[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - 2 * x * g(2, 2));
  out[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - 2 * y * g(2, 2));
  out[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return out;
}

double loss_deform(const DeformationState& state, const GaussianPixelMatchSet& g2p,
                   const Camera& camera, int* skipped) {
  return deform_term(state.positions, g2p, camera, skipped, nullptr, 1.0);
}

double loss_group(const DeformationState& state, const RigidGroupSet& groups,
                  const GroupLossOptions& options) {
  std::vector<Mat3> b(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    b[i] = quat_to_rot(state.rotations[i]) * quat_to_rot(state.initial_rotations[i]).transpose();
  }
  return group_term(state.initial_positions, state.positions, b, groups, options, nullptr, 1.0);
}

double loss_arap(const AnchorGraph& graph) {
  std::vector<Mat3> rot(graph.anchor_count());
  for (std::size_t a = 0; a < rot.size(); ++a) rot[a] = quat_to_rot(graph.rotations[a]);
  return arap_term(graph, rot, nullptr, nullptr, 1.0);
}

LossReport total_loss_and_grad(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                               std::span<const Quat> /*initial_rotations*/,
                               const GaussianPixelMatchSet& g2p, const RigidGroupSet& groups,
                               const Camera& camera, const LossWeights& weights,
                               const GroupLossOptions& group_options) {
  if (weights.deform < 0 || weights.group < 0 || weights.arap < 0) {
    throw Error(ErrorCode::kInvalidInput, "loss weights must be non-negative");
  }
  // B_i = R_i' R_i^T equals R(qblend_i) for any initial rotation, so the
  // Gaussians' own orientations drop out of the objective.
  const BlendEvaluation ev = evaluate_blend(graph, initial_positions);
  const std::size_t n = initial_positions.size();
  const std::size_t m = graph.anchor_count();
  const int k = graph.blend.k;

  std::vector<Mat3> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = quat_to_rot(ev.blended[i]);

  Gradients gr{std::vector<Vec3>(n, Vec3::Zero()), std::vector<Mat3>(n, Mat3::Zero())};
  std::vector<Mat3> d_anchor_rot(m, Mat3::Zero());
  std::vector<Vec3> d_t(m, Vec3::Zero());

  LossReport rep;
  if (weights.deform > 0 || !g2p.empty()) {
    rep.deform = deform_term(ev.positions, g2p, camera, &rep.skipped_matches, &gr.d_positions, weights.deform);
  }
  rep.group = group_term(initial_positions, ev.positions, b, groups, group_options, &gr, weights.group);
  rep.arap = arap_term(graph, ev.anchor_rotations, &d_anchor_rot, &d_t, weights.arap);
  rep.total = weights.deform * rep.deform + weights.group * rep.group + weights.arap * rep.arap;

  for (const auto& [name, value] : {std::pair{"deform", rep.deform}, std::pair{"group", rep.group},
                                    std::pair{"arap", rep.arap}}) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNumericalFailure, std::string("non-finite loss term: ") + name);
    }
  }

  std::vector<Eigen::Vector4d> d_unit(m, Eigen::Vector4d::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector4d g_blend = rotation_matrix_grad_to_quat(ev.blended[i], gr.d_blend_rot[i]);
    const Eigen::Vector4d g_sum = normalization_backprop(ev.blended[i], ev.rotation_sums[i].norm(), g_blend);
    const Vec3& mu = initial_positions[i];
    for (int j = 0; j < k; ++j) {
      const int a = graph.blend.ids[i * k + j];
      const double w = graph.blend.weights[i * k + j];
      d_unit[a] += w * ev.signs[i * k + j] * g_sum;
      d_anchor_rot[a] += w * gr.d_positions[i] * (mu - graph.positions[a]).transpose();
      d_t[a] += w * gr.d_positions[i];
    }
  }
  rep.grad_rotation.resize(m);
  rep.grad_translation = std::move(d_t);
  for (std::size_t a = 0; a < m; ++a) {
    d_unit[a] += rotation_matrix_grad_to_quat(ev.anchor_unit[a], d_anchor_rot[a]);
    rep.grad_rotation[a] = normalization_backprop(ev.anchor_unit[a], ev.anchor_norm[a], d_unit[a]);
    if (!rep.grad_rotation[a].allFinite() || !rep.grad_translation[a].allFinite()) {
      throw Error(ErrorCode::kNumericalFailure, "non-finite gradient: anchor variables");
    }
  }
  return rep;
}

}  // namespace gsdeform
