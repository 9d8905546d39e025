#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsdeform/anchor_graph.hpp"
#include "gsdeform/correspondence.hpp"
#include "gsdeform/deformation_state.hpp"

namespace gsdeform {

struct LossWeights {
  double deform = 1.0;
  double group = 1.0;
  double arap = 1.0;
  double rgb = 0.0;  // photometric term is not modelled; must stay 0
};

struct GroupLossOptions {
  // Max ordered pairs evaluated per group. 0 evaluates every pair exactly
  // (in O(|G|) via second moments); otherwise larger groups are estimated
  // from `pair_budget` seeded uniform pairs scaled by total/P.
  int pair_budget = 0;
  std::uint64_t seed = 0;
};

struct LossReport {
  double deform = 0.0;
  double group = 0.0;
  double arap = 0.0;
  double total = 0.0;
  int skipped_matches = 0;  // matches whose Gaussian fell behind the camera
  std::vector<Eigen::Vector4d> grad_rotation;  // d total / d q_k^a (raw, w x y z)
  std::vector<Vec3> grad_translation;          // d total / d T_k

  double grad_norm() const;
  /// Flattened gradient, per anchor [qw qx qy qz tx ty tz].
  Eigen::VectorXd flat_gradient() const;
};

/// Sum over matches of confidence * |project(mu_i') - x'_p|^2. Matches whose
/// Gaussian is behind the camera are skipped and counted in `skipped`.
double loss_deform(const DeformationState& state, const GaussianPixelMatchSet& g2p,
                   const Camera& camera, int* skipped = nullptr);

/// Sum over groups and ordered pairs i != j of
/// |R_i^-1 (mu_i - mu_j) - R_i'^-1 (mu_i' - mu_j')|^2.
double loss_group(const DeformationState& state, const RigidGroupSet& groups,
                  const GroupLossOptions& options = {});

/// Sum over anchors i and neighbours k of |R_i (a_i - a_k) - (a_i' - a_k')|^2,
/// a' = a + T.
double loss_arap(const AnchorGraph& graph);

/// Weighted total and its gradient over every anchor variable, through the
/// blend map. Throws kNumericalFailure naming the offending term.
LossReport total_loss_and_grad(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                               std::span<const Quat> initial_rotations,
                               const GaussianPixelMatchSet& g2p, const RigidGroupSet& groups,
                               const Camera& camera, const LossWeights& weights,
                               const GroupLossOptions& group_options = {});

/// Gradient of sum G_ab R(q)_ab with respect to the components of a unit
/// quaternion q (before any normalization Jacobian).
Eigen::Vector4d rotation_matrix_grad_to_quat(const Quat& unit_q, const Mat3& grad_r);

}  // namespace gsdeform
