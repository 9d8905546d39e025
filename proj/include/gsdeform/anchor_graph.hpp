#pragma once

#include <span>
#include <vector>

#include "gsdeform/deformation_state.hpp"
#include "gsdeform/geometry.hpp"

namespace gsdeform {

struct AnchorParams {
  double voxel_size = 0.06;  // s_voxel
  int k_anchor = 10;         // anchors blended per Gaussian
  int k_arap = 6;            // anchor-anchor neighbours before symmetrization
};

/// Per-Gaussian blending neighbourhoods. Row i of `ids`/`weights` holds the
/// `k` nearest anchors of Gaussian i and their normalized weights.
struct BlendWeights {
  int k = 0;
  std::vector<int> ids;         // size N*k, nearest first
  std::vector<double> weights;  // size N*k, each row sums to 1
};

/// Sparse deformation graph. Rotations and translations are the
/// optimization variables; everything else is frozen at construction.
struct AnchorGraph {
  std::vector<Vec3> positions;     // a_k
  std::vector<Quat> rotations;     // q_k^a, stored unnormalized
  std::vector<Vec3> translations;  // T_k
  BlendWeights blend;
  std::vector<std::vector<int>> neighbors;  // anchor-anchor, symmetric, sorted

  std::size_t anchor_count() const { return positions.size(); }
  std::size_t gaussian_count() const { return blend.k ? blend.ids.size() / blend.k : 0; }
  void reset_motion();
  /// Same anchors, neighbourhoods and weights.
  bool same_topology(const AnchorGraph& other) const;
};

/// One anchor per occupied voxel, placed at the member centroid.
std::vector<Vec3> init_anchors(std::span<const Vec3> points, double voxel_size);

/// Inverse-distance weights over the k nearest anchors:
/// w_ik = (1/(d_ik + eps)) / sum_k' (1/(d_ik' + eps)), eps = 1e-8 * extent.
BlendWeights compute_weights(std::span<const Vec3> points, std::span<const Vec3> anchors, int k_anchor);

/// Symmetrized k-nearest anchor graph, self excluded.
std::vector<std::vector<int>> anchor_neighbors(std::span<const Vec3> anchors, int k);

AnchorGraph build_anchor_graph(std::span<const Vec3> points, const AnchorParams& params);

/// Intermediate values of one blend evaluation, kept for back-propagation.
struct BlendEvaluation {
  std::vector<Mat3> anchor_rotations;   // R(q_k^a)
  std::vector<Quat> anchor_unit;        // q_k^a / |q_k^a|
  std::vector<double> anchor_norm;      // |q_k^a|
  std::vector<double> signs;            // N*k hemisphere alignment factors
  std::vector<Eigen::Vector4d> rotation_sums;  // sum_k w_ik s_ik qhat_k
  std::vector<Quat> blended;            // normalized rotation_sums
  std::vector<Vec3> positions;          // mu_i'
};

BlendEvaluation evaluate_blend(const AnchorGraph& graph, std::span<const Vec3> initial_positions);

/// Blended anchor rotation per Gaussian: normalize(sum_k w_ik s_ik qhat_k),
/// where s_ik aligns each anchor quaternion with the first neighbour's
/// hemisphere. Throws kDegenerateBlend when the sum nearly cancels.
std::vector<Quat> blended_rotations(const AnchorGraph& graph);

/// mu_i' = sum_k w_ik (R_k (mu_i - a_k) + a_k + T_k),
/// q_i'  = qblend_i * q_i (anchor rotation applied in the world frame).
DeformationState blend(const AnchorGraph& graph, const GaussianSet& gaussians);
DeformationState blend(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                       std::span<const Quat> initial_rotations);

}  // namespace gsdeform
