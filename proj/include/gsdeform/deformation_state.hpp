#pragma once

#include <span>
#include <vector>

#include "gsdeform/geometry.hpp"

namespace gsdeform {

/// Initial (mu_i, q_i) and current (mu_i', q_i') per Gaussian.
struct DeformationState {
  std::vector<Vec3> initial_positions;
  std::vector<Quat> initial_rotations;
  std::vector<Vec3> positions;
  std::vector<Quat> rotations;

  std::size_t size() const { return initial_positions.size(); }

  /// Identity state (current == initial) for a Gaussian set.
  static DeformationState at_rest(const GaussianSet& gaussians);

  /// Copy of `gaussians` with mu and q replaced by the current state.
  GaussianSet apply_to(const GaussianSet& gaussians) const;
};

/// Disjoint groups of Gaussian ids sharing one rigid motion.
struct RigidGroupSet {
  std::vector<std::vector<int>> groups;    // each sorted ascending
  std::vector<RigidTransform> transforms;  // one per group
  std::size_t gaussian_count = 0;

  std::size_t size() const { return groups.size(); }
  bool empty() const { return groups.empty(); }

  /// Per-Gaussian group index, -1 for ungrouped.
  std::vector<int> labels() const;
  std::vector<int> ungrouped() const;
  bool is_disjoint() const;
  bool ids_valid() const;

  /// Groups from a label vector; negative labels are ungrouped. Group order
  /// follows ascending label value; transforms default to identity.
  static RigidGroupSet from_labels(std::span<const int> labels);
};

}  // namespace gsdeform
