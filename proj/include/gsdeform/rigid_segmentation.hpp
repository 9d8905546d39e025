#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gsdeform/correspondence.hpp"
#include "gsdeform/deformation_state.hpp"
#include "gsdeform/pnp.hpp"
#include "gsdeform/spatial_index.hpp"

namespace gsdeform {

struct RegionGrowParams {
  double r_grow = 0.02;  // defaults to 2 * r_refinement
  RansacParams ransac;
  int min_group_size = 20;
  std::uint64_t seed = 0;  // seed Gaussian selection; RANSAC seeds derive from it
};

struct SegmentationResult {
  RigidGroupSet groups;
  bool warning = false;  // set when no group reached min_group_size
  std::string message;
};

/// Region-growing initialization over the matched Gaussians. Each emitted
/// group is connected under r_grow adjacency and has at least
/// min_group_size members.
SegmentationResult region_grow_init(const GaussianPixelMatchSet& g2p, std::span<const Vec3> positions,
                                    const Camera& camera, const RegionGrowParams& params);
SegmentationResult region_grow_init(const GaussianPixelMatchSet& g2p, const GaussianSet& gaussians,
                                    const Camera& camera, const RegionGrowParams& params);

/// Global PnP-RANSAC without spatial growth: repeatedly peel off the largest
/// consensus set. Ablation baseline; groups need not be connected.
SegmentationResult naive_ransac_groups(const GaussianPixelMatchSet& g2p, std::span<const Vec3> positions,
                                       const Camera& camera, const RegionGrowParams& params);

/// S_rigid(i, G): mean over j in G of
/// |R_i^-1 (mu_i - mu_j) - R_i'^-1 (mu_i' - mu_j')|^2, direct loop.
double rigidity_score(int candidate, std::span<const int> group, const DeformationState& state);

/// First and second moments of one group's initial and current positions.
/// score() evaluates S_rigid for any candidate in O(1).
class GroupMoments {
 public:
  GroupMoments(std::span<const int> group, const DeformationState& state);
  double score(int candidate, const DeformationState& state) const;

 private:
  double n_ = 0.0;
  Vec3 x_mean_ = Vec3::Zero();
  Vec3 y_mean_ = Vec3::Zero();
  double sxx_ = 0.0;
  double syy_ = 0.0;
  Mat3 c_ = Mat3::Zero();  // sum X_j Y_j^T over centered positions
};

struct RefineParams {
  double tau_low = 0.01;
  double tau_high = 0.01;
  double r_refinement = 0.01;
};

struct RefineStats {
  int added = 0;
  int removed = 0;
  int contested = 0;  // unlabeled candidates claimed by more than one group
};

/// One refinement sweep. Candidates come from a ball query around each
/// group over all Gaussians at their current positions. Candidates already
/// in another group are skipped; an unlabeled candidate accepted by several
/// groups goes to the one where it scores lowest. Members scoring above
/// tau_high are removed. All changes are applied after scoring.
RigidGroupSet refine_groups(const RigidGroupSet& groups, const DeformationState& state,
                            const PointIndex& current_index, const RefineParams& params,
                            RefineStats* stats = nullptr);
RigidGroupSet refine_groups(const RigidGroupSet& groups, const DeformationState& state,
                            const RefineParams& params, RefineStats* stats = nullptr);

/// Number of connected components of `members` when points within `radius`
/// are linked.
int connected_components(std::span<const int> members, std::span<const Vec3> positions, double radius);

}  // namespace gsdeform
