#pragma once

#include <map>
#include <optional>
#include <vector>

#include "gsdeform/anchor_graph.hpp"
#include "gsdeform/correspondence.hpp"
#include "gsdeform/optimizer.hpp"
#include "gsdeform/rigid_segmentation.hpp"

namespace gsdeform {

/// Every tunable of the deformation pipeline.
struct EngineConfig {
  GridDims grid;
  AssociationParams association;
  RegionGrowParams region_grow;  // r_grow <= 0 means 2 * r_refinement
  AnchorParams anchors;
  OptimizeConfig optimize;
  InterpolateConfig interpolate;

  /// Tuned for multi-view captures of larger articulated scenes.
  static EngineConfig diva360();
  /// Tuned for smaller animal captures.
  static EngineConfig dfa();
  /// diva360 scaled to the unit-sized synthetic two-body scene.
  static EngineConfig demo();
  double resolved_r_grow() const;
};

struct DeformInputs {
  GaussianSet gaussians;
  std::vector<Camera> cameras;
  std::vector<PixelMatchSet> matches;  // per view, view_id = camera id
  std::map<int, Mask> source_masks;    // optional, by view id
  std::optional<Mask> target_mask;
};

struct DeformRun {
  ViewSelection selection;
  GaussianPixelMatchSet g2p;
  SegmentationResult initial_groups;
  AnchorGraph initial_graph;
  OptimizeResult result;
  GaussianSet deformed;
};

const Camera& camera_by_id(const std::vector<Camera>& cameras, int id);

/// Matches of one view resolved to Gaussians (mask filter, visibility,
/// nearest projection).
GaussianPixelMatchSet resolve_matches(const DeformInputs& in, int view_id, const AssociationParams& params);

/// select-view, associate, region-growing initialization, anchor graph,
/// optimization, blend.
DeformRun run_deform(const DeformInputs& in, const EngineConfig& config);

}  // namespace gsdeform
