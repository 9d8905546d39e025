#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "gsdeform/geometry.hpp"

namespace gsdeform {

/// One pixel-to-pixel match: `source` in a rendered view, `target` in the
/// target image.
struct PixelMatch {
  Vec2 source = Vec2::Zero();
  Vec2 target = Vec2::Zero();
  double confidence = 1.0;
};

struct PixelMatchSet {
  int view_id = 0;
  std::vector<PixelMatch> matches;
};

/// Gaussian-to-pixel correspondence (mu_i, x'_p).
struct GaussianPixelMatch {
  int gaussian_id = -1;
  Vec2 target = Vec2::Zero();
  double confidence = 1.0;
};

using GaussianPixelMatchSet = std::vector<GaussianPixelMatch>;

struct GridDims {
  int rows = 16;
  int cols = 16;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// 8-bit single channel mask, row-major; nonzero marks the object.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  bool inside(const Vec2& pixel) const;
};

/// Number of grid cells over the target image that contain at least one
/// matched target pixel. Target pixels outside the image are ignored.
int grid_overlap_score(const PixelMatchSet& matches, GridDims grid, ImageSize target);

struct ViewSelection {
  int view_id = -1;
  std::map<int, int> scores;  // view id -> grid overlap score
};

/// View with the highest overlap score; ties go to the lowest view id.
/// Throws kNoOverlap when every score is zero.
ViewSelection select_view(std::span<const PixelMatchSet> views, GridDims grid, ImageSize target);

/// Approximate alpha-blended visibility a_i * prod_{j in front}(1 - a_j),
/// computed per screen cell of `cell_size` pixels over depth-sorted centres.
/// Gaussians behind the camera get 0.
std::vector<double> visibility(const GaussianSet& gaussians, const Camera& camera,
                               double cell_size = 2.0);

/// Same as above over explicit centres and opacities.
std::vector<double> visibility(std::span<const Vec3> centers, std::span<const double> opacities,
                               const Camera& camera, double cell_size = 2.0);

struct AssociationParams {
  double visibility_threshold = 0.5;
  double pixel_radius = 3.0;
  double cell_size = 2.0;
};

/// Converts pixel matches of the selected view into Gaussian-to-pixel
/// matches. Output is sorted by Gaussian id, ids unique.
/// Throws kNoCorrespondence if nothing survives.
GaussianPixelMatchSet associate(const PixelMatchSet& matches, const GaussianSet& gaussians,
                                const Camera& camera, const AssociationParams& params);

/// Variant over explicit centres with a precomputed visibility vector.
GaussianPixelMatchSet associate(const PixelMatchSet& matches, std::span<const Vec3> centers,
                                std::span<const double> vis, const Camera& camera,
                                const AssociationParams& params);

/// Drops matches whose target pixel falls outside `target_mask` or whose
/// source pixel falls outside `source_mask` (either may be null).
PixelMatchSet filter_by_masks(const PixelMatchSet& matches, const Mask* source_mask,
                              const Mask* target_mask);

}  // namespace gsdeform
