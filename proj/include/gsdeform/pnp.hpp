#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gsdeform/geometry.hpp"

namespace gsdeform {

/// Estimates the object motion (R, T) such that camera.project(R p + T)
/// reproduces `pixels`. Needs >= 4 correspondences that are not collinear.
/// Throws kInsufficientData / kDegenerateConfiguration.
RigidTransform pnp(std::span<const Vec3> points, std::span<const Vec2> pixels,
                   const Camera& camera);

/// Damped Gauss-Newton refinement of an initial motion on reprojection error.
RigidTransform pnp_refine(std::span<const Vec3> points, std::span<const Vec2> pixels,
                          const Camera& camera, const RigidTransform& initial,
                          int max_iterations = 50);

/// Per-correspondence reprojection error in pixels; +inf when behind camera.
std::vector<double> reprojection_errors(std::span<const Vec3> points, std::span<const Vec2> pixels,
                                        const Camera& camera, const RigidTransform& motion);

struct RansacParams {
  double inlier_threshold = 2.0;  // pixels
  int max_iterations = 512;
  std::uint64_t seed = 0;
  // Adaptive stop once P(no all-inlier sample seen) < 1 - confidence. 1.0 disables it.
  double confidence = 0.999;
  // A minimal sample can fit itself within the threshold by chance, so a
  // hypothesis needs at least one supporting correspondence beyond it.
  int min_consensus = 5;
};

struct PnPResult {
  RigidTransform transform;
  double mean_reprojection_error = 0.0;  // over inliers, pixels
  std::vector<char> inliers;             // one flag per correspondence
  int inlier_count = 0;
  int iterations = 0;
  std::uint64_t seed = 0;
};

inline constexpr int kPnPMinimalSample = 4;

/// Hypothesize-and-verify PnP with minimal samples of 4. Deterministic for a
/// given seed. Throws kInsufficientData for < 4 inputs and kNoConsensus when
/// the best hypothesis has fewer than `min_consensus` inliers.
PnPResult ransac_pnp(std::span<const Vec3> points, std::span<const Vec2> pixels,
                     const Camera& camera, const RansacParams& params);

}  // namespace gsdeform
