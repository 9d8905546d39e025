#pragma once

#include <cstdint>
#include <vector>

#include "gsdeform/correspondence.hpp"
#include "gsdeform/geometry.hpp"

namespace gsdeform {

/// Two-box articulated test scene with ground-truth part labels and motions.
struct SyntheticSceneParams {
  int gaussians_per_part = 600;
  double part_size = 0.4;    // box edge length
  double separation = 0.8;   // distance between part centres along x
  std::vector<RigidTransform> part_motions;  // empty: built-in distinct motions
  int view_count = 3;
  int target_view = 0;          // view whose matches cover every visible Gaussian
  double other_view_coverage = 0.4;  // fraction of part 0 matched in side views
  double ring_radius = 3.0;
  double focal = 500.0;
  int width = 640;
  int height = 480;
  double pixel_noise = 0.5;  // std-dev of target pixel noise
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  GaussianSet gaussians;
  GaussianSet moved;  // ground truth after motion
  std::vector<int> part;  // ground-truth label per Gaussian
  std::vector<RigidTransform> part_motions;
  std::vector<Camera> cameras;
  std::vector<PixelMatchSet> matches;  // one set per camera, view_id = camera id
};

/// Default motions: part 0 turns 12 degrees about z around its centre and
/// lifts; part 1 turns -15 degrees about y around its centre and shifts in x.
std::vector<RigidTransform> default_part_motions(const SyntheticSceneParams& params);

/// Rotation by `angle` about `axis` through `pivot`, then translation by `t`.
RigidTransform rotation_about(const Vec3& pivot, const Vec3& axis, double angle, const Vec3& t);

SyntheticScene make_two_body_scene(const SyntheticSceneParams& params);

/// Repeats the part motions frame after frame. frames[f] is the ground truth
/// after f+1 motions and matches[f] maps frame f (the rest pose for f = 0) to
/// frame f+1. Frame 0 equals make_two_body_scene.
struct SyntheticSequence {
  SyntheticScene scene;
  std::vector<GaussianSet> frames;
  std::vector<std::vector<PixelMatchSet>> matches;
};
SyntheticSequence make_two_body_sequence(const SyntheticSceneParams& params, int frames);

}  // namespace gsdeform
