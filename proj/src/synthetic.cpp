#include "gsdeform/synthetic.hpp"

#include <cmath>
#include <random>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

Vec3 part_center(const SyntheticSceneParams& p, int part) {
  return Vec3((part == 0 ? -0.5 : 0.5) * p.separation, 0.0, 0.0);
}

// Uniform point on the surface of an axis-aligned cube.
Vec3 surface_point(std::mt19937_64& rng, const Vec3& center, double edge) {
  std::uniform_real_distribution<double> u(-0.5 * edge, 0.5 * edge);
  const int face = static_cast<int>(rng() % 6);
  Vec3 p(u(rng), u(rng), u(rng));
  p[face / 2] = (face % 2 ? 0.5 : -0.5) * edge;
  return center + p;
}

// Matches from `from` to `to` in every camera, visibility judged on `from`.
std::vector<PixelMatchSet> frame_matches(const GaussianSet& from, const GaussianSet& to, const std::vector<int>& part,
                                         const std::vector<Camera>& cameras, const SyntheticSceneParams& p,
                                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PixelMatchSet> out;
  for (const Camera& cam : cameras) {
    PixelMatchSet set;
    set.view_id = cam.id;
    const std::vector<double> vis = visibility(from, cam);
    const double coverage = cam.id == p.target_view ? 1.0 : p.other_view_coverage;
    for (std::size_t i = 0; i < from.size(); ++i) {
      const bool keep = unit(rng) < coverage;
      const Vec2 noise(normal(rng), normal(rng));
      // Side views only see part 0, so the target view has the widest coverage.
      if (!keep || vis[i] < 0.5 || (cam.id != p.target_view && part[i] != 0)) continue;
      const auto src = cam.try_project(from[i].mu);
      const auto dst = cam.try_project(to[i].mu);
      if (!src || !dst || !cam.contains(*src) || !cam.contains(*dst)) continue;
      set.matches.push_back({*src, *dst + p.pixel_noise * noise, 1.0});
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace

RigidTransform rotation_about(const Vec3& pivot, const Vec3& axis, double angle, const Vec3& t) {
  RigidTransform m;
  m.rotation = quat_to_rot(quat_from_axis_angle(axis, angle));
  m.translation = pivot - m.rotation * pivot + t;
  return m;
}

std::vector<RigidTransform> default_part_motions(const SyntheticSceneParams& p) {
  const double deg = M_PI / 180.0;
  return {rotation_about(part_center(p, 0), Vec3::UnitZ(), 12 * deg, Vec3(0.0, -0.06, 0.0)),
          rotation_about(part_center(p, 1), Vec3::UnitY(), -15 * deg, Vec3(0.05, 0.0, 0.0))};
}

SyntheticScene make_two_body_scene(const SyntheticSceneParams& p) {
  if (p.gaussians_per_part < 1 || p.view_count < 1 || p.target_view < 0 || p.target_view >= p.view_count) {
    throw Error(ErrorCode::kInvalidInput, "invalid synthetic scene parameters");
  }
  SyntheticScene s;
  s.part_motions = p.part_motions.empty() ? default_part_motions(p) : p.part_motions;
  if (s.part_motions.size() != 2) throw Error(ErrorCode::kInvalidInput, "two part motions expected");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int part = 0; part < 2; ++part) {
    const RigidTransform& m = s.part_motions[part];
    const Quat qm = rot_to_quat(m.rotation);
    for (int i = 0; i < p.gaussians_per_part; ++i) {
      Gaussian g;
      g.mu = surface_point(rng, part_center(p, part), p.part_size);
      g.q = normalized(Quat{normal(rng), normal(rng), normal(rng), normal(rng)});
      g.scale = Vec3::Constant(0.01);
      g.opacity = 0.9;
      g.sh = {part == 0 ? 0.8f : 0.1f, 0.3f, part == 0 ? 0.1f : 0.8f};
      Gaussian moved = g;
      moved.mu = m.apply(g.mu);
      moved.q = quat_compose(qm, g.q);
      s.gaussians.push_back(g);
      s.moved.push_back(moved);
      s.part.push_back(part);
    }
  }

  for (int v = 0; v < p.view_count; ++v) {
    // Target view looks down -z onto the scene; the others step around the ring.
    const double shifted = (v - p.target_view) * 30.0 * M_PI / 180.0;
    const Vec3 eye(p.ring_radius * std::sin(shifted), 0.5, -p.ring_radius * std::cos(shifted));
    s.cameras.push_back(Camera::look_at(v, eye, Vec3::Zero(), Vec3::UnitY(), p.focal, p.width, p.height));
  }

  s.matches = frame_matches(s.gaussians, s.moved, s.part, s.cameras, p, rng);
  return s;
}

SyntheticSequence make_two_body_sequence(const SyntheticSceneParams& p, int frames) {
  if (frames < 1) throw Error(ErrorCode::kInvalidInput, "a sequence needs >= 1 frame");
  SyntheticSequence seq;
  seq.scene = make_two_body_scene(p);
  seq.frames.push_back(seq.scene.moved);
  seq.matches.push_back(seq.scene.matches);
  for (int f = 1; f < frames; ++f) {
    std::mt19937_64 rng(p.seed + 0x9e3779b97f4a7c15ULL * f);
    const GaussianSet& prev = seq.frames.back();
    GaussianSet next = prev;
    for (std::size_t i = 0; i < next.size(); ++i) {
      const RigidTransform& m = seq.scene.part_motions[seq.scene.part[i]];
      next[i].mu = m.apply(prev[i].mu);
      next[i].q = quat_compose(rot_to_quat(m.rotation), prev[i].q);
    }
    seq.matches.push_back(frame_matches(prev, next, seq.scene.part, seq.scene.cameras, p, rng));
    seq.frames.push_back(std::move(next));
  }
  return seq;
}

}  // namespace gsdeform
