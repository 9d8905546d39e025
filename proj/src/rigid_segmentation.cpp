#include "gsdeform/rigid_segmentation.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Component labels for local points (indices into `pts`).
std::vector<int> component_labels(std::span<const Vec3> pts, double radius) {
  std::vector<int> label(pts.size(), -1);
  if (pts.empty()) return label;
  const PointIndex index(std::vector<Vec3>(pts.begin(), pts.end()));
  int next = 0;
  std::vector<int> stack, found;
  for (std::size_t s = 0; s < pts.size(); ++s) {
    if (label[s] >= 0) continue;
    label[s] = next;
    stack.push_back(static_cast<int>(s));
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      found.clear();
      index.radius_search(pts[cur], radius, found);
      for (int nb : found) {
        if (label[nb] < 0) {
          label[nb] = next;
          stack.push_back(nb);
        }
      }
    }
    ++next;
  }
  return label;
}

// Members of the largest component; ties go to the component holding the
// smallest local index.
std::vector<int> largest_component(std::span<const int> local, std::span<const Vec3> pts, double radius) {
  std::vector<Vec3> sub;
  sub.reserve(local.size());
  for (int i : local) sub.push_back(pts[i]);
  const auto lab = component_labels(sub, radius);
  std::map<int, int> counts;
  for (int l : lab) ++counts[l];
  int best = -1, best_count = 0;
  for (auto [l, c] : counts) {
    if (c > best_count) {
      best = l;
      best_count = c;
    }
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < local.size(); ++i) {
    if (lab[i] == best) out.push_back(local[i]);
  }
  return out;
}

struct MatchedPool {
  std::vector<int> gaussian;  // local -> gaussian id
  std::vector<Vec3> points;
  std::vector<Vec2> pixels;
};

MatchedPool pool_from(const GaussianPixelMatchSet& g2p, std::span<const Vec3> positions) {
  // One correspondence per Gaussian: keep the most confident.
  std::map<int, const GaussianPixelMatch*> best;
  for (const auto& m : g2p) {
    if (m.gaussian_id < 0 || static_cast<std::size_t>(m.gaussian_id) >= positions.size()) {
      throw Error(ErrorCode::kInvalidInput, "match references unknown Gaussian " + std::to_string(m.gaussian_id));
    }
    auto [it, inserted] = best.emplace(m.gaussian_id, &m);
    if (!inserted && m.confidence > it->second->confidence) it->second = &m;
  }
  MatchedPool pool;
  for (const auto& [id, m] : best) {
    pool.gaussian.push_back(id);
    pool.points.push_back(positions[id]);
    pool.pixels.push_back(m->target);
  }
  return pool;
}

struct Fit {
  std::vector<int> inliers;  // local ids
  RigidTransform transform;
};

Fit ransac_subset(const MatchedPool& pool, std::span<const int> local, const Camera& camera,
                  RansacParams params) {
  Fit fit;
  if (static_cast<int>(local.size()) < kPnPMinimalSample) return fit;
  std::vector<Vec3> pts;
  std::vector<Vec2> px;
  for (int i : local) {
    pts.push_back(pool.points[i]);
    px.push_back(pool.pixels[i]);
  }
  try {
    const PnPResult r = ransac_pnp(pts, px, camera, params);
    for (std::size_t i = 0; i < local.size(); ++i) {
      if (r.inliers[i]) fit.inliers.push_back(local[i]);
    }
    fit.transform = r.transform;
  } catch (const Error& e) {
    // Any PnP failure counts as an empty consensus.
    if (e.code() == ErrorCode::kInvalidInput) throw;
  }
  return fit;
}

RigidTransform refit(const MatchedPool& pool, std::span<const int> local, const Camera& camera,
                     const RigidTransform& initial) {
  std::vector<Vec3> pts;
  std::vector<Vec2> px;
  for (int i : local) {
    pts.push_back(pool.points[i]);
    px.push_back(pool.pixels[i]);
  }
  try {
    return pnp_refine(pts, px, camera, initial);
  } catch (const Error&) {
    return initial;
  }
}

void finish(SegmentationResult& res, std::size_t gaussian_count, int min_size) {
  res.groups.gaussian_count = gaussian_count;
  if (res.groups.empty()) {
    res.warning = true;
    res.message = "no rigid group reached " + std::to_string(min_size) +
                  " members; optimization proceeds with ARAP only";
  }
}

void check_params(const RegionGrowParams& p) {
  if (!(p.r_grow > 0)) throw Error(ErrorCode::kInvalidInput, "r_grow must be positive");
  if (p.min_group_size < 1) throw Error(ErrorCode::kInvalidInput, "min_group_size must be >= 1");
}

}  // namespace

SegmentationResult region_grow_init(const GaussianPixelMatchSet& g2p, std::span<const Vec3> positions,
                                    const Camera& camera, const RegionGrowParams& params) {
  check_params(params);
  SegmentationResult res;
  const MatchedPool pool = pool_from(g2p, positions);
  const std::size_t n = pool.points.size();
  std::vector<char> unlabeled(n, 1);
  std::size_t remaining = n;
  const PointIndex index(pool.points);
  std::mt19937_64 rng(params.seed);
  std::uint64_t attempt = 0;

  while (remaining > 0) {
    // Random unlabeled seed.
    std::size_t pick = rng() % remaining;
    int seed = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (unlabeled[i] && pick-- == 0) {
        seed = static_cast<int>(i);
        break;
      }
    }
    std::vector<int> group{seed};
    std::vector<int> expand{seed};
    RigidTransform motion;
    int round = 0;
    while (true) {
      expand.clear();
      for (int id : ball_query(index, group, params.r_grow)) {
        if (unlabeled[id]) expand.push_back(id);
      }
      RansacParams rp = params.ransac;
      rp.seed = mix(params.seed, mix(attempt, static_cast<std::uint64_t>(round++)));
      Fit fit = ransac_subset(pool, expand, camera, rp);
      std::vector<int> inliers =
          fit.inliers.empty() ? fit.inliers : largest_component(fit.inliers, pool.points, params.r_grow);
      if (inliers.size() <= group.size()) break;
      group = std::move(inliers);
      motion = fit.transform;
    }
    for (int id : expand) {
      if (unlabeled[id]) {
        unlabeled[id] = 0;
        --remaining;
      }
    }
    if (unlabeled[seed]) {
      unlabeled[seed] = 0;
      --remaining;
    }
    ++attempt;
    if (static_cast<int>(group.size()) >= params.min_group_size) {
      std::vector<int> ids;
      for (int l : group) ids.push_back(pool.gaussian[l]);
      std::sort(ids.begin(), ids.end());
      res.groups.groups.push_back(std::move(ids));
      res.groups.transforms.push_back(refit(pool, group, camera, motion));
    }
  }
  finish(res, positions.size(), params.min_group_size);
  return res;
}

SegmentationResult region_grow_init(const GaussianPixelMatchSet& g2p, const GaussianSet& gaussians,
                                    const Camera& camera, const RegionGrowParams& params) {
  return region_grow_init(g2p, positions(gaussians), camera, params);
}

SegmentationResult naive_ransac_groups(const GaussianPixelMatchSet& g2p, std::span<const Vec3> positions,
                                       const Camera& camera, const RegionGrowParams& params) {
  check_params(params);
  SegmentationResult res;
  const MatchedPool pool = pool_from(g2p, positions);
  std::vector<int> remaining(pool.points.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  for (std::uint64_t round = 0;; ++round) {
    RansacParams rp = params.ransac;
    rp.seed = mix(params.seed, round);
    const Fit fit = ransac_subset(pool, remaining, camera, rp);
    if (static_cast<int>(fit.inliers.size()) < params.min_group_size) break;
    std::vector<int> ids;
    for (int l : fit.inliers) ids.push_back(pool.gaussian[l]);
    std::sort(ids.begin(), ids.end());
    res.groups.groups.push_back(std::move(ids));
    res.groups.transforms.push_back(refit(pool, fit.inliers, camera, fit.transform));
    std::vector<int> rest;
    std::set_difference(remaining.begin(), remaining.end(), fit.inliers.begin(), fit.inliers.end(),
                        std::back_inserter(rest));
    remaining = std::move(rest);
  }
  finish(res, positions.size(), params.min_group_size);
  return res;
}

double rigidity_score(int candidate, std::span<const int> group, const DeformationState& state) {
  if (group.empty()) throw Error(ErrorCode::kInvalidInput, "rigidity_score needs a nonempty group");
  const auto i = static_cast<std::size_t>(candidate);
  const Mat3 ri_inv = quat_to_rot(state.initial_rotations[i]).transpose();
  const Mat3 rpi_inv = quat_to_rot(state.rotations[i]).transpose();
  double sum = 0.0;
  for (int j : group) {
    sum += (ri_inv * (state.initial_positions[i] - state.initial_positions[j]) -
            rpi_inv * (state.positions[i] - state.positions[j]))
               .squaredNorm();
  }
  return sum / static_cast<double>(group.size());
}

GroupMoments::GroupMoments(std::span<const int> group, const DeformationState& state) {
  if (group.empty()) throw Error(ErrorCode::kInvalidInput, "GroupMoments needs a nonempty group");
  n_ = static_cast<double>(group.size());
  for (int j : group) {
    x_mean_ += state.initial_positions[j];
    y_mean_ += state.positions[j];
  }
  x_mean_ /= n_;
  y_mean_ /= n_;
  for (int j : group) {
    const Vec3 x = state.initial_positions[j] - x_mean_;
    const Vec3 y = state.positions[j] - y_mean_;
    sxx_ += x.squaredNorm();
    syy_ += y.squaredNorm();
    c_ += x * y.transpose();
  }
}

double GroupMoments::score(int candidate, const DeformationState& state) const {
  const auto i = static_cast<std::size_t>(candidate);
  // |R^-1 a - R'^-1 b| = |B a - b| with B = R' R^-1.
  const Mat3 b = quat_to_rot(state.rotations[i]) * quat_to_rot(state.initial_rotations[i]).transpose();
  const Vec3 r = b * (state.initial_positions[i] - x_mean_) - (state.positions[i] - y_mean_);
  return std::max(0.0, r.squaredNorm() + (sxx_ + syy_ - 2.0 * (b * c_).trace()) / n_);
}

RigidGroupSet refine_groups(const RigidGroupSet& groups, const DeformationState& state,
                            const PointIndex& current_index, const RefineParams& params,
                            RefineStats* stats) {
  if (!(params.r_refinement > 0)) throw Error(ErrorCode::kInvalidInput, "r_refinement must be positive");
  if (!groups.ids_valid() || groups.gaussian_count != state.size()) {
    throw Error(ErrorCode::kInvalidInput, "group set does not match the deformation state");
  }
  const std::vector<int> labels = groups.labels();
  struct Claim {
    double score;
    int group;
  };
  std::map<int, Claim> claims;
  std::vector<std::vector<char>> drop(groups.size());
  RefineStats st;

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups.groups[g];
    if (members.empty()) continue;
    const GroupMoments mom(members, state);
    for (int c : ball_query(current_index, members, params.r_refinement)) {
      if (labels[c] >= 0) continue;  // members of this or an earlier-claimed group
      const double s = mom.score(c, state);
      if (!(s < params.tau_low)) continue;
      auto [it, inserted] = claims.emplace(c, Claim{s, static_cast<int>(g)});
      if (!inserted) {
        ++st.contested;
        if (s < it->second.score) it->second = Claim{s, static_cast<int>(g)};
      }
    }
    drop[g].assign(members.size(), 0);
    for (std::size_t m = 0; m < members.size(); ++m) {
      if (mom.score(members[m], state) > params.tau_high) drop[g][m] = 1;
    }
  }

  RigidGroupSet out;
  out.gaussian_count = groups.gaussian_count;
  out.transforms = groups.transforms;
  out.groups.resize(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t m = 0; m < groups.groups[g].size(); ++m) {
      if (drop[g][m]) {
        ++st.removed;
      } else {
        out.groups[g].push_back(groups.groups[g][m]);
      }
    }
  }
  for (const auto& [id, claim] : claims) {
    out.groups[claim.group].push_back(id);
    ++st.added;
  }
  for (auto& g : out.groups) std::sort(g.begin(), g.end());
  if (stats) *stats = st;
  return out;
}

RigidGroupSet refine_groups(const RigidGroupSet& groups, const DeformationState& state,
                            const RefineParams& params, RefineStats* stats) {
  const PointIndex index(state.positions);
  return refine_groups(groups, state, index, params, stats);
}

int connected_components(std::span<const int> members, std::span<const Vec3> positions, double radius) {
  std::vector<Vec3> pts;
  for (int id : members) pts.push_back(positions[id]);
  const auto lab = component_labels(pts, radius);
  return lab.empty() ? 0 : *std::max_element(lab.begin(), lab.end()) + 1;
}

}  // namespace gsdeform
