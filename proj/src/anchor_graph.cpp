#include "gsdeform/anchor_graph.hpp"

#include <algorithm>
#include <set>

#include "gsdeform/error.hpp"
#include "gsdeform/spatial_index.hpp"

namespace gsdeform {

void AnchorGraph::reset_motion() {
  rotations.assign(positions.size(), Quat::identity());
  translations.assign(positions.size(), Vec3::Zero());
}

bool AnchorGraph::same_topology(const AnchorGraph& o) const {
  return positions == o.positions && blend.k == o.blend.k && blend.ids == o.blend.ids &&
         blend.weights == o.blend.weights && neighbors == o.neighbors &&
         rotations.size() == o.rotations.size() && translations.size() == o.translations.size();
}

std::vector<Vec3> init_anchors(std::span<const Vec3> points, double voxel_size) {
  std::vector<Vec3> anchors;
  for (const auto& v : voxelize(points, voxel_size)) anchors.push_back(v.centroid);
  return anchors;
}

BlendWeights compute_weights(std::span<const Vec3> points, std::span<const Vec3> anchors,
                             int k_anchor) {
  if (anchors.empty()) throw Error(ErrorCode::kInvalidInput, "compute_weights needs >= 1 anchor");
  if (k_anchor < 1) throw Error(ErrorCode::kInvalidInput, "k_anchor must be >= 1");
  std::vector<Vec3> all(points.begin(), points.end());
  all.insert(all.end(), anchors.begin(), anchors.end());
  double extent = scene_extent(all);
  const double eps = 1e-8 * (extent > 0 ? extent : 1.0);

  const PointIndex index(std::vector<Vec3>(anchors.begin(), anchors.end()));
  BlendWeights bw;
  bw.k = std::min<int>(k_anchor, static_cast<int>(anchors.size()));
  bw.ids.reserve(points.size() * bw.k);
  bw.weights.reserve(points.size() * bw.k);
  for (const auto& p : points) {
    const KnnResult nn = index.knn(p, bw.k);
    double total = 0.0;
    const std::size_t row = bw.weights.size();
    for (const auto& n : nn.neighbors) {
      const double w = 1.0 / (n.distance + eps);
      bw.ids.push_back(n.id);
      bw.weights.push_back(w);
      total += w;
    }
    for (int j = 0; j < bw.k; ++j) bw.weights[row + j] /= total;
  }
  return bw;
}

std::vector<std::vector<int>> anchor_neighbors(std::span<const Vec3> anchors, int k) {
  std::vector<std::set<int>> adj(anchors.size());
  if (anchors.size() > 1 && k > 0) {
    const PointIndex index(std::vector<Vec3>(anchors.begin(), anchors.end()));
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      for (const auto& n : index.knn(anchors[i], k + 1).neighbors) {
        if (n.id == static_cast<int>(i)) continue;
        adj[i].insert(n.id);
        adj[static_cast<std::size_t>(n.id)].insert(static_cast<int>(i));
      }
    }
  }
  std::vector<std::vector<int>> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) out[i].assign(adj[i].begin(), adj[i].end());
  return out;
}

AnchorGraph build_anchor_graph(std::span<const Vec3> points, const AnchorParams& params) {
  AnchorGraph g;
  g.positions = init_anchors(points, params.voxel_size);
  g.reset_motion();
  g.blend = compute_weights(points, g.positions, params.k_anchor);
  g.neighbors = anchor_neighbors(g.positions, params.k_arap);
  return g;
}

BlendEvaluation evaluate_blend(const AnchorGraph& graph, std::span<const Vec3> initial_positions) {
  const std::size_t n = graph.gaussian_count();
  if (initial_positions.size() != n) {
    throw Error(ErrorCode::kInvalidInput, "anchor graph was built for a different Gaussian count");
  }
  const int k = graph.blend.k;
  const std::size_t m = graph.anchor_count();
  BlendEvaluation ev;
  ev.anchor_rotations.resize(m);
  ev.anchor_unit.resize(m);
  ev.anchor_norm.resize(m);
  for (std::size_t a = 0; a < m; ++a) {
    ev.anchor_norm[a] = graph.rotations[a].norm();
    ev.anchor_unit[a] = normalized(graph.rotations[a]);
    ev.anchor_rotations[a] = quat_to_rot(ev.anchor_unit[a]);
  }
  ev.signs.resize(n * k);
  ev.rotation_sums.resize(n);
  ev.blended.resize(n);
  ev.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int* ids = &graph.blend.ids[i * k];
    const double* w = &graph.blend.weights[i * k];
    const Quat& first = ev.anchor_unit[ids[0]];
    const Vec3& mu = initial_positions[i];
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    Vec3 offset = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      const int a = ids[j];
      const Quat& q = ev.anchor_unit[a];
      const double sign = q.dot(first) < 0 ? -1.0 : 1.0;
      ev.signs[i * k + j] = sign;
      sum += w[j] * sign * q.coeffs();
      const Vec3& anchor = graph.positions[a];
      // Written as mu + sum w ((R - I)(mu - a) + T) so the identity graph is exact.
      offset += w[j] * ((ev.anchor_rotations[a] - Mat3::Identity()) * (mu - anchor) + graph.translations[a]);
    }
    if (!(sum.norm() >= 1e-6)) {
      throw Error(ErrorCode::kDegenerateBlend, "blended anchor quaternion cancels out");
    }
    ev.rotation_sums[i] = sum;
    ev.blended[i] = Quat::from_coeffs(sum / sum.norm());
    ev.positions[i] = mu + offset;
  }
  return ev;
}

std::vector<Quat> blended_rotations(const AnchorGraph& graph) {
  std::vector<Vec3> dummy(graph.gaussian_count(), Vec3::Zero());
  return evaluate_blend(graph, dummy).blended;
}

DeformationState blend(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                       std::span<const Quat> initial_rotations) {
  if (initial_rotations.size() != initial_positions.size()) {
    throw Error(ErrorCode::kInvalidInput, "position and rotation counts differ");
  }
  BlendEvaluation ev = evaluate_blend(graph, initial_positions);
  DeformationState s;
  s.initial_positions.assign(initial_positions.begin(), initial_positions.end());
  s.initial_rotations.reserve(initial_rotations.size());
  for (const auto& q : initial_rotations) s.initial_rotations.push_back(normalized(q));
  s.positions = std::move(ev.positions);
  s.rotations.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s.rotations[i] = quat_compose(ev.blended[i], s.initial_rotations[i]);
  }
  return s;
}

DeformationState blend(const AnchorGraph& graph, const GaussianSet& gaussians) {
  std::vector<Quat> q;
  q.reserve(gaussians.size());
  for (const auto& g : gaussians) q.push_back(g.q);
  const auto mu = positions(gaussians);
  return blend(graph, mu, q);
}

}  // namespace gsdeform
