#include "gsdeform/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "gsdeform/error.hpp"
#include "gsdeform/spatial_index.hpp"

namespace gsdeform {

bool Mask::inside(const Vec2& pixel) const {
  const auto x = static_cast<long>(std::floor(pixel.x()));
  const auto y = static_cast<long>(std::floor(pixel.y()));
  if (x < 0 || y < 0 || x >= width || y >= height) return false;
  return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
              static_cast<std::size_t>(x)] != 0;
}

int grid_overlap_score(const PixelMatchSet& matches, GridDims grid, ImageSize target) {
  if (grid.rows < 1 || grid.cols < 1) throw Error(ErrorCode::kInvalidInput, "grid dims must be >= 1");
  if (target.width <= 0 || target.height <= 0) {
    throw Error(ErrorCode::kInvalidInput, "target image size must be positive");
  }
  std::vector<char> marked(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  int count = 0;
  for (const auto& m : matches.matches) {
    const double x = m.target.x(), y = m.target.y();
    if (!(x >= 0 && y >= 0 && x < target.width && y < target.height)) continue;
    const int col = std::min(grid.cols - 1, static_cast<int>(x * grid.cols / target.width));
    const int row = std::min(grid.rows - 1, static_cast<int>(y * grid.rows / target.height));
    char& cell = marked[static_cast<std::size_t>(row) * grid.cols + col];
    if (!cell) {
      cell = 1;
      ++count;
    }
  }
  return count;
}

ViewSelection select_view(std::span<const PixelMatchSet> views, GridDims grid, ImageSize target) {
  if (views.empty()) throw Error(ErrorCode::kInvalidInput, "select_view needs at least one view");
  ViewSelection sel;
  int best = 0;
  for (const auto& v : views) {
    const int score = grid_overlap_score(v, grid, target);
    sel.scores[v.view_id] = std::max(sel.scores[v.view_id], score);
  }
  for (const auto& [id, score] : sel.scores) {  // ascending id, so ties keep the lowest
    if (score > best) {
      best = score;
      sel.view_id = id;
    }
  }
  if (best == 0) throw Error(ErrorCode::kNoOverlap, "no view has any matched grid cell");
  return sel;
}

std::vector<double> visibility(std::span<const Vec3> centers, std::span<const double> opacities,
                               const Camera& camera, double cell_size) {
  if (!(cell_size >= 1.0)) throw Error(ErrorCode::kInvalidInput, "visibility cell size must be >= 1");
  struct Entry {
    std::int64_t cell;
    double depth;
    int id;
  };
  std::vector<Entry> entries;
  entries.reserve(centers.size());
  std::vector<double> vis(centers.size(), 0.0);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const Vec3 pc = camera.to_camera(centers[i]);
    if (!(pc.z() > 0.0)) continue;
    const double u = camera.fx * pc.x() / pc.z() + camera.cx;
    const double v = camera.fy * pc.y() / pc.z() + camera.cy;
    const auto cu = static_cast<std::int64_t>(std::floor(u / cell_size));
    const auto cv = static_cast<std::int64_t>(std::floor(v / cell_size));
    // Interleave into one key; cells beyond +-2^31 are not meaningful images.
    const std::int64_t key = (cv << 32) ^ (cu & 0xffffffffLL);
    entries.push_back({key, pc.z(), static_cast<int>(i)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.cell != b.cell) return a.cell < b.cell;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id < b.id;
  });
  double transmittance = 1.0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (k == 0 || entries[k].cell != entries[k - 1].cell) transmittance = 1.0;
    const double alpha = std::clamp(opacities[entries[k].id], 0.0, 1.0);
    vis[entries[k].id] = alpha * transmittance;
    transmittance *= 1.0 - alpha;
  }
  return vis;
}

std::vector<double> visibility(const GaussianSet& gaussians, const Camera& camera,
                               double cell_size) {
  std::vector<double> alpha;
  alpha.reserve(gaussians.size());
  for (const auto& g : gaussians) alpha.push_back(g.opacity);
  const auto centers = positions(gaussians);
  return visibility(centers, alpha, camera, cell_size);
}

GaussianPixelMatchSet associate(const PixelMatchSet& matches, std::span<const Vec3> centers,
                                std::span<const double> vis, const Camera& camera,
                                const AssociationParams& params) {
  std::vector<int> visible_ids;
  std::vector<Vec3> projected;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (vis[i] < params.visibility_threshold) continue;
    const auto px = camera.try_project(centers[i]);
    if (!px) continue;
    visible_ids.push_back(static_cast<int>(i));
    projected.emplace_back(px->x(), px->y(), 0.0);
  }
  if (visible_ids.empty()) {
    throw Error(ErrorCode::kNoCorrespondence, "no Gaussian passes the visibility threshold");
  }
  const PointIndex index(std::move(projected));

  struct Claim {
    double distance;
    double confidence;
    std::size_t match;
  };
  std::unordered_map<int, Claim> best;
  for (std::size_t m = 0; m < matches.matches.size(); ++m) {
    const auto& pm = matches.matches[m];
    const KnnResult nn = index.knn(Vec3(pm.source.x(), pm.source.y(), 0.0), 1);
    if (nn.neighbors.empty() || nn.neighbors.front().distance > params.pixel_radius) continue;
    const int gid = visible_ids[nn.neighbors.front().id];
    const Claim claim{nn.neighbors.front().distance, pm.confidence, m};
    auto [it, inserted] = best.try_emplace(gid, claim);
    if (!inserted) {
      const Claim& cur = it->second;
      const bool better = claim.distance < cur.distance ||
                          (claim.distance == cur.distance && claim.confidence > cur.confidence);
      if (better) it->second = claim;
    }
  }
  if (best.empty()) {
    throw Error(ErrorCode::kNoCorrespondence, "no pixel match lies close to a visible Gaussian");
  }
  GaussianPixelMatchSet out;
  out.reserve(best.size());
  for (const auto& [gid, claim] : best) {
    const auto& pm = matches.matches[claim.match];
    out.push_back({gid, pm.target, pm.confidence});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.gaussian_id < b.gaussian_id; });
  return out;
}

GaussianPixelMatchSet associate(const PixelMatchSet& matches, const GaussianSet& gaussians,
                                const Camera& camera, const AssociationParams& params) {
  const auto vis = visibility(gaussians, camera, params.cell_size);
  const auto centers = positions(gaussians);
  return associate(matches, centers, vis, camera, params);
}

PixelMatchSet filter_by_masks(const PixelMatchSet& matches, const Mask* source_mask,
                              const Mask* target_mask) {
  PixelMatchSet out{matches.view_id, {}};
  for (const auto& m : matches.matches) {
    if (source_mask && !source_mask->inside(m.source)) continue;
    if (target_mask && !target_mask->inside(m.target)) continue;
    out.matches.push_back(m);
  }
  return out;
}

}  // namespace gsdeform
