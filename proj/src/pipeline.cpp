#include "gsdeform/pipeline.hpp"

#include "gsdeform/error.hpp"

namespace gsdeform {

EngineConfig EngineConfig::diva360() {
  EngineConfig c;
  c.optimize.lr_q = 0.05;
  c.optimize.lr_t = 0.01;
  c.optimize.refinement = {0.01, 0.01, 0.01};
  c.anchors.k_anchor = 10;
  c.anchors.voxel_size = 0.06;
  return c;
}

EngineConfig EngineConfig::dfa() {
  EngineConfig c;
  c.optimize.lr_q = 0.03;
  c.optimize.lr_t = 0.003;
  c.optimize.refinement = {0.01, 0.01, 0.05};
  c.anchors.k_anchor = 9;
  c.anchors.voxel_size = 0.02;
  return c;
}

EngineConfig EngineConfig::demo() {
  EngineConfig c = diva360();
  c.optimize.refinement.r_refinement = 0.1;
  c.region_grow.r_grow = 0.15;
  c.anchors.voxel_size = 0.1;
  c.optimize.lr_final_ratio = 0.1;
  c.optimize.weights.group = 100.0;
  return c;
}

double EngineConfig::resolved_r_grow() const {
  return region_grow.r_grow > 0 ? region_grow.r_grow : 2.0 * optimize.refinement.r_refinement;
}

const Camera& camera_by_id(const std::vector<Camera>& cameras, int id) {
  for (const auto& c : cameras) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::kNotFound, "no camera with id " + std::to_string(id));
}

GaussianPixelMatchSet resolve_matches(const DeformInputs& in, int view_id, const AssociationParams& params) {
  const Camera& cam = camera_by_id(in.cameras, view_id);
  for (const auto& set : in.matches) {
    if (set.view_id != view_id) continue;
    const auto mask = in.source_masks.find(view_id);
    const PixelMatchSet filtered = filter_by_masks(set, mask == in.source_masks.end() ? nullptr : &mask->second,
                                                   in.target_mask ? &*in.target_mask : nullptr);
    return associate(filtered, in.gaussians, cam, params);
  }
  throw Error(ErrorCode::kNotFound, "no matches for view " + std::to_string(view_id));
}

DeformRun run_deform(const DeformInputs& in, const EngineConfig& config) {
  if (in.gaussians.empty()) throw Error(ErrorCode::kInvalidInput, "empty Gaussian set");
  DeformRun run;
  const Camera& first = in.cameras.empty() ? throw Error(ErrorCode::kInvalidInput, "no cameras") : in.cameras.front();
  ImageSize target{first.width, first.height};
  if (in.target_mask) target = {in.target_mask->width, in.target_mask->height};
  run.selection = select_view(in.matches, config.grid, target);
  const Camera& cam = camera_by_id(in.cameras, run.selection.view_id);
  run.g2p = resolve_matches(in, run.selection.view_id, config.association);

  const std::vector<Vec3> mu = positions(in.gaussians);
  std::vector<Quat> q;
  q.reserve(in.gaussians.size());
  for (const auto& g : in.gaussians) q.push_back(normalized(g.q));

  RegionGrowParams rg = config.region_grow;
  rg.r_grow = config.resolved_r_grow();
  run.initial_groups = region_grow_init(run.g2p, mu, cam, rg);
  run.initial_graph = build_anchor_graph(mu, config.anchors);
  run.result = optimize(run.initial_graph, mu, q, run.g2p, run.initial_groups.groups, cam, config.optimize);
  run.deformed = run.result.state.apply_to(in.gaussians);
  return run;
}

}  // namespace gsdeform
