#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsdeform/anchor_graph.hpp"
#include "gsdeform/correspondence.hpp"
#include "gsdeform/deformation_state.hpp"
#include "gsdeform/error.hpp"
#include "gsdeform/optimizer.hpp"
#include "gsdeform/pipeline.hpp"

namespace gsdeform {

namespace fs = std::filesystem;

// Gaussians. The text format is linear-space and self-describing:
//   gsdeform-gaussians 1
//   fields x y z qw qx qy qz sx sy sz opacity sh_0 ... sh_{K-1}
//   count N
//   <N rows of values>
// The binary format is the usual splat PLY layout (log scale, logit opacity,
// f_dc_* / f_rest_* carried as-is).
GaussianSet load_gaussians(const fs::path& path);
void save_gaussians_text(const fs::path& path, const GaussianSet& gaussians);
void save_gaussians_ply(const fs::path& path, const GaussianSet& gaussians);
/// Picks the format from the extension (.ply binary, anything else text).
void save_gaussians(const fs::path& path, const GaussianSet& gaussians);

// Cameras: {"cameras": [{"id", "fx", "fy", "cx", "cy", "width", "height",
// "world_to_camera": [16 numbers, row-major]}]}
std::vector<Camera> load_cameras(const fs::path& path);
void save_cameras(const fs::path& path, const std::vector<Camera>& cameras);

struct SceneBundle {
  GaussianSet gaussians;
  std::vector<Camera> cameras;
  std::map<int, Mask> source_masks;
  std::optional<Mask> target_mask;
  std::string units = "unknown";
  double extent = 0.0;
};

// scene.json: {"gaussians": path, "cameras": path, "masks": {"<view>": path},
// "target_mask": path, "units": str}. Relative paths resolve against the
// bundle's directory.
SceneBundle load_scene(const fs::path& path);
void save_scene(const fs::path& dir, const SceneBundle& scene, const std::string& gaussian_file = "gaussians.ply");

// Pixel matches, one JSON object per line:
// {"view_id", "x_p", "y_p", "x_t", "y_t", "confidence"}.
// A directory loads every *.jsonl inside, sorted by name.
std::vector<PixelMatchSet> load_matches(const fs::path& path);
void save_matches(const fs::path& path, const std::vector<PixelMatchSet>& views);

// Masks as PGM (P5 or P2).
Mask load_mask(const fs::path& path);
void save_mask(const fs::path& path, const Mask& mask);

// Group labels, one "id label" line per Gaussian, -1 for ungrouped.
void save_labels(const fs::path& path, const std::vector<int>& labels);
std::vector<int> load_labels(const fs::path& path);

struct Checkpoint {
  AnchorGraph graph;
  std::vector<int> labels;
  std::string config_json = "{}";
  std::uint64_t seed = 0;
  std::string gaussians;  // path of the undeformed Gaussian set, may be empty
};

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const fs::path& path);

void save_loss_log(const fs::path& path, const std::vector<LossRecord>& history);
std::vector<LossRecord> load_loss_log(const fs::path& path);
std::string loss_record_json(const LossRecord& record);

// Configuration as JSON. Missing keys keep the values in `base`.
std::string config_to_json(const EngineConfig& config);
EngineConfig config_from_json(const std::string& text, const EngineConfig& base = {});
EngineConfig load_config(const fs::path& path, const EngineConfig& base = {});

/// {"error": "<code>", "message": "..."} on one line.
std::string error_record_json(ErrorCode code, const std::string& message);

}  // namespace gsdeform
