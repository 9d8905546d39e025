#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gsdeform/io.hpp"
#include "gsdeform/optimizer.hpp"
#include "gsdeform/pipeline.hpp"

namespace gsdeform {

struct Drag {
  Vec2 pick = Vec2::Zero();    // pixel on the current rendering
  Vec2 target = Vec2::Zero();  // where the picked point should go
};

struct DragResolution {
  std::vector<int> gaussian_ids;  // per drag, -1 when unresolved
  std::vector<int> unresolved;    // indices into the drag list
  GaussianPixelMatchSet constraints;
};

/// Immutable view of a session after a completed step.
struct StateSnapshot {
  int iteration = 0;
  std::string status = "idle";
  std::vector<Vec3> positions;
  std::vector<int> labels;
  std::vector<LossRecord> history;
};

/// Compact transfer format: a text header terminated by an empty line, then
/// N*3 little-endian float32 positions and N int32 labels.
std::string encode_state(const StateSnapshot& snapshot);
StateSnapshot decode_state(const std::string& bytes);

class SessionManager {
 public:
  explicit SessionManager(EngineConfig config = {});

  std::string create(SceneBundle scene, std::optional<std::vector<int>> labels = std::nullopt);
  std::string create_from_file(const fs::path& scene_path, const std::optional<fs::path>& labels_path = std::nullopt);
  std::vector<std::string> list() const;
  void remove(const std::string& id);

  /// Resolves picks against the session's current state and makes them the
  /// deformation constraints. Throws kNoCorrespondence when none resolve.
  DragResolution set_drags(const std::string& id, int camera_id, const std::vector<Drag>& drags);
  /// Runs n optimizer steps. Throws kBusy when a step is already running in
  /// this session; on numerical failure the session keeps its last good
  /// state and the error is rethrown.
  std::shared_ptr<const StateSnapshot> step(const std::string& id, int n);
  std::shared_ptr<const StateSnapshot> state(const std::string& id) const;
  std::vector<int> groups(const std::string& id) const;
  void set_groups(const std::string& id, const std::vector<int>& labels);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;

  EngineConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace gsdeform
