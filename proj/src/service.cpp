#include "gsdeform/service.hpp"

#include <bit>
#include <climits>
#include <cstring>
#include <sstream>

#include "gsdeform/error.hpp"

namespace gsdeform {

struct SessionManager::Session {
  SceneBundle scene;
  AnchorGraph graph;
  RigidGroupSet groups;
  std::vector<Vec3> mu;
  std::vector<Quat> q;
  std::vector<double> opacity;
  std::optional<DeformationOptimizer> optimizer;
  int camera_id = -1;
  std::mutex work;  // held while stepping or mutating
  mutable std::mutex snap_mutex;
  std::shared_ptr<const StateSnapshot> snapshot;

  std::shared_ptr<const StateSnapshot> current() const {
    std::lock_guard lock(snap_mutex);
    return snapshot;
  }
  void publish(std::shared_ptr<const StateSnapshot> s) {
    std::lock_guard lock(snap_mutex);
    snapshot = std::move(s);
  }
};

namespace {

std::unique_lock<std::mutex> acquire(std::mutex& m, const std::string& id) {
  std::unique_lock lock(m, std::try_to_lock);
  if (!lock.owns_lock()) throw Error(ErrorCode::kBusy, "session " + id + " is stepping");
  return lock;
}

}  // namespace

SessionManager::SessionManager(EngineConfig config) : config_(std::move(config)) {}

std::string SessionManager::create(SceneBundle scene, std::optional<std::vector<int>> labels) {
  if (scene.gaussians.empty()) throw Error(ErrorCode::kInvalidInput, "scene has no Gaussians");
  if (scene.cameras.empty()) throw Error(ErrorCode::kSchema, "scene has no cameras");
  auto s = std::make_shared<Session>();
  s->mu = positions(scene.gaussians);
  for (const auto& g : scene.gaussians) {
    s->q.push_back(normalized(g.q));
    s->opacity.push_back(g.opacity);
  }
  s->graph = build_anchor_graph(s->mu, config_.anchors);
  s->groups.gaussian_count = s->mu.size();
  if (labels) {
    if (labels->size() != s->mu.size()) throw Error(ErrorCode::kInvalidInput, "label count differs from Gaussian count");
    s->groups = RigidGroupSet::from_labels(*labels);
  }
  s->scene = std::move(scene);
  auto snap = std::make_shared<StateSnapshot>();
  snap->positions = s->mu;
  snap->labels = s->groups.labels();
  s->snapshot = snap;

  std::lock_guard lock(mutex_);
  const std::string id = "s" + std::to_string(next_id_++);
  sessions_[id] = std::move(s);
  return id;
}

std::string SessionManager::create_from_file(const fs::path& scene_path, const std::optional<fs::path>& labels_path) {
  SceneBundle scene = load_scene(scene_path);
  std::optional<std::vector<int>> labels;
  if (labels_path) labels = load_labels(*labels_path);
  return create(std::move(scene), std::move(labels));
}

std::vector<std::string> SessionManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  return ids;
}

void SessionManager::remove(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (sessions_.erase(id) == 0) throw Error(ErrorCode::kNotFound, "unknown session " + id);
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session " + id);
  return it->second;
}

DragResolution SessionManager::set_drags(const std::string& id, int camera_id, const std::vector<Drag>& drags) {
  auto s = find(id);
  auto lock = acquire(s->work, id);
  const Camera& cam = camera_by_id(s->scene.cameras, camera_id);
  const std::vector<Vec3> current = s->current()->positions;
  const std::vector<double> vis = visibility(current, s->opacity, cam, config_.association.cell_size);

  DragResolution res;
  std::vector<char> taken(current.size(), 0);
  for (std::size_t d = 0; d < drags.size(); ++d) {
    PixelMatchSet one;
    one.view_id = camera_id;
    one.matches.push_back({drags[d].pick, drags[d].target, 1.0});
    int gid = -1;
    try {
      const auto m = associate(one, current, vis, cam, config_.association);
      gid = m.front().gaussian_id;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoCorrespondence) throw;
    }
    if (gid >= 0 && taken[gid]) gid = -1;  // two picks on one Gaussian: first wins
    res.gaussian_ids.push_back(gid);
    if (gid < 0) {
      res.unresolved.push_back(static_cast<int>(d));
    } else {
      taken[gid] = 1;
      res.constraints.push_back({gid, drags[d].target, 1.0});
    }
  }
  if (res.constraints.empty()) throw Error(ErrorCode::kNoCorrespondence, "no drag resolved to a visible Gaussian");
  std::sort(res.constraints.begin(), res.constraints.end(),
            [](const auto& a, const auto& b) { return a.gaussian_id < b.gaussian_id; });

  if (s->optimizer && s->camera_id == camera_id) {
    s->optimizer->set_matches(res.constraints);
  } else {
    s->camera_id = camera_id;
    OptimizeConfig cfg = config_.optimize;
    cfg.iterations = INT_MAX;
    const AnchorGraph start = s->optimizer ? s->optimizer->graph() : s->graph;
    s->optimizer.emplace(start, s->mu, s->q, res.constraints, s->groups, cam, cfg);
  }
  return res;
}

std::shared_ptr<const StateSnapshot> SessionManager::step(const std::string& id, int n) {
  if (n < 0) throw Error(ErrorCode::kInvalidInput, "step count must be >= 0");
  auto s = find(id);
  auto lock = acquire(s->work, id);
  if (n == 0) return s->current();
  if (!s->optimizer) throw Error(ErrorCode::kInvalidInput, "set drags before stepping");
  // Step a copy; on failure the session stays at its last completed burst.
  DeformationOptimizer trial = *s->optimizer;
  trial.step(n);
  if (trial.status() == OptimizeStatus::kNumericalFailure) throw Error(ErrorCode::kNumericalFailure, trial.message());
  s->optimizer = std::move(trial);
  const DeformationOptimizer& opt = *s->optimizer;
  s->groups = opt.groups();
  auto snap = std::make_shared<StateSnapshot>();
  snap->iteration = opt.iteration();
  snap->positions = opt.state().positions;
  snap->labels = s->groups.labels();
  snap->history = opt.history();
  s->publish(snap);
  return snap;
}

std::shared_ptr<const StateSnapshot> SessionManager::state(const std::string& id) const { return find(id)->current(); }

std::vector<int> SessionManager::groups(const std::string& id) const { return find(id)->current()->labels; }

void SessionManager::set_groups(const std::string& id, const std::vector<int>& labels) {
  auto s = find(id);
  auto lock = acquire(s->work, id);
  if (labels.size() != s->mu.size()) throw Error(ErrorCode::kInvalidInput, "label count differs from Gaussian count");
  s->groups = RigidGroupSet::from_labels(labels);
  if (s->optimizer) s->optimizer->set_groups(s->groups);
  auto snap = std::make_shared<StateSnapshot>(*s->current());
  snap->labels = s->groups.labels();
  s->publish(snap);
}

std::string encode_state(const StateSnapshot& s) {
  static_assert(std::endian::native == std::endian::little, "state encoding assumes a little-endian host");
  std::ostringstream out;
  out << "gsdeform-state 1\n"
      << "count " << s.positions.size() << '\n'
      << "iteration " << s.iteration << '\n'
      << "status " << s.status << '\n';
  if (!s.history.empty()) out << "loss " << loss_record_json(s.history.back()) << '\n';
  out << '\n';
  std::string body = out.str();
  const std::size_t n = s.positions.size();
  std::vector<float> pos(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) pos[3 * i + k] = static_cast<float>(s.positions[i][k]);
  }
  std::vector<std::int32_t> labels(s.labels.begin(), s.labels.end());
  labels.resize(n, -1);
  body.append(reinterpret_cast<const char*>(pos.data()), pos.size() * sizeof(float));
  body.append(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(std::int32_t));
  return body;
}

StateSnapshot decode_state(const std::string& bytes) {
  const std::size_t end = bytes.find("\n\n");
  if (bytes.rfind("gsdeform-state 1\n", 0) != 0 || end == std::string::npos) {
    throw Error(ErrorCode::kSchema, "not a state payload");
  }
  StateSnapshot s;
  std::size_t n = 0;
  std::istringstream header(bytes.substr(0, end));
  std::string line;
  std::getline(header, line);
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "count") ls >> n;
    if (key == "iteration") ls >> s.iteration;
    if (key == "status") ls >> s.status;
  }
  const std::size_t offset = end + 2;
  if (bytes.size() != offset + n * (3 * sizeof(float) + sizeof(std::int32_t))) {
    throw Error(ErrorCode::kData, "state payload size does not match its header");
  }
  s.positions.resize(n);
  s.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float p[3];
    std::memcpy(p, bytes.data() + offset + 12 * i, 12);
    s.positions[i] = Vec3(p[0], p[1], p[2]);
    std::memcpy(&s.labels[i], bytes.data() + offset + 12 * n + 4 * i, 4);
  }
  return s;
}

}  // namespace gsdeform
