#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gsdeform/http_server.hpp"
#include "gsdeform/io.hpp"
#include "gsdeform/pipeline.hpp"
#include "gsdeform/synthetic.hpp"
#include "json.hpp"

using namespace gsdeform;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::string preset = "default";
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--preset", f.preset, "Base defaults: default, diva360, dfa or demo")
      ->check(CLI::IsMember({"default", "diva360", "dfa", "demo"}));
  cmd->add_option("--config", f.file, "JSON config layered over the preset")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "Override one value, e.g. optimize.lr_q=0.02 (repeatable)");
  cmd->add_option("--seed", f.seed, "Seed for every randomized stage");
  cmd->add_option("--iterations", f.iterations, "Optimizer iterations");
}

EngineConfig preset(const std::string& name) {
  if (name == "diva360") return EngineConfig::diva360();
  if (name == "dfa") return EngineConfig::dfa();
  if (name == "demo") return EngineConfig::demo();
  return {};
}

// defaults < preset < file < --set < dedicated flags
EngineConfig resolve_config(const ConfigFlags& f, EngineConfig base) {
  EngineConfig c = f.preset == "default" ? std::move(base) : preset(f.preset);
  if (!f.file.empty()) c = load_config(f.file, c);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::kInvalidInput, "--set expects key=value, got " + kv);
    json value = json::parse(kv.substr(eq + 1), nullptr, false);
    if (value.is_discarded()) value = kv.substr(eq + 1);
    json doc = json::object();
    json* node = &doc;
    std::istringstream path(kv.substr(0, eq));
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
    c = config_from_json(doc.dump(), c);
  }
  if (f.seed) {
    c.region_grow.seed = *f.seed;
    c.region_grow.ransac.seed = *f.seed;
    c.optimize.seed = *f.seed;
    c.optimize.group_loss.seed = *f.seed;
  }
  if (f.iterations) c.optimize.iterations = *f.iterations;
  return c;
}

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path) {
    if (!out_) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  }
  void write(const std::string& key, const json& value) {
    out_ << json{{key, value}}.dump() << '\n';
    out_.flush();
    std::cerr << "[gsdeform] " << key << ' ' << value.dump() << '\n';
  }

 private:
  std::ofstream out_;
};

DeformInputs inputs_from(const SceneBundle& scene, std::vector<PixelMatchSet> matches) {
  return {scene.gaussians, scene.cameras, std::move(matches), scene.source_masks, scene.target_mask};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json record_json(const LossRecord& r) { return json::parse(loss_record_json(r)); }

// Writes the outputs of one deform run into `out`.
void write_run(const fs::path& out, const DeformRun& run, const EngineConfig& config, const std::string& gaussians_path,
               const std::string& format, RunLog& log) {
  const std::string ext = format == "text" ? ".txt" : ".ply";
  save_gaussians(out / ("deformed" + ext), run.deformed);
  save_labels(out / "labels.txt", run.result.groups.labels());
  save_loss_log(out / "loss.jsonl", run.result.history);
  Checkpoint ck;
  ck.graph = run.result.graph;
  ck.labels = run.result.groups.labels();
  ck.config_json = config_to_json(config);
  ck.seed = config.optimize.seed;
  ck.gaussians = gaussians_path;
  save_checkpoint(out / "checkpoint.json", ck);

  json scores = json::object();
  for (const auto& [view, score] : run.selection.scores) scores[std::to_string(view)] = score;
  log.write("selected_view", {{"view", run.selection.view_id}, {"scores", scores}});
  log.write("associated", run.g2p.size());
  log.write("initial_groups", run.initial_groups.groups.size());
  if (!run.initial_groups.message.empty()) log.write("segmentation_warning", run.initial_groups.message);
  log.write("anchors", run.initial_graph.anchor_count());
  log.write("status", {{"status", to_string(run.result.status)}, {"message", run.result.message}});
  log.write("groups", run.result.groups.size());
  if (!run.result.history.empty()) log.write("final_loss", record_json(run.result.history.back()));
}

int cmd_select_view(const std::string& matches_path, const std::string& grid_text, const std::string& size_text,
                    const std::string& scene_path) {
  GridDims grid;
  char x = 0;
  std::istringstream gs(grid_text);
  if (!(gs >> grid.rows >> x >> grid.cols) || x != 'x') throw Error(ErrorCode::kInvalidInput, "--grid expects RxC");
  const auto views = load_matches(matches_path);
  ImageSize size;
  if (!size_text.empty()) {
    std::istringstream ss(size_text);
    if (!(ss >> size.width >> x >> size.height) || x != 'x') throw Error(ErrorCode::kInvalidInput, "--size expects WxH");
  } else if (!scene_path.empty()) {
    const auto scene = load_scene(scene_path);
    size = {scene.cameras.front().width, scene.cameras.front().height};
  } else {
    // Without a target image size, use the extent of the target pixels.
    double w = 1.0, h = 1.0;
    for (const auto& v : views) {
      for (const auto& m : v.matches) {
        w = std::max(w, m.target.x() + 1.0);
        h = std::max(h, m.target.y() + 1.0);
      }
    }
    size = {static_cast<int>(std::ceil(w)), static_cast<int>(std::ceil(h))};
  }
  const ViewSelection sel = select_view(views, grid, size);
  json scores = json::object();
  for (const auto& [view, score] : sel.scores) scores[std::to_string(view)] = score;
  std::cout << json{{"view", sel.view_id}, {"scores", scores}}.dump() << '\n';
  return 0;
}

int cmd_segment(const std::string& scene_path, const std::string& matches_path, std::optional<int> view,
                const std::string& out, const ConfigFlags& flags) {
  const EngineConfig config = resolve_config(flags, {});
  const SceneBundle scene = load_scene(scene_path);
  const DeformInputs in = inputs_from(scene, load_matches(matches_path));
  int view_id = 0;
  if (view) {
    view_id = *view;
  } else {
    const Camera& first = scene.cameras.front();
    view_id = select_view(in.matches, config.grid, {first.width, first.height}).view_id;
  }
  const auto g2p = resolve_matches(in, view_id, config.association);
  RegionGrowParams rg = config.region_grow;
  rg.r_grow = config.resolved_r_grow();
  const SegmentationResult seg =
      region_grow_init(g2p, scene.gaussians, camera_by_id(scene.cameras, view_id), rg);
  if (!seg.message.empty()) std::cerr << "[gsdeform] warning " << seg.message << '\n';
  save_labels(out, seg.groups.labels());
  std::cout << json{{"view", view_id}, {"associated", g2p.size()}, {"groups", seg.groups.size()}, {"labels", out}}.dump()
            << '\n';
  return 0;
}

int cmd_deform(const std::string& scene_path, const std::string& matches_path, const fs::path& out,
               const std::string& format, const ConfigFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  const EngineConfig config = resolve_config(flags, {});
  fs::create_directories(out);
  RunLog log(out / "run.log");
  log.write("command", "deform");
  log.write("config", json::parse(config_to_json(config)));
  const SceneBundle scene = load_scene(scene_path);
  const DeformRun run = run_deform(inputs_from(scene, load_matches(matches_path)), config);
  write_run(out, run, config, fs::absolute(scene_path).string(), format, log);
  log.write("seconds", seconds_since(t0));
  return run.result.status == OptimizeStatus::kNumericalFailure ? 1 : 0;
}

int cmd_interpolate(const std::string& from_path, const std::string& to_path, int steps, const fs::path& out,
                    const std::string& scene_path, const std::string& format, const ConfigFlags& flags) {
  const Checkpoint from = load_checkpoint(from_path);
  const Checkpoint to = load_checkpoint(to_path);
  EngineConfig config = resolve_config(flags, config_from_json(to.config_json));
  config.interpolate.steps = steps;
  GaussianSet base;
  if (!scene_path.empty()) {
    base = load_scene(scene_path).gaussians;
  } else {
    if (to.gaussians.empty()) throw Error(ErrorCode::kInvalidInput, "checkpoint has no scene path; pass --scene");
    base = load_scene(to.gaussians).gaussians;
  }
  std::vector<Quat> q;
  for (const auto& g : base) q.push_back(g.q);
  const auto mu = positions(base);
  const Trajectory traj = interpolate(from.graph, to.graph, mu, q, RigidGroupSet::from_labels(to.labels), config.interpolate);
  fs::create_directories(out);
  const std::string ext = format == "text" ? ".txt" : ".ply";
  for (std::size_t s = 0; s < traj.size(); ++s) {
    const GaussianSet frame = blend(traj[s], mu, q).apply_to(base);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu", s);
    save_gaussians(out / (name + ext), frame);
  }
  std::cout << json{{"snapshots", traj.size()}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

int cmd_sequence(const std::string& scene_path, const std::vector<std::string>& targets, const fs::path& out,
                 const std::string& format, const ConfigFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  const EngineConfig config = resolve_config(flags, {});
  fs::create_directories(out);
  RunLog log(out / "run.log");
  log.write("command", "sequence");
  log.write("config", json::parse(config_to_json(config)));
  SceneBundle scene = load_scene(scene_path);
  std::string source = fs::absolute(scene_path).string();
  for (std::size_t f = 0; f < targets.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu", f + 1);
    const fs::path dir = out / name;
    fs::create_directories(dir);
    log.write("frame", {{"index", f + 1}, {"matches", targets[f]}});
    DeformInputs in = inputs_from(scene, load_matches(targets[f]));
    if (f > 0) in.source_masks.clear();  // masks describe the rest pose only
    const DeformRun run = run_deform(in, config);
    write_run(dir, run, config, source, format, log);
    if (run.result.status == OptimizeStatus::kNumericalFailure) return 1;
    // Each frame starts from the previous result.
    scene.gaussians = run.deformed;
    scene.source_masks.clear();
    save_scene(dir / "scene", scene);
    source = fs::absolute(dir / "scene" / "scene.json").string();
  }
  log.write("seconds", seconds_since(t0));
  return 0;
}

int cmd_serve(const std::string& scene_path, const std::string& labels, const std::string& host, int port,
              const ConfigFlags& flags) {
  const EngineConfig config = resolve_config(flags, EngineConfig::demo());
  auto sessions = std::make_shared<SessionManager>(config);
  std::optional<fs::path> labels_path;
  if (!labels.empty()) labels_path = labels;
  const std::string id = sessions->create_from_file(scene_path, labels_path);
  HttpServer server(sessions);
  std::cerr << "[gsdeform] config " << json::parse(config_to_json(config)).dump() << '\n';
  std::cout << json{{"session", id}, {"host", host}, {"port", port}}.dump() << std::endl;
  server.listen(host, port);
  return 0;
}

int cmd_demo_scene(const fs::path& out, int frames, std::uint64_t seed, int per_part) {
  SyntheticSceneParams p;
  p.seed = seed;
  p.gaussians_per_part = per_part;
  const SyntheticSequence seq = make_two_body_sequence(p, frames);
  SceneBundle scene;
  scene.gaussians = seq.scene.gaussians;
  scene.cameras = seq.scene.cameras;
  scene.units = "synthetic";
  save_scene(out, scene);
  for (int f = 0; f < frames; ++f) {
    const fs::path dir = out / (f == 0 ? std::string("matches") : "matches_" + std::to_string(f + 1));
    fs::create_directories(dir);
    for (const auto& view : seq.matches[f]) save_matches(dir / (std::to_string(view.view_id) + ".jsonl"), {view});
    save_gaussians(out / ("truth_" + std::to_string(f + 1) + ".ply"), seq.frames[f]);
  }
  save_labels(out / "truth_labels.txt", seq.scene.part);
  std::ofstream(out / "config.json") << config_to_json(EngineConfig::demo()) << '\n';
  std::cout << json{{"out", out.string()}, {"gaussians", scene.gaussians.size()}, {"frames", frames}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rigidity-aware Gaussian deformation from a single view"};
  app.require_subcommand(1);
  std::string format = "ply";
  app.add_option("--format", format, "Gaussian output format")->check(CLI::IsMember({"ply", "text"}));

  std::string matches, grid = "16x16", size, scene, out, labels, from, to, host = "127.0.0.1";
  std::vector<std::string> targets;
  std::optional<int> view;
  int steps = 10, port = 8080, frames = 1, per_part = 600;
  std::uint64_t demo_seed = 0;

  auto* sv = app.add_subcommand("select-view", "Pick the view whose matches cover the target best");
  sv->add_option("--matches", matches, "Match file or directory")->required();
  sv->add_option("--grid", grid, "Overlap grid, RxC");
  sv->add_option("--size", size, "Target image size, WxH");
  sv->add_option("--scene", scene, "Scene bundle to take the image size from");

  ConfigFlags seg_flags, deform_flags, interp_flags, seq_flags, serve_flags;
  auto* seg = app.add_subcommand("segment", "Region-growing rigid group initialization");
  seg->add_option("--scene", scene)->required();
  seg->add_option("--matches", matches)->required();
  seg->add_option("--view", view, "View id; selected automatically when omitted");
  seg->add_option("--out", out, "Labels file")->default_val("labels.txt");
  add_config_flags(seg, seg_flags);

  auto* def = app.add_subcommand("deform", "Full pipeline: select view, associate, segment, optimize");
  def->add_option("--scene", scene)->required();
  def->add_option("--matches", matches)->required();
  def->add_option("--out", out, "Output directory")->required();
  add_config_flags(def, deform_flags);

  auto* itp = app.add_subcommand("interpolate", "Rigidity-preserving trajectory between two checkpoints");
  itp->add_option("--from", from)->required()->check(CLI::ExistingFile);
  itp->add_option("--to", to)->required()->check(CLI::ExistingFile);
  itp->add_option("--steps", steps)->check(CLI::PositiveNumber);
  itp->add_option("--out", out)->required();
  itp->add_option("--scene", scene, "Undeformed scene; defaults to the one recorded in --to");
  add_config_flags(itp, interp_flags);

  auto* seq = app.add_subcommand("sequence", "Autoregressive multi-frame deformation");
  seq->add_option("--scene", scene)->required();
  seq->add_option("--targets", targets, "Match sets, one per frame")->required()->delimiter(',');
  seq->add_option("--out", out)->required();
  add_config_flags(seq, seq_flags);

  auto* srv = app.add_subcommand("serve", "Start the manipulation service");
  srv->add_option("--scene", scene)->required();
  srv->add_option("--labels", labels, "Initial group labels");
  srv->add_option("--host", host);
  srv->add_option("--port", port);
  add_config_flags(srv, serve_flags);

  auto* demo = app.add_subcommand("demo-scene", "Write the synthetic two-body scene");
  demo->add_option("--out", out)->required();
  demo->add_option("--frames", frames)->check(CLI::PositiveNumber);
  demo->add_option("--seed", demo_seed);
  demo->add_option("--per-part", per_part)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << error_record_json(ErrorCode::kInvalidInput, e.what()) << '\n';
    return code;
  }

  try {
    if (*sv) return cmd_select_view(matches, grid, size, scene);
    if (*seg) return cmd_segment(scene, matches, view, out, seg_flags);
    if (*def) return cmd_deform(scene, matches, out, format, deform_flags);
    if (*itp) return cmd_interpolate(from, to, steps, out, scene, format, interp_flags);
    if (*seq) return cmd_sequence(scene, targets, out, format, seq_flags);
    if (*srv) return cmd_serve(scene, labels, host, port, serve_flags);
    if (*demo) return cmd_demo_scene(out, frames, demo_seed, per_part);
  } catch (const Error& e) {
    std::cerr << error_record_json(e.code(), e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << error_record_json(ErrorCode::kIo, e.what()) << '\n';
    return 2;
  }
  return 0;
}
