// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any
// failure. Oracles here are brute force or closed form and share no code
// path with what they check.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "gsdeform/io.hpp"
#include "gsdeform/objective.hpp"
#include "gsdeform/pipeline.hpp"
#include "gsdeform/pnp.hpp"
#include "gsdeform/spatial_index.hpp"
#include "gsdeform/synthetic.hpp"
#include "test_util.hpp"

using namespace gsdeform;
using gsdeform::testing::kabsch;
using gsdeform::testing::oracle_project;
using gsdeform::testing::pairwise_drift;
using gsdeform::testing::random_quat;
using gsdeform::testing::random_vec;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- gradients

struct GradInstance {
  std::vector<Vec3> mu;
  std::vector<Quat> q;
  AnchorGraph graph;
  GaussianPixelMatchSet g2p;
  RigidGroupSet groups;
  Camera camera;
  LossWeights weights;
};

GradInstance random_grad_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
  GradInstance in;
  in.camera = Camera::look_at(0, Vec3(0.2, 0.1, -3.0), Vec3::Zero(), Vec3::UnitY(), 300, 640, 480);
  const int n = pick(8, 50), anchors = pick(2, 8), groups = pick(1, 3);
  for (int i = 0; i < n; ++i) {
    in.mu.push_back(random_vec(rng, -0.5, 0.5));
    in.q.push_back(random_quat(rng));
  }
  for (int a = 0; a < anchors; ++a) in.graph.positions.push_back(random_vec(rng, -0.5, 0.5));
  in.graph.reset_motion();
  in.graph.blend = compute_weights(in.mu, in.graph.positions, std::min(anchors, pick(1, 4)));
  in.graph.neighbors = anchor_neighbors(in.graph.positions, std::min(anchors - 1, 3));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int a = 0; a < anchors; ++a) {
    const Quat r = quat_from_axis_angle(random_vec(rng).normalized(), 0.5 * u(rng));
    const double s = 0.6 + 0.8 * u(rng);  // raw quaternions are unnormalized
    in.graph.rotations[a] = Quat{s * r.w, s * r.x, s * r.y, s * r.z};
    in.graph.translations[a] = 0.1 * random_vec(rng);
  }
  for (int i = 0; i < n; ++i) {
    if (u(rng) < 0.5) continue;
    in.g2p.push_back({i, oracle_project(in.camera, in.mu[i]) + 8.0 * random_vec(rng).head<2>(), 0.2 + 0.8 * u(rng)});
  }
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng() % (groups + 1)) - 1;
  in.groups = RigidGroupSet::from_labels(labels);
  in.weights = {0.5 + u(rng), 0.5 + u(rng), 0.5 + u(rng), 0.0};
  return in;
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const int instances = 120;
  double worst = 0.0;
  for (int s = 0; s < instances; ++s) {
    const GradInstance in = random_grad_instance(1000 + s);
    auto total = [&](const AnchorGraph& g) {
      return total_loss_and_grad(g, in.mu, in.q, in.g2p, in.groups, in.camera, in.weights).total;
    };
    const Eigen::VectorXd analytic =
        total_loss_and_grad(in.graph, in.mu, in.q, in.g2p, in.groups, in.camera, in.weights).flat_gradient();
    double max_err = 0.0;
    const double h = 1e-6;
    for (std::size_t a = 0; a < in.graph.anchor_count(); ++a) {
      for (int c = 0; c < 7; ++c) {
        AnchorGraph p = in.graph, m = in.graph;
        if (c < 4) {
          Eigen::Vector4d qp = p.rotations[a].coeffs(), qm = m.rotations[a].coeffs();
          qp[c] += h;
          qm[c] -= h;
          p.rotations[a] = Quat::from_coeffs(qp);
          m.rotations[a] = Quat::from_coeffs(qm);
        } else {
          p.translations[a][c - 4] += h;
          m.translations[a][c - 4] -= h;
        }
        const double numeric = (total(p) - total(m)) / (2 * h);
        max_err = std::max(max_err, std::abs(numeric - analytic[7 * a + c]));
      }
    }
    worst = std::max(worst, max_err / std::max(analytic.cwiseAbs().maxCoeff(), 1e-12));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60,
          fmt("%d instances, max relative error %.2e (< 1e-4), %.1f s (< 60 s)", instances, worst, secs)};
}

// --------------------------------------------------------------- null cases

Outcome null_cases() {
  std::mt19937_64 rng(5);
  const Camera cam = Camera::look_at(0, Vec3(0, 0, -3), Vec3::Zero(), Vec3::UnitY(), 400, 640, 480);
  std::vector<Vec3> mu;
  std::vector<Quat> q;
  for (int i = 0; i < 40; ++i) {
    mu.push_back(random_vec(rng, -0.5, 0.5));
    q.push_back(random_quat(rng));
  }

  // Exact projection of a deformed state.
  AnchorGraph graph = build_anchor_graph(mu, AnchorParams{0.3, 4, 3});
  for (std::size_t a = 0; a < graph.anchor_count(); ++a) {
    graph.rotations[a] = quat_from_axis_angle(random_vec(rng).normalized(), 0.3);
    graph.translations[a] = 0.05 * random_vec(rng);
  }
  const DeformationState deformed = blend(graph, mu, q);
  GaussianPixelMatchSet g2p;
  for (int i = 0; i < 40; i += 3) g2p.push_back({i, oracle_project(cam, deformed.positions[i]), 1.0});
  const double l_deform = loss_deform(deformed, g2p, cam);

  // One rigid motion shared by the whole group.
  const Mat3 r = quat_to_rot(random_quat(rng));
  const Quat qr = rot_to_quat(r);
  const Vec3 t = random_vec(rng);
  DeformationState rigid;
  rigid.initial_positions = mu;
  rigid.initial_rotations = q;
  for (int i = 0; i < 40; ++i) {
    rigid.positions.push_back(r * mu[i] + t);
    rigid.rotations.push_back(quat_compose(qr, q[i]));
  }
  std::vector<int> all(40);
  for (int i = 0; i < 40; ++i) all[i] = i;
  const double l_group = loss_group(rigid, RigidGroupSet::from_labels(std::vector<int>(40, 0)));

  // Every anchor follows one global rigid motion.
  AnchorGraph global = build_anchor_graph(mu, AnchorParams{0.3, 4, 3});
  for (std::size_t a = 0; a < global.anchor_count(); ++a) {
    global.rotations[a] = qr;
    global.translations[a] = r * global.positions[a] + t - global.positions[a];
  }
  const double l_arap = loss_arap(global);

  // Candidate moved by a unit translation, identity rotations.
  DeformationState unit;
  unit.initial_positions = mu;
  unit.positions = mu;
  unit.initial_rotations.assign(40, Quat::identity());
  unit.rotations = unit.initial_rotations;
  unit.positions[0] += random_vec(rng).normalized();
  const std::vector<int> others(all.begin() + 1, all.end());
  const double score = rigidity_score(0, others, unit);

  const bool pass = l_deform < 1e-10 && l_group < 1e-10 && l_arap < 1e-10 && std::abs(score - 1.0) < 1e-9;
  return {pass, fmt("L_deform %.1e, L_group %.1e, L_arap %.1e (< 1e-10), unit-translation score 1 %+.1e", l_deform,
                    l_group, l_arap, score - 1.0)};
}

// --------------------------------------------------------------------- PnP

Outcome pnp_robustness() {
  const auto t0 = std::chrono::steady_clock::now();
  const Camera cam = Camera::look_at(0, Vec3(0.3, -0.2, -4), Vec3::Zero(), Vec3::UnitY(), 500, 640, 480);
  int min_recall = 100, max_false = 0;
  double max_rot = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(7000 + seed);
    std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
    std::vector<Vec3> pts;
    for (int i = 0; i < 100; ++i) pts.push_back(random_vec(rng, -0.5, 0.5));
    const RigidTransform truth{quat_to_rot(quat_from_axis_angle(random_vec(rng).normalized(), 0.8)),
                               random_vec(rng, -0.3, 0.3)};
    std::vector<Vec2> px;
    std::vector<char> outlier(100, 0);
    for (int i = 0; i < 100; ++i) px.push_back(oracle_project(cam, truth.apply(pts[i])));
    for (int i = 0; i < 30; ++i) {
      const int k = static_cast<int>(rng() % 100);
      if (outlier[k]) {
        --i;
        continue;
      }
      outlier[k] = 1;
      px[k] = Vec2(ux(rng), uy(rng));
    }
    RansacParams params;
    params.seed = seed;
    const PnPResult res = ransac_pnp(pts, px, cam, params);
    int recall = 0, false_in = 0;
    for (int i = 0; i < 100; ++i) {
      // An outlier that lands within the threshold of its true projection is an inlier.
      const bool truly_in = !outlier[i] || (px[i] - oracle_project(cam, truth.apply(pts[i]))).norm() < 2.0;
      if (truly_in && !outlier[i] && res.inliers[i]) ++recall;
      if (!truly_in && res.inliers[i]) ++false_in;
    }
    min_recall = std::min(min_recall, recall);
    max_false = std::max(max_false, false_in);
    max_rot = std::max(max_rot, rotation_angle_between(res.transform.rotation, truth.rotation) / kDeg);
  }
  const double secs = seconds_since(t0);
  const double recall = min_recall / 70.0;
  return {recall >= 0.95 && max_false <= 2 && max_rot < 0.1 && secs < 30,
          fmt("20 seeds, worst recall %.1f%% (>= 95%%), false inliers %d (<= 2), rotation error %.4f deg (< 0.1), "
              "%.2f s",
              100 * recall, max_false, max_rot, secs)};
}

// ----------------------------------------------------------- two-body scene

struct TwoBodyRun {
  SyntheticScene scene;
  DeformRun run;
  double seconds = 0.0;
};

const TwoBodyRun& two_body(std::uint64_t seed) {
  static std::map<std::uint64_t, TwoBodyRun> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  TwoBodyRun r;
  SyntheticSceneParams p;
  p.seed = seed;
  r.scene = make_two_body_scene(p);
  const auto t0 = std::chrono::steady_clock::now();
  r.run = run_deform({r.scene.gaussians, r.scene.cameras, r.scene.matches, {}, {}}, EngineConfig::demo());
  r.seconds = seconds_since(t0);
  return cache.emplace(seed, std::move(r)).first->second;
}

Outcome two_body_recovery() {
  double min_acc = 1.0, max_rot = 0.0, max_trans = 0.0, max_drift = 0.0, secs = 0.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const TwoBodyRun& r = two_body(seed);
    const auto& s = r.scene;
    secs += r.seconds;
    // Each group votes for its majority part; Gaussians outside groups count as wrong.
    int correct = 0;
    for (const auto& g : r.run.result.groups.groups) {
      int votes[2] = {0, 0};
      for (int id : g) ++votes[s.part[id]];
      correct += std::max(votes[0], votes[1]);
    }
    min_acc = std::min(min_acc, static_cast<double>(correct) / s.gaussians.size());
    const auto rest = positions(s.gaussians);
    const double extent = scene_extent(rest);
    for (int part = 0; part < 2; ++part) {
      std::vector<Vec3> a, b;
      for (std::size_t i = 0; i < rest.size(); ++i) {
        if (s.part[i] != part) continue;
        a.push_back(rest[i]);
        b.push_back(r.run.deformed[i].mu);
      }
      const RigidTransform fit = kabsch(a, b);
      const RigidTransform& truth = s.part_motions[part];
      Vec3 c = Vec3::Zero();
      for (const auto& x : a) c += x;
      c /= static_cast<double>(a.size());
      max_rot = std::max(max_rot, rotation_angle_between(fit.rotation, truth.rotation) / kDeg);
      max_trans = std::max(max_trans, (fit.apply(c) - truth.apply(c)).norm() / extent);
      max_drift = std::max(max_drift, pairwise_drift(a, b));
    }
  }
  return {min_acc >= 0.95 && max_rot < 2.0 && max_trans < 0.02 && max_drift < 0.005 && secs < 300,
          fmt("3 scenes x 1200 Gaussians, accuracy %.2f%% (>= 95%%), rotation %.3f deg (< 2), translation %.3f%% of "
              "extent (< 2%%), drift %.3f%% (< 0.5%%), %.1f s",
              100 * min_acc, max_rot, 100 * max_trans, 100 * max_drift, secs)};
}

// --------------------------------------------------------- region growing

Outcome region_growing_coherence() {
  SyntheticSceneParams p;
  p.seed = 11;
  const Vec3 mid = Vec3::Zero();
  const RigidTransform shared = rotation_about(mid, Vec3(0.3, 1.0, 0.2).normalized(), 10 * kDeg, Vec3(0.04, -0.03, 0));
  p.part_motions = {shared, shared};
  const SyntheticScene s = make_two_body_scene(p);
  const EngineConfig config = EngineConfig::demo();
  const DeformInputs in{s.gaussians, s.cameras, s.matches, {}, {}};
  const GaussianPixelMatchSet g2p = resolve_matches(in, 0, config.association);
  const auto mu = positions(s.gaussians);
  RegionGrowParams rg = config.region_grow;
  rg.r_grow = config.resolved_r_grow();

  const SegmentationResult naive = naive_ransac_groups(g2p, mu, s.cameras[0], rg);
  const SegmentationResult grown = region_grow_init(g2p, mu, s.cameras[0], rg);
  auto spans_both = [&](const std::vector<int>& g) {
    bool seen[2] = {false, false};
    for (int id : g) seen[s.part[id]] = true;
    return seen[0] && seen[1];
  };
  const bool naive_merged = naive.groups.size() >= 1 && spans_both(naive.groups.groups[0]) &&
                            connected_components(naive.groups.groups[0], mu, rg.r_grow) > 1;
  bool grown_ok = grown.groups.size() == 2;
  std::string comps;
  for (const auto& g : grown.groups.groups) {
    const int c = connected_components(g, mu, rg.r_grow);
    grown_ok = grown_ok && c == 1 && !spans_both(g);
    comps += (comps.empty() ? "" : ",") + std::to_string(c);
  }
  return {naive_merged && grown_ok,
          fmt("naive: %zu group(s), first spans both bodies: %s; region grow: %zu groups, components per group [%s]",
              naive.groups.size(), naive_merged ? "yes" : "no", grown.groups.size(), comps.c_str())};
}

// ------------------------------------------------------------ spatial index

Outcome spatial_index_oracle() {
  int mismatches = 0;
  long queries = 0;
  for (int set = 0; set < 50; ++set) {
    std::mt19937_64 rng(300 + set);
    const int n = 1 + static_cast<int>(rng() % 2000);
    std::vector<Vec3> pts;
    for (int i = 0; i < n; ++i) {
      // Quantized coordinates create exact ties and duplicates.
      Vec3 p = random_vec(rng, -1, 1);
      if (set % 3 == 0) p = (p * 8).array().round() / 8;
      pts.push_back(p);
    }
    const PointIndex index(pts);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      ++queries;
      // ball query over a few seeds
      const double radius = 0.05 + 0.3 * u(rng);
      std::vector<int> seeds;
      for (int k = 0; k < 1 + static_cast<int>(rng() % 4); ++k) seeds.push_back(static_cast<int>(rng() % n));
      std::vector<int> expect;
      for (int i = 0; i < n; ++i) {
        for (int sd : seeds) {
          if ((pts[i] - pts[sd]).norm() <= radius) {
            expect.push_back(i);
            break;
          }
        }
      }
      if (ball_query(index, seeds, radius) != expect) ++mismatches;

      // knn with ties broken by id
      const Vec3 qp = random_vec(rng, -1.2, 1.2);
      const int k = 1 + static_cast<int>(rng() % 12);
      std::vector<std::pair<double, int>> all;
      for (int i = 0; i < n; ++i) all.push_back({(pts[i] - qp).norm(), i});
      std::sort(all.begin(), all.end());
      const KnnResult got = index.knn(qp, k);
      const std::size_t want = std::min<std::size_t>(k, n);
      bool ok = got.neighbors.size() == want && got.truncated == (n < k);
      for (std::size_t j = 0; ok && j < want; ++j) {
        ok = got.neighbors[j].id == all[j].second && std::abs(got.neighbors[j].distance - all[j].first) < 1e-12;
      }
      if (!ok) ++mismatches;
    }
    // voxelize
    ++queries;
    const double size = 0.1 + 0.4 * u(rng);
    std::map<std::tuple<long, long, long>, std::vector<int>> cells;
    for (int i = 0; i < n; ++i) {
      cells[{static_cast<long>(std::floor(pts[i].x() / size)), static_cast<long>(std::floor(pts[i].y() / size)),
             static_cast<long>(std::floor(pts[i].z() / size))}]
          .push_back(i);
    }
    const auto vox = voxelize(pts, size);
    bool ok = vox.size() == cells.size();
    auto it = cells.begin();
    for (std::size_t v = 0; ok && v < vox.size(); ++v, ++it) {
      auto members = vox[v].members;
      std::sort(members.begin(), members.end());
      Vec3 c = Vec3::Zero();
      for (int id : it->second) c += pts[id];
      c /= static_cast<double>(it->second.size());
      ok = std::tuple<long, long, long>(vox[v].key.i, vox[v].key.j, vox[v].key.k) == it->first &&
           members == it->second && (vox[v].centroid - c).norm() < 1e-12;
    }
    if (!ok) ++mismatches;
  }
  return {mismatches == 0, fmt("50 point sets (<= 2000 points), %ld ball/knn/voxel comparisons, %d mismatches", queries,
                               mismatches)};
}

// ------------------------------------------------------------ interpolation

Outcome interpolation_convergence() {
  const TwoBodyRun& r = two_body(0);
  const auto mu = positions(r.scene.gaussians);
  std::vector<Quat> q;
  for (const auto& g : r.scene.gaussians) q.push_back(g.q);
  const AnchorGraph& target = r.run.result.graph;
  const RigidGroupSet& groups = r.run.result.groups;
  InterpolateConfig cfg = EngineConfig::demo().interpolate;

  const Trajectory traj = interpolate(r.run.initial_graph, target, mu, q, groups, cfg);
  double end_gap = 0.0;
  for (std::size_t a = 0; a < target.anchor_count(); ++a) {
    end_gap = std::max(end_gap, (quat_to_rot(traj.back().rotations[a]) - quat_to_rot(target.rotations[a])).norm());
    end_gap = std::max(end_gap, (traj.back().translations[a] - target.translations[a]).norm());
  }

  const double converged = loss_group(blend(target, mu, q), groups);
  double worst_ratio = 0.0;
  for (const auto& g : traj) worst_ratio = std::max(worst_ratio, loss_group(blend(g, mu, q), groups) / converged);

  InterpolateConfig free = cfg;
  free.lambda0 = 0.0;
  const Trajectory plain = interpolate(r.run.initial_graph, target, mu, q, groups, free);
  bool monotone = true;
  for (std::size_t s = 1; s < plain.size(); ++s) {
    monotone = monotone && attraction_term(plain[s], target) <= attraction_term(plain[s - 1], target) + 1e-12;
  }
  return {end_gap < 1e-3 && monotone && worst_ratio <= 10.0,
          fmt("%zu snapshots, final gap %.1e (< 1e-3), attraction non-increasing at lambda 0: %s, max L_group %.2fx "
              "converged (<= 10x)",
              traj.size(), end_gap, monotone ? "yes" : "no", worst_ratio)};
}

// ------------------------------------------------------------- determinism

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / "gsdeform_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SyntheticSceneParams p;
  p.seed = 21;
  const SyntheticScene s = make_two_body_scene(p);
  SceneBundle bundle;
  bundle.gaussians = s.gaussians;
  bundle.cameras = s.cameras;
  save_scene(dir / "scene", bundle);
  for (const auto& v : s.matches) save_matches(dir / "matches" / (std::to_string(v.view_id) + ".jsonl"), {v});

  std::string how;
  for (const char* out : {"a", "b"}) {
    if (!cli.empty()) {
      how = "via the CLI";
      const std::string cmd = cli + " deform --scene " + (dir / "scene" / "scene.json").string() + " --matches " +
                              (dir / "matches").string() + " --preset demo --seed 5 --out " + (dir / out).string() +
                              " 2>/dev/null";
      const int raw = std::system(cmd.c_str());
      if (!WIFEXITED(raw) || WEXITSTATUS(raw) != 0) return {false, "deform exited with an error"};
    } else {
      how = "via the library";
      const SceneBundle sc = load_scene(dir / "scene" / "scene.json");
      const DeformRun run =
          run_deform({sc.gaussians, sc.cameras, load_matches(dir / "matches"), {}, {}}, EngineConfig::demo());
      fs::create_directories(dir / out);
      save_loss_log(dir / out / "loss.jsonl", run.result.history);
      save_gaussians(dir / out / "deformed.ply", run.deformed);
    }
  }
  const bool logs = slurp(dir / "a" / "loss.jsonl") == slurp(dir / "b" / "loss.jsonl");
  const bool files = slurp(dir / "a" / "deformed.ply") == slurp(dir / "b" / "deformed.ply");
  const bool nonempty = !slurp(dir / "a" / "loss.jsonl").empty();
  fs::remove_all(dir);
  return {logs && files && nonempty, fmt("two seeded deform runs %s: loss logs identical: %s, Gaussian files identical: %s",
                                         how.c_str(), logs ? "yes" : "no", files ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"analytic-null-cases", null_cases},
      {"pnp-ransac-robustness", pnp_robustness},
      {"two-body-recovery", two_body_recovery},
      {"region-growing-coherence", region_growing_coherence},
      {"spatial-index-oracle", spatial_index_oracle},
      {"interpolation-convergence", interpolation_convergence},
      {"determinism", [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
