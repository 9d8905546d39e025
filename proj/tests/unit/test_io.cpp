#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gsdeform/error.hpp"
#include "gsdeform/io.hpp"
#include "gsdeform/synthetic.hpp"
#include "test_util.hpp"

using namespace gsdeform;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("gsdeform_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kInvalidInput;
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Minimal 3DGS-style PLY with a single vertex, written by hand.
void write_ply(const fs::path& p, const std::vector<std::string>& names, const std::vector<float>& values) {
  std::ofstream f(p, std::ios::binary);
  f << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
  for (const auto& n : names) f << "property float " << n << '\n';
  f << "end_header\n";
  f.write(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
}

}  // namespace

TEST_CASE("text Gaussians") {
  const fs::path d = temp_dir("text");
  SUBCASE("single record") {
    write_file(d / "one.txt",
               "gsdeform-gaussians 1\nfields x y z qw qx qy qz sx sy sz opacity\ncount 1\n0 0 0 1 0 0 0 1 1 1 1\n");
    const auto g = load_gaussians(d / "one.txt");
    REQUIRE(g.size() == 1);
    CHECK(g[0].mu == Vec3::Zero());
    CHECK(g[0].opacity == 1.0);
    CHECK(g[0].sh.empty());
  }
  SUBCASE("round trip") {
    const auto scene = make_two_body_scene({});
    save_gaussians_text(d / "set.txt", scene.gaussians);
    const auto back = load_gaussians(d / "set.txt");
    REQUIRE(back.size() == scene.gaussians.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].mu == scene.gaussians[i].mu);
      CHECK(back[i].q.coeffs() == scene.gaussians[i].q.coeffs());
      CHECK(back[i].scale == scene.gaussians[i].scale);
      CHECK(back[i].opacity == scene.gaussians[i].opacity);
      CHECK(back[i].sh == scene.gaussians[i].sh);
    }
  }
  SUBCASE("missing field") {
    write_file(d / "bad.txt", "gsdeform-gaussians 1\nfields x y z qw qx qy qz sx sy sz\ncount 0\n");
    try {
      load_gaussians(d / "bad.txt");
      FAIL("expected schema error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSchema);
      CHECK(std::string(e.what()).find("opacity") != std::string::npos);
    }
  }
  SUBCASE("non-finite value names the record") {
    write_file(d / "nan.txt",
               "gsdeform-gaussians 1\nfields x y z qw qx qy qz sx sy sz opacity\ncount 2\n"
               "0 0 0 1 0 0 0 1 1 1 1\n0 nan 0 1 0 0 0 1 1 1 1\n");
    try {
      load_gaussians(d / "nan.txt");
      FAIL("expected data error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kData);
      CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
  }
  CHECK(code_of([&] { load_gaussians(d / "absent.txt"); }) == ErrorCode::kIo);
}

TEST_CASE("PLY Gaussians") {
  const fs::path d = temp_dir("ply");
  const std::vector<std::string> names{"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "f_rest_0", "opacity",
                                       "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
  SUBCASE("logit and log decoding") {
    write_ply(d / "one.ply", names, {1, 2, 3, 0.1f, 0.2f, 0.3f, 0.4f, 0.0f, 0, std::log(2.0f), -1, 1, 0, 0, 0});
    const auto g = load_gaussians(d / "one.ply");
    REQUIRE(g.size() == 1);
    CHECK(g[0].opacity == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g[0].scale.x() == doctest::Approx(1.0));
    CHECK(g[0].scale.y() == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g[0].scale.z() == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
    CHECK(g[0].sh == std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
  }
  SUBCASE("missing field") {
    std::vector<std::string> partial(names.begin(), names.end() - 1);
    write_ply(d / "bad.ply", partial, std::vector<float>(partial.size(), 0.0f));
    try {
      load_gaussians(d / "bad.ply");
      FAIL("expected schema error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSchema);
      CHECK(std::string(e.what()).find("rot_3") != std::string::npos);
    }
  }
  SUBCASE("round trip within float precision") {
    auto scene = make_two_body_scene({});
    scene.gaussians[0].opacity = 1.0;
    scene.gaussians[1].opacity = 0.0;
    save_gaussians(d / "set.ply", scene.gaussians);
    const auto back = load_gaussians(d / "set.ply");
    REQUIRE(back.size() == scene.gaussians.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK((back[i].mu - scene.gaussians[i].mu).norm() < 1e-6);
      CHECK((back[i].q.coeffs() - scene.gaussians[i].q.coeffs()).norm() < 1e-6);
      CHECK((back[i].scale - scene.gaussians[i].scale).norm() < 1e-6);
      CHECK(std::abs(back[i].opacity - scene.gaussians[i].opacity) < 1e-6);
      CHECK(back[i].sh == scene.gaussians[i].sh);
    }
  }
}

TEST_CASE("cameras and scene bundle") {
  const fs::path d = temp_dir("scene");
  const auto scene = make_two_body_scene({});
  save_cameras(d / "cams.json", scene.cameras);
  const auto cams = load_cameras(d / "cams.json");
  REQUIRE(cams.size() == scene.cameras.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK(cams[i].world_to_camera.matrix() == scene.cameras[i].world_to_camera.matrix());
    CHECK(cams[i].fx == scene.cameras[i].fx);
  }

  SceneBundle b;
  b.gaussians = scene.gaussians;
  b.cameras = scene.cameras;
  Mask m{4, 3, std::vector<std::uint8_t>(12, 0)};
  m.data[5] = 255;
  b.source_masks[0] = m;
  save_scene(d / "bundle", b, "g.txt");
  const SceneBundle back = load_scene(d / "bundle" / "scene.json");
  CHECK(back.gaussians.size() == b.gaussians.size());
  CHECK(back.cameras.size() == 3);
  CHECK(back.source_masks.at(0).data == m.data);
  CHECK(back.extent > 0);

  fs::remove(d / "bundle" / "cameras.json");
  CHECK(code_of([&] { load_scene(d / "bundle" / "scene.json"); }) == ErrorCode::kSchema);

  write_file(d / "dup.json", R"({"cameras":[{"id":0,"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2,
    "world_to_camera":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]},{"id":0,"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2,
    "world_to_camera":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]}]})");
  CHECK(code_of([&] { load_cameras(d / "dup.json"); }) == ErrorCode::kData);
  write_file(d / "nofx.json", R"({"cameras":[{"id":0}]})");
  CHECK(code_of([&] { load_cameras(d / "nofx.json"); }) == ErrorCode::kSchema);
}

TEST_CASE("matches, masks, labels") {
  const fs::path d = temp_dir("misc");
  const auto scene = make_two_body_scene({});
  save_matches(d / "all.jsonl", scene.matches);
  const auto back = load_matches(d / "all.jsonl");
  REQUIRE(back.size() == scene.matches.size());
  for (std::size_t v = 0; v < back.size(); ++v) {
    REQUIRE(back[v].matches.size() == scene.matches[v].matches.size());
    for (std::size_t k = 0; k < back[v].matches.size(); ++k) {
      CHECK(back[v].matches[k].target == scene.matches[v].matches[k].target);
    }
  }

  fs::create_directories(d / "dir");
  write_file(d / "dir" / "3.jsonl", "");
  write_file(d / "dir" / "5.jsonl", R"({"view_id":5,"x_p":1,"y_p":2,"x_t":3,"y_t":4})" "\n");
  const auto views = load_matches(d / "dir");
  REQUIRE(views.size() == 2);
  CHECK(views[0].view_id == 3);
  CHECK(views[0].matches.empty());
  CHECK(views[1].matches[0].confidence == 1.0);
  write_file(d / "bad.jsonl", R"({"view_id":5,"x_p":1})" "\n");
  CHECK(code_of([&] { load_matches(d / "bad.jsonl"); }) == ErrorCode::kSchema);

  Mask m{5, 2, {0, 1, 2, 3, 4, 5, 6, 7, 8, 255}};
  save_mask(d / "m.pgm", m);
  const Mask mb = load_mask(d / "m.pgm");
  CHECK(mb.width == 5);
  CHECK(mb.data == m.data);
  write_file(d / "a.pgm", "P2\n# comment\n2 1\n255\n0 9\n");
  CHECK(load_mask(d / "a.pgm").data == std::vector<std::uint8_t>{0, 9});

  const std::vector<int> labels{0, 0, -1, 1, 1};
  save_labels(d / "labels.txt", labels);
  CHECK(load_labels(d / "labels.txt") == labels);
}

TEST_CASE("checkpoint and loss log round trip") {
  const fs::path d = temp_dir("ckpt");
  std::mt19937_64 rng(1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(gsdeform::testing::random_vec(rng));
  Checkpoint c;
  c.graph = build_anchor_graph(pts, {0.5, 5, 6});
  for (auto& t : c.graph.translations) t = gsdeform::testing::random_vec(rng);
  for (auto& q : c.graph.rotations) q = gsdeform::testing::random_quat(rng);
  c.labels = std::vector<int>(100, 2);
  c.seed = 42;
  c.config_json = config_to_json(EngineConfig::dfa());
  save_checkpoint(d / "c.json", c);
  const Checkpoint b = load_checkpoint(d / "c.json");
  CHECK(b.graph.same_topology(c.graph));
  CHECK(b.graph.translations == c.graph.translations);
  for (std::size_t a = 0; a < c.graph.anchor_count(); ++a) CHECK(b.graph.rotations[a].coeffs() == c.graph.rotations[a].coeffs());
  CHECK(b.labels == c.labels);
  CHECK(b.seed == 42);
  CHECK(config_from_json(b.config_json).anchors.k_anchor == 9);

  std::vector<LossRecord> h{{0, 1.5, 0.25, 0.125, 1.875, 3.0, 10}, {1, 0.1, 0.2, 0.3, 0.6, 1e-7, 12}};
  save_loss_log(d / "loss.jsonl", h);
  const auto hb = load_loss_log(d / "loss.jsonl");
  CHECK(hb == h);
}

TEST_CASE("layered configuration") {
  const EngineConfig defaults;
  CHECK(defaults.optimize.lr_q == 0.05);
  CHECK(defaults.optimize.lr_t == 0.01);
  CHECK(defaults.anchors.k_anchor == 10);
  CHECK(defaults.anchors.voxel_size == 0.06);
  CHECK(defaults.optimize.refinement.r_refinement == 0.01);
  CHECK(defaults.resolved_r_grow() == doctest::Approx(0.02));

  const EngineConfig round = config_from_json(config_to_json(EngineConfig::dfa()));
  CHECK(config_to_json(round) == config_to_json(EngineConfig::dfa()));

  const EngineConfig partial = config_from_json(R"({"optimize":{"lr_q":0.2,"weights":{"group":5}}})");
  CHECK(partial.optimize.lr_q == 0.2);
  CHECK(partial.optimize.lr_t == defaults.optimize.lr_t);
  CHECK(partial.optimize.weights.group == 5);
  CHECK(partial.optimize.weights.deform == 1);

  CHECK(code_of([] { config_from_json(R"({"optimise":{}})"); }) == ErrorCode::kSchema);
  CHECK(code_of([] { config_from_json(R"({"optimize":{"lr_q":"fast"}})"); }) == ErrorCode::kSchema);
  CHECK(code_of([] { config_from_json(R"({"optimize":{"weights":{"rgb":1}}})"); }) == ErrorCode::kData);
}
