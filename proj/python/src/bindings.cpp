#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gsdeform/io.hpp"
#include "gsdeform/pipeline.hpp"
#include "gsdeform/pnp.hpp"
#include "gsdeform/service.hpp"
#include "gsdeform/spatial_index.hpp"
#include "gsdeform/synthetic.hpp"

namespace py = pybind11;
using namespace gsdeform;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_array(const std::vector<Vec3>& v) {
  py::array_t<double> out({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = v[i][k];
  }
  return out;
}

template <int D>
std::vector<Eigen::Matrix<double, D, 1>> from_array(const Array& a, const char* name) {
  if (a.ndim() != 2 || a.shape(1) != D) {
    throw Error(ErrorCode::kInvalidInput, std::string(name) + " must have shape (N, " + std::to_string(D) + ")");
  }
  auto r = a.unchecked<2>();
  std::vector<Eigen::Matrix<double, D, 1>> out(a.shape(0));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    for (int k = 0; k < D; ++k) out[i][k] = r(i, k);
  }
  return out;
}

EngineConfig make_config(const std::string& preset, const std::string& json_text) {
  EngineConfig c;
  if (preset == "diva360") c = EngineConfig::diva360();
  else if (preset == "dfa") c = EngineConfig::dfa();
  else if (preset == "demo") c = EngineConfig::demo();
  else if (preset != "default") throw Error(ErrorCode::kInvalidInput, "unknown preset " + preset);
  return json_text.empty() ? c : config_from_json(json_text, c);
}

py::list history_list(const std::vector<LossRecord>& h) {
  py::list out;
  for (const auto& r : h) {
    py::dict d;
    d["iteration"] = r.iteration;
    d["deform"] = r.deform;
    d["group"] = r.group;
    d["arap"] = r.arap;
    d["total"] = r.total;
    d["grad_norm"] = r.grad_norm;
    d["grouped"] = r.grouped;
    out.append(d);
  }
  return out;
}

py::dict snapshot_dict(const StateSnapshot& s) {
  py::dict d;
  d["iteration"] = s.iteration;
  d["positions"] = to_array(s.positions);
  d["labels"] = s.labels;
  d["history"] = history_list(s.history);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Rigidity-aware Gaussian deformation engine";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
    }
  });

  m.def("default_config", [](const std::string& preset) { return config_to_json(make_config(preset, "")); },
        py::arg("preset") = "default", "Resolved configuration as JSON text.");

  m.def(
      "make_demo_scene",
      [](const fs::path& out, int frames, std::uint64_t seed, int per_part) {
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
          for (const auto& v : seq.matches[f]) save_matches(dir / (std::to_string(v.view_id) + ".jsonl"), {v});
        }
        save_labels(out / "truth_labels.txt", seq.scene.part);
        py::list truth;
        for (const auto& frame : seq.frames) truth.append(to_array(positions(frame)));
        return py::make_tuple(seq.scene.part, truth);
      },
      py::arg("out"), py::arg("frames") = 1, py::arg("seed") = 0, py::arg("per_part") = 600,
      "Writes the synthetic two-body scene; returns (part labels, ground-truth positions per frame).");

  m.def(
      "load_positions", [](const fs::path& path) { return to_array(positions(load_gaussians(path))); },
      py::arg("path"));

  m.def(
      "select_view",
      [](const fs::path& matches, int rows, int cols, int width, int height) {
        const ViewSelection s = select_view(load_matches(matches), {rows, cols}, {width, height});
        return py::make_tuple(s.view_id, s.scores);
      },
      py::arg("matches"), py::arg("rows") = 16, py::arg("cols") = 16, py::arg("width"), py::arg("height"));

  m.def(
      "deform",
      [](const fs::path& scene_path, const fs::path& matches, const std::string& preset, const std::string& config,
         std::optional<std::uint64_t> seed, std::optional<int> iterations) {
        EngineConfig c = make_config(preset, config);
        if (seed) c.region_grow.seed = c.region_grow.ransac.seed = c.optimize.seed = c.optimize.group_loss.seed = *seed;
        if (iterations) c.optimize.iterations = *iterations;
        const SceneBundle scene = load_scene(scene_path);
        DeformRun run;
        {
          py::gil_scoped_release release;
          run = run_deform({scene.gaussians, scene.cameras, load_matches(matches), scene.source_masks, scene.target_mask},
                           c);
        }
        py::dict d;
        d["view"] = run.selection.view_id;
        d["associated"] = run.g2p.size();
        d["positions"] = to_array(positions(run.deformed));
        d["labels"] = run.result.groups.labels();
        d["initial_labels"] = run.initial_groups.groups.labels();
        d["history"] = history_list(run.result.history);
        d["status"] = to_string(run.result.status);
        return d;
      },
      py::arg("scene"), py::arg("matches"), py::arg("preset") = "demo", py::arg("config") = "",
      py::arg("seed") = py::none(), py::arg("iterations") = py::none(),
      "Full pipeline. `config` is JSON layered over the preset.");

  m.def(
      "knn",
      [](const Array& points, const Array& query, int k) {
        const PointIndex index(from_array<3>(points, "points"));
        const auto qs = from_array<3>(query, "query");
        py::list out;
        for (const auto& q : qs) {
          py::list row;
          for (const auto& n : index.knn(q, k).neighbors) row.append(py::make_tuple(n.id, n.distance));
          out.append(row);
        }
        return out;
      },
      py::arg("points"), py::arg("query"), py::arg("k"));

  m.def(
      "ball_query",
      [](const Array& points, const std::vector<int>& seeds, double radius) {
        const PointIndex index(from_array<3>(points, "points"));
        return ball_query(index, seeds, radius);
      },
      py::arg("points"), py::arg("seeds"), py::arg("radius"));

  m.def(
      "ransac_pnp",
      [](const Array& points, const Array& pixels, double f, double cx, double cy, double threshold,
         std::uint64_t seed) {
        Camera cam;
        cam.fx = cam.fy = f;
        cam.cx = cx;
        cam.cy = cy;
        RansacParams p;
        p.inlier_threshold = threshold;
        p.seed = seed;
        const PnPResult r = ransac_pnp(from_array<3>(points, "points"), from_array<2>(pixels, "pixels"), cam, p);
        py::array_t<double> rot({3, 3});
        auto mr = rot.mutable_unchecked<2>();
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) mr(i, j) = r.transform.rotation(i, j);
        }
        std::vector<bool> inliers(r.inliers.begin(), r.inliers.end());
        return py::make_tuple(rot, to_array({r.transform.translation}).attr("reshape")(3), inliers);
      },
      py::arg("points"), py::arg("pixels"), py::arg("f"), py::arg("cx"), py::arg("cy"), py::arg("threshold") = 2.0,
      py::arg("seed") = 0, "Camera at the origin looking down +z. Returns (R, t, inlier flags).");

  py::class_<SessionManager, std::shared_ptr<SessionManager>>(m, "SessionManager")
      .def(py::init([](const std::string& preset, const std::string& config) {
             return std::make_shared<SessionManager>(make_config(preset, config));
           }),
           py::arg("preset") = "demo", py::arg("config") = "")
      .def(
          "create",
          [](SessionManager& s, const fs::path& scene, std::optional<fs::path> labels) {
            return s.create_from_file(scene, labels);
          },
          py::arg("scene"), py::arg("labels") = py::none())
      .def("list", &SessionManager::list)
      .def("remove", &SessionManager::remove)
      .def(
          "set_drags",
          [](SessionManager& s, const std::string& id, int camera, const Array& picks, const Array& targets) {
            const auto p = from_array<2>(picks, "picks");
            const auto t = from_array<2>(targets, "targets");
            if (p.size() != t.size()) throw Error(ErrorCode::kInvalidInput, "picks and targets differ in length");
            std::vector<Drag> drags;
            for (std::size_t i = 0; i < p.size(); ++i) drags.push_back({p[i], t[i]});
            const DragResolution r = s.set_drags(id, camera, drags);
            return py::make_tuple(r.gaussian_ids, r.unresolved);
          },
          py::arg("session"), py::arg("camera"), py::arg("picks"), py::arg("targets"),
          "Returns (gaussian id per drag or -1, unresolved drag indices).")
      .def(
          "step",
          [](SessionManager& s, const std::string& id, int n) {
            std::shared_ptr<const StateSnapshot> snap;
            {
              py::gil_scoped_release release;
              snap = s.step(id, n);
            }
            return snapshot_dict(*snap);
          },
          py::arg("session"), py::arg("n"))
      .def(
          "state", [](const SessionManager& s, const std::string& id) { return snapshot_dict(*s.state(id)); },
          py::arg("session"))
      .def("groups", &SessionManager::groups, py::arg("session"))
      .def("set_groups", &SessionManager::set_groups, py::arg("session"), py::arg("labels"));
}
