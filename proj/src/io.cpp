#include "gsdeform/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "gsdeform/error.hpp"
#include "json.hpp"

namespace gsdeform {

using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return f;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, what + ": " + e.what());
  }
}

json read_json(const fs::path& path) {
  auto f = open_in(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_json(ss.str(), path.string());
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorCode::kSchema, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kSchema, where + ": field '" + key + "' has the wrong type");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_finite(const Gaussian& g, std::size_t index) {
  bool ok = g.mu.allFinite() && g.scale.allFinite() && std::isfinite(g.opacity) && std::isfinite(g.q.w) &&
            std::isfinite(g.q.x) && std::isfinite(g.q.y) && std::isfinite(g.q.z);
  for (float v : g.sh) ok = ok && std::isfinite(v);
  if (!ok) throw Error(ErrorCode::kData, "non-finite value in Gaussian record " + std::to_string(index));
  if (g.q.norm() == 0.0) throw Error(ErrorCode::kData, "zero quaternion in Gaussian record " + std::to_string(index));
}

// ---- text Gaussians ----

const char* const kTextFields[] = {"x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "sz", "opacity"};

GaussianSet load_gaussians_text(std::istream& in, const std::string& name) {
  std::string line, magic;
  int version = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> magic >> version) || magic != "gsdeform-gaussians") {
    throw Error(ErrorCode::kSchema, name + ": not a Gaussian text file");
  }
  std::vector<std::string> fields;
  std::size_t count = 0;
  bool have_fields = false, have_count = false;
  while (!(have_fields && have_count) && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty() || key[0] == '#') continue;
    if (key == "fields") {
      for (std::string f; ls >> f;) fields.push_back(f);
      have_fields = true;
    } else if (key == "count") {
      ls >> count;
      have_count = true;
    } else {
      throw Error(ErrorCode::kSchema, name + ": unexpected header line '" + line + "'");
    }
  }
  if (!have_fields) throw Error(ErrorCode::kSchema, name + ": missing field list");
  if (!have_count) throw Error(ErrorCode::kSchema, name + ": missing count");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = i;
  for (const char* f : kTextFields) {
    if (!col.count(f)) throw Error(ErrorCode::kSchema, name + ": missing field '" + f + "'");
  }
  std::vector<std::size_t> sh_cols;
  for (std::size_t k = 0; col.count("sh_" + std::to_string(k)); ++k) sh_cols.push_back(col["sh_" + std::to_string(k)]);

  GaussianSet out;
  out.reserve(count);
  std::vector<double> row(fields.size());
  for (std::size_t r = 0; r < count; ++r) {
    for (auto& v : row) {
      std::string tok;
      if (!(in >> tok)) throw Error(ErrorCode::kData, name + ": truncated at record " + std::to_string(r));
      try {
        v = std::stod(tok);
      } catch (const std::exception&) {
        // stod rejects "nan"/"inf" spellings on some platforms; treat as non-finite.
        v = std::nan("");
      }
    }
    Gaussian g;
    g.mu = {row[col["x"]], row[col["y"]], row[col["z"]]};
    g.q = {row[col["qw"]], row[col["qx"]], row[col["qy"]], row[col["qz"]]};
    g.scale = {row[col["sx"]], row[col["sy"]], row[col["sz"]]};
    g.opacity = row[col["opacity"]];
    for (std::size_t c : sh_cols) g.sh.push_back(static_cast<float>(row[c]));
    check_finite(g, r);
    out.push_back(std::move(g));
  }
  return out;
}

// ---- PLY ----

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
};

std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw Error(ErrorCode::kSchema, "unsupported PLY property type " + t);
}

double ply_read(const char* p, const std::string& t) {
  auto get = [p](auto v) {
    std::memcpy(&v, p, sizeof v);
    return static_cast<double>(v);
  };
  if (t == "float" || t == "float32") return get(float{});
  if (t == "double" || t == "float64") return get(double{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  return get(std::uint32_t{});
}

int indexed(const std::string& name, const std::string& prefix) {
  if (name.rfind(prefix, 0) != 0) return -1;
  try {
    return std::stoi(name.substr(prefix.size()));
  } catch (const std::exception&) {
    return -1;
  }
}

GaussianSet load_gaussians_ply(std::istream& in, const std::string& name) {
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorCode::kSchema, name + ": not a PLY file");
  std::vector<PlyProperty> props;
  std::size_t count = 0, stride = 0;
  bool in_vertex = false, binary_le = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "format") {
      std::string f;
      ls >> f;
      binary_le = f == "binary_little_endian";
    } else if (key == "element") {
      std::string el;
      ls >> el;
      in_vertex = el == "vertex";
      if (in_vertex) ls >> count;
    } else if (key == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type;
      if (p.type == "list") throw Error(ErrorCode::kSchema, name + ": list properties are not supported");
      ls >> p.name;
      p.offset = stride;
      stride += ply_type_size(p.type);
      props.push_back(p);
    }
  }
  if (!binary_le) throw Error(ErrorCode::kSchema, name + ": only binary_little_endian PLY is supported");
  std::map<std::string, const PlyProperty*> by_name;
  for (const auto& p : props) by_name[p.name] = &p;
  for (const char* f : {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity"}) {
    if (!by_name.count(f)) throw Error(ErrorCode::kSchema, name + ": missing field '" + f + "'");
  }
  std::vector<std::pair<int, const PlyProperty*>> dc, rest;
  for (const auto& p : props) {
    if (int k = indexed(p.name, "f_dc_"); k >= 0) dc.emplace_back(k, &p);
    if (int k = indexed(p.name, "f_rest_"); k >= 0) rest.emplace_back(k, &p);
  }
  std::sort(dc.begin(), dc.end());
  std::sort(rest.begin(), rest.end());

  std::vector<char> buf(stride * count);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error(ErrorCode::kData, name + ": truncated vertex data");
  GaussianSet out(count);
  for (std::size_t r = 0; r < count; ++r) {
    const char* rec = buf.data() + r * stride;
    auto v = [&](const char* f) {
      const PlyProperty* p = by_name[f];
      return ply_read(rec + p->offset, p->type);
    };
    Gaussian& g = out[r];
    g.mu = {v("x"), v("y"), v("z")};
    g.q = {v("rot_0"), v("rot_1"), v("rot_2"), v("rot_3")};
    g.scale = {std::exp(v("scale_0")), std::exp(v("scale_1")), std::exp(v("scale_2"))};
    g.opacity = 1.0 / (1.0 + std::exp(-v("opacity")));
    for (const auto& [k, p] : dc) g.sh.push_back(static_cast<float>(ply_read(rec + p->offset, p->type)));
    for (const auto& [k, p] : rest) g.sh.push_back(static_cast<float>(ply_read(rec + p->offset, p->type)));
    check_finite(g, r);
  }
  return out;
}

int to_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kSchema, what + ": expected an integer, got '" + s + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace

GaussianSet load_gaussians(const fs::path& path) {
  auto f = open_in(path, true);
  std::string first;
  std::getline(f, first);
  f.seekg(0);
  if (first == "ply" || first == "ply\r") return load_gaussians_ply(f, path.string());
  return load_gaussians_text(f, path.string());
}

void save_gaussians_text(const fs::path& path, const GaussianSet& gaussians) {
  std::size_t k = 0;
  for (const auto& g : gaussians) k = std::max(k, g.sh.size());
  auto f = open_out(path);
  f << "gsdeform-gaussians 1\nfields";
  for (const char* c : kTextFields) f << ' ' << c;
  for (std::size_t i = 0; i < k; ++i) f << " sh_" << i;
  f << "\ncount " << gaussians.size() << '\n';
  for (const auto& g : gaussians) {
    f << fmt(g.mu.x()) << ' ' << fmt(g.mu.y()) << ' ' << fmt(g.mu.z()) << ' ' << fmt(g.q.w) << ' ' << fmt(g.q.x)
      << ' ' << fmt(g.q.y) << ' ' << fmt(g.q.z) << ' ' << fmt(g.scale.x()) << ' ' << fmt(g.scale.y()) << ' '
      << fmt(g.scale.z()) << ' ' << fmt(g.opacity);
    for (std::size_t i = 0; i < k; ++i) f << ' ' << fmt(i < g.sh.size() ? g.sh[i] : 0.0f);
    f << '\n';
  }
  if (!f) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

void save_gaussians_ply(const fs::path& path, const GaussianSet& gaussians) {
  std::size_t k = 0;
  for (const auto& g : gaussians) k = std::max(k, g.sh.size());
  const std::size_t n_dc = std::min<std::size_t>(3, k);
  auto f = open_out(path, true);
  f << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << '\n';
  for (const char* c : {"x", "y", "z", "nx", "ny", "nz"}) f << "property float " << c << '\n';
  for (std::size_t i = 0; i < n_dc; ++i) f << "property float f_dc_" << i << '\n';
  for (std::size_t i = n_dc; i < k; ++i) f << "property float f_rest_" << i - n_dc << '\n';
  f << "property float opacity\n";
  for (const char* c : {"scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
    f << "property float " << c << '\n';
  }
  f << "end_header\n";
  std::vector<float> rec;
  for (const auto& g : gaussians) {
    rec.clear();
    for (int i = 0; i < 3; ++i) rec.push_back(static_cast<float>(g.mu[i]));
    rec.insert(rec.end(), {0.0f, 0.0f, 0.0f});
    for (std::size_t i = 0; i < k; ++i) rec.push_back(i < g.sh.size() ? g.sh[i] : 0.0f);
    const double a = std::clamp(g.opacity, 1e-7, 1.0 - 1e-7);
    rec.push_back(static_cast<float>(std::log(a / (1.0 - a))));
    for (int i = 0; i < 3; ++i) rec.push_back(static_cast<float>(std::log(g.scale[i])));
    rec.insert(rec.end(), {static_cast<float>(g.q.w), static_cast<float>(g.q.x), static_cast<float>(g.q.y),
                           static_cast<float>(g.q.z)});
    f.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(float)));
  }
  if (!f) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

void save_gaussians(const fs::path& path, const GaussianSet& gaussians) {
  if (path.extension() == ".ply") {
    save_gaussians_ply(path, gaussians);
  } else {
    save_gaussians_text(path, gaussians);
  }
}

std::vector<Camera> load_cameras(const fs::path& path) {
  const json doc = read_json(path);
  const std::string where = path.string();
  if (!doc.contains("cameras") || !doc["cameras"].is_array()) {
    throw Error(ErrorCode::kSchema, where + ": missing field 'cameras'");
  }
  std::vector<Camera> out;
  std::set<int> ids;
  for (const auto& j : doc["cameras"]) {
    Camera c;
    c.id = field<int>(j, "id", where);
    c.fx = field<double>(j, "fx", where);
    c.fy = field<double>(j, "fy", where);
    c.cx = field<double>(j, "cx", where);
    c.cy = field<double>(j, "cy", where);
    c.width = field<int>(j, "width", where);
    c.height = field<int>(j, "height", where);
    const auto m = field<std::vector<double>>(j, "world_to_camera", where);
    if (m.size() != 16) throw Error(ErrorCode::kSchema, where + ": world_to_camera needs 16 values");
    Mat4 mat;
    for (int r = 0; r < 4; ++r) {
      for (int k = 0; k < 4; ++k) mat(r, k) = m[4 * r + k];
    }
    c.world_to_camera = RigidTransform::from_matrix(mat);
    if (!(c.fx > 0 && c.fy > 0)) throw Error(ErrorCode::kData, where + ": focal lengths must be positive");
    if (!c.world_to_camera.is_proper()) throw Error(ErrorCode::kData, where + ": world_to_camera is not a rigid motion");
    if (!ids.insert(c.id).second) throw Error(ErrorCode::kData, where + ": duplicate camera id " + std::to_string(c.id));
    out.push_back(c);
  }
  return out;
}

void save_cameras(const fs::path& path, const std::vector<Camera>& cameras) {
  json arr = json::array();
  for (const auto& c : cameras) {
    const Mat4 m = c.world_to_camera.matrix();
    std::vector<double> flat;
    for (int r = 0; r < 4; ++r) {
      for (int k = 0; k < 4; ++k) flat.push_back(m(r, k));
    }
    arr.push_back({{"id", c.id}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
                   {"width", c.width}, {"height", c.height}, {"world_to_camera", flat}});
  }
  auto f = open_out(path);
  f << json{{"cameras", arr}}.dump(2) << '\n';
}

SceneBundle load_scene(const fs::path& path) {
  const json doc = read_json(path);
  const std::string where = path.string();
  const fs::path base = path.parent_path();
  SceneBundle s;
  const fs::path gpath = resolve(base, field<std::string>(doc, "gaussians", where));
  const fs::path cpath = resolve(base, field<std::string>(doc, "cameras", where));
  for (const auto& p : {gpath, cpath}) {
    if (!fs::exists(p)) throw Error(ErrorCode::kSchema, where + ": referenced file " + p.string() + " does not exist");
  }
  s.gaussians = load_gaussians(gpath);
  s.cameras = load_cameras(cpath);
  if (doc.contains("masks")) {
    for (const auto& [view, p] : doc["masks"].items()) {
      s.source_masks[to_int(view, where)] = load_mask(resolve(base, p.get<std::string>()));
    }
  }
  if (doc.contains("target_mask")) s.target_mask = load_mask(resolve(base, doc["target_mask"].get<std::string>()));
  if (doc.contains("units")) s.units = doc["units"].get<std::string>();
  s.extent = scene_extent(positions(s.gaussians));
  return s;
}

void save_scene(const fs::path& dir, const SceneBundle& scene, const std::string& gaussian_file) {
  fs::create_directories(dir);
  save_gaussians(dir / gaussian_file, scene.gaussians);
  save_cameras(dir / "cameras.json", scene.cameras);
  json doc{{"gaussians", gaussian_file}, {"cameras", "cameras.json"}, {"units", scene.units},
           {"extent", scene_extent(positions(scene.gaussians))}};
  if (!scene.source_masks.empty()) {
    json masks = json::object();
    for (const auto& [view, m] : scene.source_masks) {
      const std::string name = "mask_" + std::to_string(view) + ".pgm";
      save_mask(dir / name, m);
      masks[std::to_string(view)] = name;
    }
    doc["masks"] = masks;
  }
  if (scene.target_mask) {
    save_mask(dir / "target_mask.pgm", *scene.target_mask);
    doc["target_mask"] = "target_mask.pgm";
  }
  auto f = open_out(dir / "scene.json");
  f << doc.dump(2) << '\n';
}

std::vector<PixelMatchSet> load_matches(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::map<int, PixelMatchSet> by_view;
  for (const auto& file : files) {
    auto f = open_in(file);
    std::string line;
    for (int ln = 1; std::getline(f, line); ++ln) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = file.string() + ":" + std::to_string(ln);
      const json j = parse_json(line, where);
      const int view = field<int>(j, "view_id", where);
      PixelMatch m;
      m.source = {field<double>(j, "x_p", where), field<double>(j, "y_p", where)};
      m.target = {field<double>(j, "x_t", where), field<double>(j, "y_t", where)};
      m.confidence = j.contains("confidence") ? field<double>(j, "confidence", where) : 1.0;
      if (!m.source.allFinite() || !m.target.allFinite() || !std::isfinite(m.confidence)) {
        throw Error(ErrorCode::kData, where + ": non-finite match");
      }
      auto& set = by_view[view];
      set.view_id = view;
      set.matches.push_back(m);
    }
    // An empty file still names a view when its stem is an integer.
    if (fs::file_size(file) == 0) {
      try {
        const int view = std::stoi(file.stem().string());
        by_view[view].view_id = view;
      } catch (const std::exception&) {
      }
    }
  }
  std::vector<PixelMatchSet> out;
  for (auto& [v, set] : by_view) out.push_back(std::move(set));
  return out;
}

void save_matches(const fs::path& path, const std::vector<PixelMatchSet>& views) {
  auto f = open_out(path);
  for (const auto& set : views) {
    for (const auto& m : set.matches) {
      f << json{{"view_id", set.view_id}, {"x_p", m.source.x()}, {"y_p", m.source.y()}, {"x_t", m.target.x()},
                {"y_t", m.target.y()}, {"confidence", m.confidence}}
               .dump()
        << '\n';
    }
  }
}

Mask load_mask(const fs::path& path) {
  auto f = open_in(path, true);
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P2") throw Error(ErrorCode::kSchema, path.string() + ": not a PGM file");
  auto next_int = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return to_int(tok, path.string());
    }
    throw Error(ErrorCode::kData, path.string() + ": truncated PGM header");
  };
  Mask m;
  m.width = next_int();
  m.height = next_int();
  const int maxval = next_int();
  if (m.width <= 0 || m.height <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorCode::kSchema, path.string() + ": unsupported PGM dimensions or depth");
  }
  m.data.resize(static_cast<std::size_t>(m.width) * m.height);
  if (magic == "P5") {
    f.get();  // single whitespace after maxval
    f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size()));
    if (static_cast<std::size_t>(f.gcount()) != m.data.size()) throw Error(ErrorCode::kData, path.string() + ": truncated PGM");
  } else {
    for (auto& v : m.data) v = static_cast<std::uint8_t>(next_int());
  }
  return m;
}

void save_mask(const fs::path& path, const Mask& mask) {
  auto f = open_out(path, true);
  f << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(mask.data.data()), static_cast<std::streamsize>(mask.data.size()));
}

void save_labels(const fs::path& path, const std::vector<int>& labels) {
  auto f = open_out(path);
  f << "# id label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) f << i << ' ' << labels[i] << '\n';
}

std::vector<int> load_labels(const fs::path& path) {
  auto f = open_in(path);
  std::vector<std::pair<long, int>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long id = 0;
    int label = 0;
    if (!(ls >> id >> label) || id < 0) throw Error(ErrorCode::kSchema, path.string() + ": bad label line '" + line + "'");
    rows.emplace_back(id, label);
  }
  std::vector<int> out(rows.size(), -1);
  for (const auto& [id, label] : rows) {
    if (static_cast<std::size_t>(id) >= out.size()) throw Error(ErrorCode::kData, path.string() + ": ids are not dense");
    out[id] = label;
  }
  return out;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  const AnchorGraph& g = c.graph;
  json anchors = json::array();
  for (std::size_t a = 0; a < g.anchor_count(); ++a) {
    const Quat& q = g.rotations[a];
    anchors.push_back({{"position", {g.positions[a].x(), g.positions[a].y(), g.positions[a].z()}},
                       {"rotation", {q.w, q.x, q.y, q.z}},
                       {"translation", {g.translations[a].x(), g.translations[a].y(), g.translations[a].z()}},
                       {"neighbors", g.neighbors[a]}});
  }
  json doc{{"format", "gsdeform-checkpoint"}, {"version", 1}, {"seed", c.seed}, {"gaussians", c.gaussians},
           {"anchors", anchors}, {"blend", {{"k", g.blend.k}, {"ids", g.blend.ids}, {"weights", g.blend.weights}}},
           {"labels", c.labels}, {"config", parse_json(c.config_json, "checkpoint config")}};
  auto f = open_out(path);
  // Full precision so a reload is bit-exact.
  f << doc.dump() << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
  const json doc = read_json(path);
  const std::string where = path.string();
  if (field<std::string>(doc, "format", where) != "gsdeform-checkpoint") {
    throw Error(ErrorCode::kSchema, where + ": not a checkpoint");
  }
  Checkpoint c;
  c.seed = field<std::uint64_t>(doc, "seed", where);
  c.gaussians = doc.value("gaussians", std::string());
  c.labels = field<std::vector<int>>(doc, "labels", where);
  c.config_json = doc.contains("config") ? doc["config"].dump() : "{}";
  for (const auto& a : field<json>(doc, "anchors", where)) {
    const auto p = field<std::vector<double>>(a, "position", where);
    const auto q = field<std::vector<double>>(a, "rotation", where);
    const auto t = field<std::vector<double>>(a, "translation", where);
    if (p.size() != 3 || q.size() != 4 || t.size() != 3) throw Error(ErrorCode::kSchema, where + ": bad anchor record");
    c.graph.positions.emplace_back(p[0], p[1], p[2]);
    c.graph.rotations.push_back({q[0], q[1], q[2], q[3]});
    c.graph.translations.emplace_back(t[0], t[1], t[2]);
    c.graph.neighbors.push_back(field<std::vector<int>>(a, "neighbors", where));
  }
  const json& b = field<json>(doc, "blend", where);
  c.graph.blend.k = field<int>(b, "k", where);
  c.graph.blend.ids = field<std::vector<int>>(b, "ids", where);
  c.graph.blend.weights = field<std::vector<double>>(b, "weights", where);
  if (c.graph.blend.ids.size() != c.graph.blend.weights.size()) {
    throw Error(ErrorCode::kSchema, where + ": blend ids and weights differ in size");
  }
  for (int id : c.graph.blend.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.graph.anchor_count()) {
      throw Error(ErrorCode::kData, where + ": blend references unknown anchor");
    }
  }
  return c;
}

std::string loss_record_json(const LossRecord& r) {
  return json{{"iter", r.iteration}, {"deform", r.deform}, {"group", r.group}, {"arap", r.arap},
              {"total", r.total}, {"grad_norm", r.grad_norm}, {"grouped", r.grouped}}
      .dump();
}

void save_loss_log(const fs::path& path, const std::vector<LossRecord>& history) {
  auto f = open_out(path);
  for (const auto& r : history) f << loss_record_json(r) << '\n';
}

std::vector<LossRecord> load_loss_log(const fs::path& path) {
  auto f = open_in(path);
  std::vector<LossRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json j = parse_json(line, path.string());
    LossRecord r;
    r.iteration = field<int>(j, "iter", path.string());
    r.deform = field<double>(j, "deform", path.string());
    r.group = field<double>(j, "group", path.string());
    r.arap = field<double>(j, "arap", path.string());
    r.total = field<double>(j, "total", path.string());
    r.grad_norm = field<double>(j, "grad_norm", path.string());
    r.grouped = j.value("grouped", 0);
    out.push_back(r);
  }
  return out;
}

// ---- configuration ----

namespace {

// Reads `key` into `v` when present; records it so unknown keys can be reported.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::kSchema, where_ + ": expected an object");
  }
  template <class T>
  Reader& get(const char* key, T& v) {
    seen_.insert(key);
    if (j_.contains(key)) v = field<T>(j_, key, where_);
    return *this;
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorCode::kSchema, where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json ransac_json(const RansacParams& r) {
  return {{"inlier_threshold", r.inlier_threshold}, {"max_iterations", r.max_iterations}, {"seed", r.seed},
          {"confidence", r.confidence}, {"min_consensus", r.min_consensus}};
}

json weights_json(const LossWeights& w) {
  return {{"deform", w.deform}, {"group", w.group}, {"arap", w.arap}, {"rgb", w.rgb}};
}

void read_weights(const json& j, LossWeights& w, const std::string& where) {
  Reader(j, where).get("deform", w.deform).get("group", w.group).get("arap", w.arap).get("rgb", w.rgb);
  if (w.deform < 0 || w.group < 0 || w.arap < 0) throw Error(ErrorCode::kData, where + ": loss weights must be >= 0");
  if (w.rgb != 0) throw Error(ErrorCode::kData, where + ": rgb weight must be 0");
}

}  // namespace

std::string config_to_json(const EngineConfig& c) {
  const auto& o = c.optimize;
  const auto& i = c.interpolate;
  json doc{
      {"grid", {{"rows", c.grid.rows}, {"cols", c.grid.cols}}},
      {"association",
       {{"visibility_threshold", c.association.visibility_threshold},
        {"pixel_radius", c.association.pixel_radius},
        {"cell_size", c.association.cell_size}}},
      {"region_grow",
       {{"r_grow", c.region_grow.r_grow},
        {"min_group_size", c.region_grow.min_group_size},
        {"seed", c.region_grow.seed},
        {"ransac", ransac_json(c.region_grow.ransac)}}},
      {"anchors", {{"voxel_size", c.anchors.voxel_size}, {"k_anchor", c.anchors.k_anchor}, {"k_arap", c.anchors.k_arap}}},
      {"optimize",
       {{"lr_q", o.lr_q},
        {"lr_t", o.lr_t},
        {"lr_final_ratio", o.lr_final_ratio},
        {"iterations", o.iterations},
        {"refine_period", o.refine_period},
        {"refine", o.refine},
        {"weights", weights_json(o.weights)},
        {"refinement",
         {{"tau_low", o.refinement.tau_low},
          {"tau_high", o.refinement.tau_high},
          {"r_refinement", o.refinement.r_refinement}}},
        {"group_loss", {{"pair_budget", o.group_loss.pair_budget}, {"seed", o.group_loss.seed}}},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"adam_epsilon", o.adam_epsilon},
        {"patience", o.patience},
        {"min_improvement", o.min_improvement},
        {"grad_tolerance", o.grad_tolerance},
        {"seed", o.seed}}},
      {"interpolate",
       {{"steps", i.steps},
        {"lambda0", i.lambda0},
        {"decay", i.decay},
        {"inner_iterations", i.inner_iterations},
        {"lr_q", i.lr_q},
        {"lr_t", i.lr_t},
        {"regularizer", weights_json(i.regularizer)}}},
  };
  return doc.dump(2);
}

EngineConfig config_from_json(const std::string& text, const EngineConfig& base) {
  const json doc = parse_json(text, "config");
  EngineConfig c = base;
  Reader top(doc, "config");
  if (const json* j = top.sub("grid")) Reader(*j, "config.grid").get("rows", c.grid.rows).get("cols", c.grid.cols);
  if (const json* j = top.sub("association")) {
    Reader(*j, "config.association")
        .get("visibility_threshold", c.association.visibility_threshold)
        .get("pixel_radius", c.association.pixel_radius)
        .get("cell_size", c.association.cell_size);
  }
  if (const json* j = top.sub("region_grow")) {
    Reader r(*j, "config.region_grow");
    r.get("r_grow", c.region_grow.r_grow).get("min_group_size", c.region_grow.min_group_size).get("seed", c.region_grow.seed);
    if (const json* k = r.sub("ransac")) {
      auto& p = c.region_grow.ransac;
      Reader(*k, "config.region_grow.ransac")
          .get("inlier_threshold", p.inlier_threshold)
          .get("max_iterations", p.max_iterations)
          .get("seed", p.seed)
          .get("confidence", p.confidence)
          .get("min_consensus", p.min_consensus);
    }
  }
  if (const json* j = top.sub("anchors")) {
    Reader(*j, "config.anchors")
        .get("voxel_size", c.anchors.voxel_size)
        .get("k_anchor", c.anchors.k_anchor)
        .get("k_arap", c.anchors.k_arap);
  }
  if (const json* j = top.sub("optimize")) {
    auto& o = c.optimize;
    Reader r(*j, "config.optimize");
    r.get("lr_q", o.lr_q)
        .get("lr_t", o.lr_t)
        .get("lr_final_ratio", o.lr_final_ratio)
        .get("iterations", o.iterations)
        .get("refine_period", o.refine_period)
        .get("refine", o.refine)
        .get("beta1", o.beta1)
        .get("beta2", o.beta2)
        .get("adam_epsilon", o.adam_epsilon)
        .get("patience", o.patience)
        .get("min_improvement", o.min_improvement)
        .get("grad_tolerance", o.grad_tolerance)
        .get("seed", o.seed);
    if (const json* k = r.sub("weights")) read_weights(*k, o.weights, "config.optimize.weights");
    if (const json* k = r.sub("refinement")) {
      Reader(*k, "config.optimize.refinement")
          .get("tau_low", o.refinement.tau_low)
          .get("tau_high", o.refinement.tau_high)
          .get("r_refinement", o.refinement.r_refinement);
    }
    if (const json* k = r.sub("group_loss")) {
      Reader(*k, "config.optimize.group_loss").get("pair_budget", o.group_loss.pair_budget).get("seed", o.group_loss.seed);
    }
  }
  if (const json* j = top.sub("interpolate")) {
    auto& i = c.interpolate;
    Reader r(*j, "config.interpolate");
    r.get("steps", i.steps)
        .get("lambda0", i.lambda0)
        .get("decay", i.decay)
        .get("inner_iterations", i.inner_iterations)
        .get("lr_q", i.lr_q)
        .get("lr_t", i.lr_t);
    if (const json* k = r.sub("regularizer")) read_weights(*k, i.regularizer, "config.interpolate.regularizer");
  }
  return c;
}

EngineConfig load_config(const fs::path& path, const EngineConfig& base) {
  auto f = open_in(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str(), base);
}

std::string error_record_json(ErrorCode code, const std::string& message) {
  return json{{"error", std::string(to_string(code))}, {"message", message}}.dump();
}

}  // namespace gsdeform
