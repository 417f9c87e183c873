#include "fewview/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>

#include "fewview/error.hpp"
#include "fewview/regularization.hpp"
#include "fewview/renderer.hpp"
#include "fewview/sh.hpp"

namespace fewview {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- images

Image read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorCode::IoError, "cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::IoError, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  for (std::size_t i = 0; i < buf.size(); ++i) out.values()[i] = buf[i] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "PNG export needs 1 or 3 channels");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(image.values().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
  }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, "cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_pfm(const fs::path& path, const Image& image) {
  if (image.channels() != 1) throw Error(ErrorCode::ShapeMismatch, "PFM export is single-channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "Pf\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      const float v = static_cast<float>(image.at(x, y));
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

Image read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0) {
    throw Error(ErrorCode::ParseError, "unsupported PFM header in " + path.string());
  }
  Image out(w, h, 1);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float v;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw Error(ErrorCode::ParseError, "truncated PFM " + path.string());
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

// ------------------------------------------------------------------- PLY

void write_ply(const fs::path& path, const GaussianScene& scene) {
  const int coeffs = sh_coeff_count(scene.sh_degree);
  const int rest = 3 * (coeffs - 1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int k = 0; k < rest; ++k) names.push_back("f_rest_" + std::to_string(k));
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
    names.emplace_back(n);
  }
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << '\n';
  for (const auto& n : names) out << "property float " << n << '\n';
  out << "end_header\n";
  std::vector<float> row(names.size());
  for (const Gaussian3D& g : scene.gaussians) {
    if (static_cast<int>(g.sh.size()) != 3 * coeffs) {
      throw Error(ErrorCode::DimensionMismatch, "Gaussian SH size differs from the scene degree");
    }
    std::size_t k = 0;
    for (int c = 0; c < 3; ++c) row[k++] = static_cast<float>(g.mean[c]);
    for (int c = 0; c < 3; ++c) row[k++] = 0.0f;
    for (int c = 0; c < 3; ++c) row[k++] = static_cast<float>(g.sh[c]);
    // f_rest is channel-major: all red coefficients, then green, then blue.
    for (int c = 0; c < 3; ++c) {
      for (int m = 1; m < coeffs; ++m) row[k++] = static_cast<float>(g.sh[m * 3 + c]);
    }
    row[k++] = static_cast<float>(g.opacity_logit);
    for (int c = 0; c < 3; ++c) row[k++] = static_cast<float>(g.log_scale[c]);
    for (int c = 0; c < 4; ++c) row[k++] = static_cast<float>(g.rotation[c]);
    out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

GaussianScene read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorCode::ParseError, path.string() + " is not a PLY file");
  std::size_t count = 0;
  bool in_vertex = false, binary_le = false;
  struct Prop {
    std::string name;
    int bytes;
    bool is_double;
  };
  std::vector<Prop> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      ss >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ss >> count;
      else throw Error(ErrorCode::ParseError, "unsupported PLY element " + name);
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      if (type == "float" || type == "float32") props.push_back({name, 4, false});
      else if (type == "double" || type == "float64") props.push_back({name, 8, true});
      else throw Error(ErrorCode::ParseError, "unsupported PLY property type " + type);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!binary_le) throw Error(ErrorCode::ParseError, "PLY must be binary_little_endian");
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < props.size(); ++k) index[props[k].name] = k;
  auto require = [&](const std::string& n) {
    auto it = index.find(n);
    if (it == index.end()) throw Error(ErrorCode::ParseError, "PLY lacks property " + n);
    return it->second;
  };
  int rest = 0;
  while (index.count("f_rest_" + std::to_string(rest))) ++rest;
  const int coeffs = rest / 3 + 1;
  int degree = 0;
  while (sh_coeff_count(degree) < coeffs && degree < kMaxShDegree) ++degree;
  if (rest % 3 != 0 || sh_coeff_count(degree) != coeffs) {
    throw Error(ErrorCode::ParseError, "PLY f_rest count does not match an SH degree");
  }
  std::size_t stride = 0;
  std::vector<std::size_t> offset(props.size());
  for (std::size_t k = 0; k < props.size(); ++k) {
    offset[k] = stride;
    stride += props[k].bytes;
  }
  const std::size_t ix = require("x"), iy = require("y"), iz = require("z"), io = require("opacity");
  std::size_t idc[3], isc[3], irot[4];
  for (int c = 0; c < 3; ++c) {
    idc[c] = require("f_dc_" + std::to_string(c));
    isc[c] = require("scale_" + std::to_string(c));
  }
  for (int c = 0; c < 4; ++c) irot[c] = require("rot_" + std::to_string(c));
  std::vector<std::size_t> irest(rest);
  for (int k = 0; k < rest; ++k) irest[k] = require("f_rest_" + std::to_string(k));

  GaussianScene scene;
  scene.sh_degree = degree;
  scene.active_sh_degree = degree;
  std::vector<char> row(stride);
  auto get = [&](std::size_t k) {
    if (props[k].is_double) {
      double v;
      std::memcpy(&v, row.data() + offset[k], 8);
      return v;
    }
    float v;
    std::memcpy(&v, row.data() + offset[k], 4);
    return static_cast<double>(v);
  };
  for (std::size_t n = 0; n < count; ++n) {
    if (!in.read(row.data(), static_cast<std::streamsize>(stride))) {
      throw Error(ErrorCode::ParseError, "truncated PLY " + path.string());
    }
    Gaussian3D g;
    g.mean = Vec3(get(ix), get(iy), get(iz));
    g.opacity_logit = get(io);
    for (int c = 0; c < 3; ++c) g.log_scale[c] = get(isc[c]);
    for (int c = 0; c < 4; ++c) g.rotation[c] = get(irot[c]);
    g.sh.assign(3 * coeffs, 0.0);
    for (int c = 0; c < 3; ++c) {
      g.sh[c] = get(idc[c]);
      for (int m = 1; m < coeffs; ++m) g.sh[m * 3 + c] = get(irest[c * (coeffs - 1) + m - 1]);
    }
    scene.gaussians.push_back(std::move(g));
  }
  scene.reset_stats();
  if (!scene.consistent()) throw Error(ErrorCode::ParseError, "PLY holds non-finite values");
  return scene;
}

// --------------------------------------------------------------- dataset

std::vector<int> Dataset::train_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].train) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!views[i].train) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<FrameInfo> Dataset::frame_info() const {
  std::vector<FrameInfo> out;
  for (const DatasetView& v : views) {
    out.push_back({v.camera.intrinsics.width, v.camera.intrinsics.height, v.train});
  }
  return out;
}

double compute_scene_extent(const std::vector<DatasetView>& views) {
  if (views.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const DatasetView& v : views) mean += v.camera.pose.camera_center();
  mean /= static_cast<double>(views.size());
  double radius = 0.0;
  for (const DatasetView& v : views) {
    radius = std::max(radius, (v.camera.pose.camera_center() - mean).norm());
  }
  // A single camera has no spread; fall back to unit radius.
  if (radius < 1e-9) radius = 1.0;
  return radius * 1.1;
}

namespace {

double number(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw Error(ErrorCode::ParseError, where + ": missing numeric '" + key + "'");
  }
  return obj[key].get<double>();
}

// w/h default to the image size, as Blender-style files often omit them.
Intrinsics parse_intrinsics(const json& frame, const json& root, const std::string& where,
                            int image_width, int image_height) {
  auto pick = [&](const char* key) -> const json* {
    if (frame.contains(key)) return &frame[key];
    if (root.contains(key)) return &root[key];
    return nullptr;
  };
  Intrinsics k;
  const json* w = pick("w");
  const json* h = pick("h");
  if ((w && !w->is_number_integer()) || (h && !h->is_number_integer())) {
    throw Error(ErrorCode::DegenerateIntrinsics, where + ": w/h must be integers");
  }
  k.width = w ? w->get<int>() : image_width;
  k.height = h ? h->get<int>() : image_height;
  const json* fx = pick("fl_x");
  const json* fy = pick("fl_y");
  const json* angle = pick("camera_angle_x");
  if (fx && fx->is_number()) {
    k.fx = fx->get<double>();
    k.fy = fy && fy->is_number() ? fy->get<double>() : k.fx;
  } else if (angle && angle->is_number()) {
    k.fx = k.fy = 0.5 * k.width / std::tan(0.5 * angle->get<double>());
  } else {
    throw Error(ErrorCode::DegenerateIntrinsics, where + ": no focal length");
  }
  const json* cx = pick("cx");
  const json* cy = pick("cy");
  k.cx = cx && cx->is_number() ? cx->get<double>() : 0.5 * (k.width - 1);
  k.cy = cy && cy->is_number() ? cy->get<double>() : 0.5 * (k.height - 1);
  if (!k.valid() || !std::isfinite(k.fx) || !std::isfinite(k.fy)) {
    throw Error(ErrorCode::DegenerateIntrinsics, where + ": degenerate intrinsics");
  }
  return k;
}

fs::path resolve_image(const fs::path& root, const std::string& file) {
  fs::path p = root / file;
  if (fs::exists(p)) return p;
  if (!p.has_extension() || p.extension() != ".png") {
    fs::path with_ext = p;
    with_ext += ".png";
    if (fs::exists(with_ext)) return with_ext;
  }
  throw Error(ErrorCode::MissingImage, "image not found: " + p.string());
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const fs::path tf = dir / "transforms.json";
  std::ifstream in(tf);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + tf.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, tf.string() + ": " + e.what());
  }
  if (!root.is_object() || !root.contains("frames") || !root["frames"].is_array()) {
    throw Error(ErrorCode::ParseError, tf.string() + ": missing 'frames' array");
  }
  const bool opengl = root.value("camera_convention", std::string("opencv")) == "opengl";
  Dataset ds;
  ds.root = dir;
  for (std::size_t f = 0; f < root["frames"].size(); ++f) {
    const json& frame = root["frames"][f];
    const std::string where = tf.string() + " frame " + std::to_string(f);
    if (!frame.contains("file_path") || !frame["file_path"].is_string()) {
      throw Error(ErrorCode::ParseError, where + ": missing file_path");
    }
    if (!frame.contains("transform_matrix") || !frame["transform_matrix"].is_array() ||
        frame["transform_matrix"].size() != 4) {
      throw Error(ErrorCode::ParseError, where + ": transform_matrix must be 4x4");
    }
    Mat4 c2w;
    for (int r = 0; r < 4; ++r) {
      const json& row = frame["transform_matrix"][r];
      if (!row.is_array() || row.size() != 4) {
        throw Error(ErrorCode::ParseError, where + ": transform_matrix must be 4x4");
      }
      for (int c = 0; c < 4; ++c) {
        if (!row[c].is_number()) throw Error(ErrorCode::ParseError, where + ": non-numeric matrix");
        c2w(r, c) = row[c].get<double>();
      }
    }
    if (opengl) c2w.block<3, 1>(0, 1) *= -1.0, c2w.block<3, 1>(0, 2) *= -1.0;
    DatasetView v;
    v.name = frame["file_path"].get<std::string>();
    v.image = read_png(resolve_image(dir, v.name));
    v.camera.intrinsics = parse_intrinsics(frame, root, where, v.image.width(), v.image.height());
    v.camera.pose = Pose::from_camera_to_world(c2w);
    if (!v.camera.pose.valid(1e-4)) throw Error(ErrorCode::ParseError, where + ": rotation is not orthonormal");
    v.camera.near = frame.contains("near") ? number(frame, "near", where) : root.value("near", 0.01);
    v.camera.far = frame.contains("far") ? number(frame, "far", where) : root.value("far", 100.0);
    const std::string split = frame.value("split", std::string("train"));
    if (split != "train" && split != "test") throw Error(ErrorCode::ParseError, where + ": split must be train or test");
    v.train = split == "train";
    if (v.image.width() != v.camera.intrinsics.width || v.image.height() != v.camera.intrinsics.height) {
      throw Error(ErrorCode::DimensionMismatch, where + ": image size differs from w/h");
    }
    if (frame.contains("features")) {
      v.features_path = frame["features"].get<std::string>();
      v.features = ingest_features(dir / v.features_path, v.image.width(), v.image.height());
    }
    ds.views.push_back(std::move(v));
  }
  if (ds.train_indices().empty()) throw Error(ErrorCode::ParseError, tf.string() + ": no training views");
  ds.scene_extent = compute_scene_extent(ds.views);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json frames = json::array();
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    const DatasetView& v = ds.views[i];
    std::string name = v.name.empty() ? "images/" + std::to_string(i) + ".png" : v.name;
    if (fs::path(name).extension() != ".png") name += ".png";
    fs::create_directories((dir / name).parent_path());
    write_png(dir / name, v.image);
    const Mat4 c2w = v.camera.pose.camera_to_world();
    json m = json::array();
    for (int r = 0; r < 4; ++r) m.push_back({c2w(r, 0), c2w(r, 1), c2w(r, 2), c2w(r, 3)});
    const Intrinsics& k = v.camera.intrinsics;
    json frame = {{"file_path", name},
                  {"transform_matrix", m},
                  {"split", v.train ? "train" : "test"},
                  {"fl_x", k.fx},
                  {"fl_y", k.fy},
                  {"cx", k.cx},
                  {"cy", k.cy},
                  {"w", k.width},
                  {"h", k.height},
                  {"near", v.camera.near},
                  {"far", v.camera.far}};
    if (v.features) {
      const std::string fpath = v.features_path.empty() ? "features/" + std::to_string(i) + ".fvgf" : v.features_path;
      fs::create_directories((dir / fpath).parent_path());
      write_features(dir / fpath, *v.features);
      frame["features"] = fpath;
    }
    frames.push_back(std::move(frame));
  }
  std::ofstream out(dir / "transforms.json");
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "transforms.json").string());
  out << json{{"camera_convention", "opencv"}, {"frames", frames}}.dump(2) << '\n';
}

// ------------------------------------------------------------- toy scene

namespace {

CameraView arc_camera(const ToyParams& p, double yaw_deg) {
  const double yaw = yaw_deg * M_PI / 180.0, el = p.elevation_degrees * M_PI / 180.0;
  // y points down, so a camera above the scene has negative y.
  const Vec3 center(p.radius * std::cos(el) * std::sin(yaw), -p.radius * std::sin(el),
                    -p.radius * std::cos(el) * std::cos(yaw));
  const Vec3 forward = (-center).normalized();
  const Vec3 right = Vec3::UnitY().cross(forward).normalized();
  const Vec3 down = forward.cross(right);
  Mat4 c2w = Mat4::Identity();
  c2w.block<3, 1>(0, 0) = right;
  c2w.block<3, 1>(0, 1) = down;
  c2w.block<3, 1>(0, 2) = forward;
  c2w.block<3, 1>(0, 3) = center;
  CameraView v;
  v.intrinsics = {p.focal, p.focal, 0.5 * (p.width - 1), 0.5 * (p.height - 1), p.width, p.height};
  v.pose = Pose::from_camera_to_world(c2w);
  v.near = p.radius - 2.0;
  v.far = p.radius + 2.0;
  return v;
}

std::vector<double> spread(int n, double lo, double hi) {
  std::vector<double> out;
  if (n == 1) return {0.5 * (lo + hi)};
  for (int k = 0; k < n; ++k) out.push_back(lo + (hi - lo) * k / (n - 1));
  return out;
}

}  // namespace

ToyScene generate_toy_scene(std::uint64_t seed, const ToyParams& p) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  ToyScene toy;
  toy.truth.sh_degree = 0;
  toy.truth.active_sh_degree = 0;
  for (std::size_t n = 0; n < p.gaussians; ++n) {
    Gaussian3D g;
    Vec3 m;
    do {
      m = Vec3(u(rng), u(rng), u(rng));
    } while (m.squaredNorm() > 1.0);
    g.mean = 0.8 * m;
    g.rotation = Vec4(u(rng), u(rng), u(rng), u(rng)).normalized();
    for (int c = 0; c < 3; ++c) g.log_scale[c] = std::log(0.08 + 0.14 * u01(rng));
    g.opacity_logit = logit(0.85 + 0.14 * u01(rng));
    for (int c = 0; c < 3; ++c) g.sh[c] = (0.1 + 0.8 * u01(rng) - 0.5) / kShC0;
    toy.truth.gaussians.push_back(std::move(g));
  }
  toy.truth.reset_stats();

  std::vector<double> angles = spread(p.train_views, -p.arc_degrees, p.arc_degrees);
  const std::vector<double> test = spread(p.test_views, -0.5 * p.arc_degrees, 0.5 * p.arc_degrees);
  std::vector<RenderBuffers> renders;
  for (int k = 0; k < p.train_views + p.test_views; ++k) {
    const bool train = k < p.train_views;
    DatasetView v;
    v.train = train;
    v.name = (train ? "train/" : "test/") + std::to_string(train ? k : k - p.train_views) + ".png";
    v.camera = arc_camera(p, train ? angles[k] : test[k - p.train_views]);
    RenderResult r = render_forward(toy.truth, v.camera);
    v.image = r.buffers.color;
    for (double& x : v.image.values()) x = std::clamp(x, 0.0, 1.0);
    renders.push_back(std::move(r.buffers));
    toy.dataset.views.push_back(std::move(v));
  }
  toy.dataset.scene_extent = compute_scene_extent(toy.dataset.views);

  for (int a = 0; a < p.train_views; ++a) {
    for (int b = a + 1; b < p.train_views; ++b) {
      const CameraView& va = toy.dataset.views[a].camera;
      const CameraView& vb = toy.dataset.views[b].camera;
      MatchSet set{a, b, {}};
      MatchDepths depths;
      for (int y = 0; y < p.height; y += p.match_stride) {
        for (int x = 0; x < p.width; x += p.match_stride) {
          if (renders[a].alpha.at(x, y) <= 0.5) continue;
          const double za = renders[a].depth.at(x, y);
          const Vec3 cam = vb.pose.apply(unproject_pixel(va, Vec2(x, y), za));
          if (cam.z() <= vb.near) continue;
          const Projection pb = project_point(vb, vb.pose.inverse_apply(cam));
          if (!renders[b].alpha.contains(pb.pixel.x(), pb.pixel.y())) continue;
          if (renders[b].alpha.sample(pb.pixel.x(), pb.pixel.y()) <= 0.5) continue;
          const double zb = renders[b].depth.sample(pb.pixel.x(), pb.pixel.y());
          if (std::abs(zb - cam.z()) > p.match_depth_tolerance * cam.z()) continue;
          set.matches.push_back({Vec2(x, y), pb.pixel, 1.0});
          depths.depth_i.push_back(za);
          depths.depth_j.push_back(pb.depth);
          depths.valid.push_back(1);
        }
      }
      toy.matches.push_back(std::move(set));
      toy.match_depths.push_back(std::move(depths));
    }
  }
  return toy;
}

ImageMetrics compute_metrics(const Image& rendered, const Image& target) {
  if (!rendered.same_shape(target)) throw Error(ErrorCode::ShapeMismatch, "metric inputs differ in shape");
  Image clamped = rendered;
  for (double& v : clamped.values()) v = std::clamp(v, 0.0, 1.0);
  double mse = 0.0;
  for (std::size_t i = 0; i < clamped.values().size(); ++i) {
    const double d = clamped.values()[i] - target.values()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(clamped.values().size());
  ImageMetrics m;
  m.psnr = mse <= 0.0 ? kPsnrCap : std::min(kPsnrCap, -10.0 * std::log10(mse));
  m.ssim = ssim(clamped, target);
  return m;
}

}  // namespace fewview
