#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fewview/consistency.hpp"
#include "fewview/correspondence.hpp"
#include "fewview/features.hpp"
#include "fewview/geometry.hpp"
#include "fewview/image.hpp"
#include "fewview/scene.hpp"

namespace fewview {

// 8-bit PNG to [0,1] RGB (gray and alpha channels are expanded/dropped).
Image read_png(const std::filesystem::path& path);
// Clamps to [0,1] and rounds to 8 bits. One or three channels.
void write_png(const std::filesystem::path& path, const Image& image);
// Single-channel PFM, little-endian (scale -1), rows stored bottom to top.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

// Binary little-endian PLY in the 3DGS checkpoint layout.
void write_ply(const std::filesystem::path& path, const GaussianScene& scene);
GaussianScene read_ply(const std::filesystem::path& path);

struct DatasetView {
  std::string name;       // file_path as written in transforms.json
  CameraView camera;
  Image image;
  bool train = true;
  std::optional<FeatureMap> features;  // ingested, train views only
  std::string features_path;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetView> views;
  double scene_extent = 1.0;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
  std::vector<FrameInfo> frame_info() const;
};

// Radius of the bounding sphere of the camera centers around their mean,
// times 1.1.
double compute_scene_extent(const std::vector<DatasetView>& views);

// Reads DIR/transforms.json. Intrinsics: fl_x, fl_y, cx, cy, w, h, or
// camera_angle_x (fx = fy = 0.5 w / tan(0.5 angle)). Frames carry
// file_path, a 4x4 row-major camera-to-world transform_matrix (x right,
// y down, z forward unless "camera_convention" is "opengl"), and optional
// "split" and "features" entries.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct ToyParams {
  std::size_t gaussians = 50;
  int width = 64;
  int height = 64;
  int train_views = 3;
  int test_views = 2;
  double arc_degrees = 30.0;   // train views span [-arc, arc]
  double elevation_degrees = 15.0;
  double radius = 4.0;
  double focal = 100.0;
  int match_stride = 2;
  double match_depth_tolerance = 0.02;  // relative
};

struct ToyScene {
  GaussianScene truth;
  Dataset dataset;
  std::vector<MatchSet> matches;        // view indices into dataset.views
  std::vector<MatchDepths> match_depths;  // depths used to generate them
};

// Random ground-truth scene rendered from an arc of cameras, with
// correspondences obtained by lifting alpha-backed grid pixels of one
// training view and reprojecting them into another.
ToyScene generate_toy_scene(std::uint64_t seed, const ToyParams& params = {});

struct ImageMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

// `rendered` is clamped to [0,1] first.
ImageMetrics compute_metrics(const Image& rendered, const Image& target);

}  // namespace fewview
