#pragma once

#include <cstdint>
#include <vector>

#include "fewview/geometry.hpp"
#include "fewview/image.hpp"
#include "fewview/scene.hpp"

namespace fewview {

inline constexpr int kTileSize = 16;

struct RenderOptions {
  // Contributions with alpha below this are skipped (0 disables).
  double alpha_min = 1.0 / 255.0;
  // Per-pixel compositing stops once transmittance drops below this
  // (0 disables).
  double transmittance_min = 1e-4;
  // A Gaussian touches a pixel only inside this Mahalanobis radius.
  double support_sigma = 3.0;
  // Divide composited depth by accumulated alpha.
  bool depth_alpha_normalize = false;
  // SH bands used for color; negative means the scene's active degree.
  int sh_degree = -1;
  bool record_contributors = false;

  static RenderOptions exact(double support = 3.0) {
    RenderOptions o;
    o.alpha_min = 0.0;
    o.transmittance_min = 0.0;
    o.support_sigma = support;
    return o;
  }
};

struct RenderBuffers {
  Image color;  // H x W x 3, unclamped
  Image depth;  // H x W
  Image alpha;  // H x W
  std::vector<std::uint32_t> contributors;  // optional diagnostics
};

struct GradBuffers {
  Image d_color;
  Image d_depth;
  Image d_alpha;

  static GradBuffers zeros(int width, int height);
  bool all_finite() const;
  void add_scaled(const GradBuffers& other, double weight);
};

struct ParamGrads {
  std::vector<Vec3> mean;
  std::vector<Vec4> rotation;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<double> sh;  // n * coeffs, same layout as Gaussian3D::sh
  int sh_coeffs = 3;
  // Norm of dL/d(mean2d) in normalized device units, and visibility.
  std::vector<double> mean2d_norm;
  std::vector<std::uint8_t> visible;

  static ParamGrads zeros(const GaussianScene& scene);
  std::size_t size() const noexcept { return mean.size(); }
  void add_scaled(const ParamGrads& other, double weight);
  void scale(double weight);
  bool all_finite() const;
  double max_abs() const;
};

// Per-Gaussian screen-space quantities shared by forward and backward.
struct ProjectedGaussian {
  Vec3 cam = Vec3::Zero();
  double mean_x = 0.0;
  double mean_y = 0.0;
  double conic_a = 0.0;
  double conic_b = 0.0;
  double conic_c = 0.0;
  double depth = 0.0;
  double opacity = 0.0;
  double cutoff = 0.0;  // largest Mahalanobis half-distance that can contribute
  double color[3] = {0.0, 0.0, 0.0};
  bool color_clamped[3] = {false, false, false};
  Vec3 view_dir = Vec3::UnitZ();
  Mat2 cov2d = Mat2::Identity();
  int rect_min_x = 0;
  int rect_min_y = 0;
  int rect_max_x = -1;
  int rect_max_y = -1;
  bool visible = false;
};

class RenderState {
 public:
  const GaussianScene* scene = nullptr;
  std::uint64_t fingerprint = 0;
  CameraView view;
  RenderOptions options;
  int sh_degree = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<ProjectedGaussian> projected;
  std::vector<std::uint32_t> tile_offsets;  // tiles + 1 prefix offsets
  std::vector<std::uint32_t> tile_lists;    // depth-sorted Gaussian ids
  std::vector<double> final_transmittance;
  std::vector<std::uint32_t> processed;     // list entries traversed
  Image raw_depth;                          // un-normalized depth
  Image raw_alpha;
};

struct RenderResult {
  RenderBuffers buffers;
  RenderState state;
};

// Tiled front-to-back compositing of color, depth and alpha. The scene must
// outlive the returned state if render_backward is called.
RenderResult render_forward(const GaussianScene& scene, const CameraView& view,
                            const RenderOptions& options = {});

// Exact gradients of the composited buffers, contracted with `grads`.
ParamGrads render_backward(const RenderState& state, const GradBuffers& grads);

}  // namespace fewview
