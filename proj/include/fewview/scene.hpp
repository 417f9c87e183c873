#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fewview/geometry.hpp"
#include "fewview/sh.hpp"

namespace fewview {

using Vec4 = Eigen::Vector4d;

// One scene primitive. rotation is stored (w, x, y, z); sh is
// coefficient-major with interleaved channels: sh[m * 3 + channel].
struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  std::vector<double> sh = std::vector<double>(3, 0.0);

  double opacity() const;
  Vec3 scale() const;
  Mat3 rotation_matrix() const;
  int sh_degree() const;
};

double sigmoid(double x);
double logit(double p);

// Rotation matrix of the normalized quaternion (w, x, y, z).
Mat3 quaternion_to_matrix(const Vec4& q);

Mat3 compose_covariance(const Gaussian3D& g);

// View-dependent color using the first `degree` bands, offset by 0.5 and
// clamped to [0, inf). degree < 0 uses every band stored in g.
Vec3 eval_sh_color(const Gaussian3D& g, const Vec3& view_dir, int degree = -1);
Vec3 eval_sh_color_unclamped(const Gaussian3D& g, const Vec3& view_dir,
                             int degree = -1);

// Color used by the locality term: the degree-0 component only.
Vec3 dc_color(const Gaussian3D& g);

struct GaussianScene {
  std::vector<Gaussian3D> gaussians;
  int sh_degree = 0;
  int active_sh_degree = 0;

  // Density-control statistics: summed screen-space positional gradient
  // norms and the number of views each Gaussian was visible in.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;

  std::size_t size() const noexcept { return gaussians.size(); }
  bool empty() const noexcept { return gaussians.empty(); }

  void reset_stats();
  void renormalize_rotations();
  // Hash over every parameter bit; used to detect mutation between a
  // forward pass and its backward pass.
  std::uint64_t fingerprint() const;
  bool consistent() const;
};

struct Neighbors {
  int k = 0;
  std::size_t scene_size = 0;
  std::vector<int> indices;  // scene_size * k, row per Gaussian

  const int* of(std::size_t i) const { return indices.data() + i * k; }
};

// Exact k nearest neighbors by Euclidean distance between means, ties
// broken by lower index. A uniform grid is used above 2000 points.
Neighbors knn_neighbors(const GaussianScene& scene, int k);
Neighbors knn_brute_force(const GaussianScene& scene, int k);
Neighbors knn_grid(const GaussianScene& scene, int k);

struct DensityThresholds {
  double grad = 2e-4;
  double prune_opacity = 0.005;
  double scale_fraction = 0.01;
  double scene_extent = 1.0;
  double split_divisor = 1.6;
};

struct DensityReport {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
  // For each Gaussian of the new scene: the index it had before density
  // control, or nullopt when it was created by a clone or split.
  std::vector<std::optional<std::size_t>> origin;
};

DensityReport adaptive_density_control(GaussianScene& scene,
                                       const DensityThresholds& thresholds,
                                       std::mt19937_64& rng);

}  // namespace fewview
