#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fewview/correspondence.hpp"
#include "fewview/features.hpp"
#include "fewview/geometry.hpp"
#include "fewview/image.hpp"
#include "fewview/renderer.hpp"

namespace fewview {

struct ConsistencyWeights {
  double alpha = 0.5;   // geometry
  double beta = 0.05;   // color
  double gamma = 0.001; // semantic
  // Depth agreement threshold in normalized units: depth differences are
  // divided by depth_unit before comparison. The trainer sets depth_unit
  // to scene_extent / 100.
  double theta_g = 10.0;
  double depth_unit = 1.0;
  double theta_grad = 0.1;
  double theta_px = 2.0;

  bool valid() const noexcept;
};

// One match carried into the novel view k. All source-side quantities are
// constants for optimization.
struct WarpedMatch {
  int view_i = 0;
  int view_j = 0;
  Vec2 source_i = Vec2::Zero();
  Vec2 source_j = Vec2::Zero();
  double depth_i = 0.0;  // rendered depth at source_i
  double depth_j = 0.0;
  Vec2 pixel_i = Vec2::Zero();  // projection into view k
  Vec2 pixel_j = Vec2::Zero();
  double warped_depth_i = 0.0;  // camera-k z of the lifted points
  double warped_depth_j = 0.0;
  Vec2 pixel = Vec2::Zero();  // consensus pixel: midpoint of the projections
  bool mask = false;
  double weight_i = 1.0;  // gradient weight from training image i at source_i
  double weight_j = 1.0;
  Vec3 color_i = Vec3::Zero();
  Vec3 color_j = Vec3::Zero();
  std::vector<double> feature_i;
  std::vector<double> feature_j;
};

// Optional per-source attachments. Gradient maps are
// sobel_gradient_magnitude of the training images.
struct WarpSources {
  const Image* image_i = nullptr;
  const Image* image_j = nullptr;
  const Image* gradient_i = nullptr;
  const Image* gradient_j = nullptr;
  const FeatureMap* features_i = nullptr;
  const FeatureMap* features_j = nullptr;
};

struct MatchDepths {
  std::vector<double> depth_i;
  std::vector<double> depth_j;
  std::vector<std::uint8_t> valid;  // both samples alpha-backed
};

// Bilinear depth at each match pixel; a sample is valid when the bilinear
// alpha there is at least min_alpha.
MatchDepths sample_match_depths(const MatchSet& matches, const RenderBuffers& render_i,
                                const RenderBuffers& render_j, double min_alpha = 0.5);

struct WarpResult {
  std::vector<WarpedMatch> warped;
  std::size_t no_depth = 0;
  std::size_t behind_camera = 0;
  std::size_t out_of_bounds = 0;
  std::size_t masked = 0;
  std::size_t surviving() const noexcept { return warped.size() - masked; }
};

WarpResult warp_matches(const MatchSet& matches, const MatchDepths& depths,
                        const CameraView& view_i, const CameraView& view_j,
                        const CameraView& view_k, const WarpSources& sources,
                        const ConsistencyWeights& weights);

inline bool agreement_mask(double x_i, double x_j, double theta) {
  return std::abs(x_i - x_j) < theta;
}
Image agreement_mask(const Image& x_i, const Image& x_j, double theta);

inline double gradient_weight(double grad_mag, double theta_grad) {
  return grad_mag > theta_grad ? std::exp(-grad_mag) : 1.0;
}

// Sobel magnitude of the luma divided by the unit-step response and
// clamped to [0, 1]; replicate padding.
Image sobel_gradient_magnitude(const Image& image);

struct ConsistencyLoss {
  double loss = 0.0;  // alpha*geom + beta*color + gamma*semantic
  double geom = 0.0;
  double color = 0.0;
  double semantic = 0.0;
  std::size_t surviving = 0;
  GradBuffers grads;    // into the novel render
  Image feature_grad;   // into the novel feature map (empty without features)
};

// Throws NoSurvivingMatches when no masked-in match remains.
ConsistencyLoss consistency_loss(const std::vector<WarpedMatch>& warped,
                                 const RenderBuffers& novel,
                                 const FeatureMap* novel_features,
                                 const ConsistencyWeights& weights);

}  // namespace fewview
