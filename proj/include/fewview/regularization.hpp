#pragma once

#include <string>

#include "fewview/image.hpp"
#include "fewview/renderer.hpp"
#include "fewview/scene.hpp"

namespace fewview {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over all pixels and channels: 11x11 Gaussian window
// (sigma 1.5), zero padding, dynamic range 1.
double ssim(const Image& a, const Image& b);

struct SsimGrad {
  double value = 0.0;
  Image grad;  // d(mean SSIM) / d(a)
};
SsimGrad ssim_with_grad(const Image& a, const Image& b);

struct PhotometricLoss {
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  Image grad;  // dL / d(rendered color)
};

// (1 - lambda_ssim) * L1 + lambda_ssim * (1 - SSIM).
PhotometricLoss photometric_loss(const Image& rendered, const Image& target,
                                 double lambda_ssim = 0.2);

struct SceneLoss {
  double loss = 0.0;
  ParamGrads grads;
};

// Mean over Gaussians of sigmoid(opacity_logit)^2.
SceneLoss opacity_loss(const GaussianScene& scene);

// Distance-weighted color agreement with each Gaussian's K neighbors,
// normalized by N * K. Colors are the degree-0 SH colors.
SceneLoss locality_loss(const GaussianScene& scene, const Neighbors& neighbors,
                        double delta = 2.0, bool detach_means = false);

// Per-iteration loss terms; `total` is the weighted sum used for the step.
struct LossReport {
  long iteration = 0;
  std::string stage;
  double photometric = 0.0;
  double opacity = 0.0;
  double locality = 0.0;
  double geom = 0.0;
  double color = 0.0;
  double semantic = 0.0;
  double consistency = 0.0;
  double total = 0.0;
  std::size_t gaussians = 0;
  std::size_t surviving_matches = 0;
  // Warp rejections for the sampled pair (intermediate stage only).
  std::size_t rejected_no_depth = 0;
  std::size_t rejected_out_of_view = 0;  // behind camera or out of bounds
  std::size_t rejected_mask = 0;
  bool skipped = false;
};

}  // namespace fewview
