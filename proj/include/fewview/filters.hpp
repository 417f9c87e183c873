#pragma once

#include <vector>

#include "fewview/image.hpp"

namespace fewview {

// Normalized 1-D Gaussian taps of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma, int radius = -1);

// Separable convolution with replicate padding, applied per channel.
Image blur_replicate(const Image& image, const std::vector<double>& kernel);
// Exact adjoint of blur_replicate.
Image blur_replicate_adjoint(const Image& grad, const std::vector<double>& kernel);

// Separable convolution with zero padding ("same" output size). For a
// symmetric kernel this operator is self-adjoint.
Image blur_zero(const Image& image, const std::vector<double>& kernel);

// 3x3 Sobel derivatives of a single-channel image, replicate padding.
void sobel(const Image& gray, Image& gx, Image& gy);
// Adjoint of sobel(): accumulates into a single-channel image.
Image sobel_adjoint(const Image& dgx, const Image& dgy);

// Sobel response of an ideal unit step edge; used as the normalizer.
inline constexpr double kSobelStepResponse = 4.0;

// Adjoint of to_gray() for a 3-channel target.
Image gray_adjoint(const Image& grad_gray);

}  // namespace fewview
