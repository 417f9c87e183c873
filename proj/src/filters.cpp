#include "fewview/filters.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace fewview {

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

enum class Pad { Replicate, Zero };

// Strided view of one image axis: `lines` rows of `n` samples, each sample
// holding `ch` contiguous channels.
struct AxisLayout {
  int n, lines, ch;
  std::ptrdiff_t step, line_stride;
};

AxisLayout axis_layout(const Image& img, bool along_x) {
  const int w = img.width(), h = img.height(), ch = img.channels();
  const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(w) * ch;
  return along_x ? AxisLayout{w, h, ch, ch, row} : AxisLayout{h, w, ch, row, ch};
}

// One separable pass along x (horizontal) or y.
template <Pad P>
Image convolve_axis(const Image& in, const std::vector<double>& k, bool along_x) {
  const AxisLayout L = axis_layout(in, along_x);
  const int r = static_cast<int>(k.size() / 2);
  Image out(in.width(), in.height(), in.channels());
  const double* src = in.values().data();
  double* dst = out.values().data();
  for (int l = 0; l < L.lines; ++l) {
    const double* s = src + l * L.line_stride;
    double* d = dst + l * L.line_stride;
    for (int i = 0; i < L.n; ++i) {
      double* o = d + i * L.step;
      for (int t = -r; t <= r; ++t) {
        int j = i + t;
        if (j < 0 || j >= L.n) {
          if constexpr (P == Pad::Zero) continue;
          j = std::clamp(j, 0, L.n - 1);
        }
        const double kv = k[t + r];
        const double* p = s + j * L.step;
        for (int c = 0; c < L.ch; ++c) o[c] += kv * p[c];
      }
    }
  }
  return out;
}

// Adjoint of the replicate-padded pass: scatter to clamped taps.
Image convolve_axis_adjoint(const Image& g, const std::vector<double>& k, bool along_x) {
  const AxisLayout L = axis_layout(g, along_x);
  const int r = static_cast<int>(k.size() / 2);
  Image out(g.width(), g.height(), g.channels());
  const double* src = g.values().data();
  double* dst = out.values().data();
  for (int l = 0; l < L.lines; ++l) {
    const double* s = src + l * L.line_stride;
    double* d = dst + l * L.line_stride;
    for (int i = 0; i < L.n; ++i) {
      const double* gv = s + i * L.step;
      for (int t = -r; t <= r; ++t) {
        const int j = std::clamp(i + t, 0, L.n - 1);
        const double kv = k[t + r];
        double* o = d + j * L.step;
        for (int c = 0; c < L.ch; ++c) o[c] += kv * gv[c];
      }
    }
  }
  return out;
}

}  // namespace

Image blur_replicate(const Image& image, const std::vector<double>& kernel) {
  return convolve_axis<Pad::Replicate>(
      convolve_axis<Pad::Replicate>(image, kernel, true), kernel, false);
}

Image blur_replicate_adjoint(const Image& grad, const std::vector<double>& kernel) {
  return convolve_axis_adjoint(convolve_axis_adjoint(grad, kernel, false), kernel, true);
}

Image blur_zero(const Image& image, const std::vector<double>& kernel) {
  return convolve_axis<Pad::Zero>(convolve_axis<Pad::Zero>(image, kernel, true),
                                  kernel, false);
}

namespace {

constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

}  // namespace

void sobel(const Image& gray, Image& gx, Image& gy) {
  const int w = gray.width(), h = gray.height();
  gx = Image(w, h, 1);
  gy = Image(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Positive and negative taps are summed separately so flat regions
      // give exactly zero.
      double right = 0.0, left = 0.0, down = 0.0, up = 0.0;
      for (int k = -1; k <= 1; ++k) {
        const double wk = k == 0 ? 2.0 : 1.0;
        const int xk = std::clamp(x + k, 0, w - 1), yk = std::clamp(y + k, 0, h - 1);
        right += wk * gray.at(std::min(x + 1, w - 1), yk);
        left += wk * gray.at(std::max(x - 1, 0), yk);
        down += wk * gray.at(xk, std::min(y + 1, h - 1));
        up += wk * gray.at(xk, std::max(y - 1, 0));
      }
      const double sx = right - left, sy = down - up;
      gx.at(x, y) = sx;
      gy.at(x, y) = sy;
    }
  }
}

Image sobel_adjoint(const Image& dgx, const Image& dgy) {
  const int w = dgx.width(), h = dgx.height();
  Image out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ax = dgx.at(x, y), ay = dgy.at(x, y);
      if (ax == 0.0 && ay == 0.0) continue;
      for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
          out.at(std::clamp(x + i, 0, w - 1), std::clamp(y + j, 0, h - 1)) +=
              kSobelX[j + 1][i + 1] * ax + kSobelY[j + 1][i + 1] * ay;
        }
      }
    }
  }
  return out;
}

Image gray_adjoint(const Image& grad_gray) {
  Image out(grad_gray.width(), grad_gray.height(), 3);
  const auto g = grad_gray.values();
  auto o = out.values();
  for (std::size_t i = 0; i < grad_gray.pixel_count(); ++i) {
    o[3 * i] = 0.299 * g[i];
    o[3 * i + 1] = 0.587 * g[i];
    o[3 * i + 2] = 0.114 * g[i];
  }
  return out;
}

}  // namespace fewview
