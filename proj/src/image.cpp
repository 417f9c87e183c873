#include "fewview/image.hpp"

#include <algorithm>
#include <cmath>

namespace fewview {

void Image::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace {

struct BilinearTaps {
  int x0, y0, x1, y1;
  double wx, wy;
};

BilinearTaps taps(double x, double y, int width, int height) {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  BilinearTaps t{};
  t.x0 = static_cast<int>(std::floor(x));
  t.y0 = static_cast<int>(std::floor(y));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.wx = x - t.x0;
  t.wy = y - t.y0;
  return t;
}

}  // namespace

double Image::sample(double x, double y, int c) const {
  const BilinearTaps t = taps(x, y, width_, height_);
  const double top = (1.0 - t.wx) * at(t.x0, t.y0, c) + t.wx * at(t.x1, t.y0, c);
  const double bottom =
      (1.0 - t.wx) * at(t.x0, t.y1, c) + t.wx * at(t.x1, t.y1, c);
  return (1.0 - t.wy) * top + t.wy * bottom;
}

void Image::splat_sample(double x, double y, int c, double g) {
  const BilinearTaps t = taps(x, y, width_, height_);
  at(t.x0, t.y0, c) += g * (1.0 - t.wx) * (1.0 - t.wy);
  at(t.x1, t.y0, c) += g * t.wx * (1.0 - t.wy);
  at(t.x0, t.y1, c) += g * (1.0 - t.wx) * t.wy;
  at(t.x1, t.y1, c) += g * t.wx * t.wy;
}

Image Image::channel(int c) const {
  Image out(width_, height_, 1);
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    out.data_[i] = data_[i * channels_ + c];
  }
  return out;
}

Image to_gray(const Image& image) {
  if (image.channels() == 1) return image;
  Image out(image.width(), image.height(), 1);
  const auto src = image.values();
  auto dst = out.values();
  const int ch = image.channels();
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    dst[i] = 0.299 * src[i * ch] + 0.587 * src[i * ch + 1] +
             0.114 * src[i * ch + 2];
  }
  return out;
}

}  // namespace fewview
