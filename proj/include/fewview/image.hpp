#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fewview {

// Dense row-major, channel-last image of doubles.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width),
        height_(height),
        channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const noexcept { return data_.empty(); }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ &&
           channels_ == other.channels_;
  }

  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const noexcept {
    return data_[index(x, y, c)];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v);

  // Bilinear sample at sub-pixel (x, y) with pixel centers at integer
  // coordinates; coordinates are clamped to the image border.
  double sample(double x, double y, int c = 0) const;

  // Adjoint of sample(): scatters `g` into the four taps of this image.
  void splat_sample(double x, double y, int c, double g);

  bool contains(double x, double y) const noexcept {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1.0 && y <= height_ - 1.0;
  }

  Image channel(int c) const;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Rec. 601 luma of a 3-channel image; single-channel input is copied.
Image to_gray(const Image& image);

}  // namespace fewview
