#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "fewview/image.hpp"

namespace fewview {

// Image-sized feature map, channel-last. `provider` names the feature
// space so maps from different extractors are never compared.
struct FeatureMap {
  Image data;
  std::string provider;

  int width() const noexcept { return data.width(); }
  int height() const noexcept { return data.height(); }
  int channels() const noexcept { return data.channels(); }
};

// A differentiable feature extractor.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string name() const = 0;
  virtual int channels() const = 0;
  virtual FeatureMap extract(const Image& image) const = 0;
  // Vector-Jacobian product: image-shaped gradient of <extract(image), upstream>.
  virtual Image vjp(const Image& image, const Image& upstream) const = 0;
};

// Analytic low-level filter bank: RGB blurred at sigma 1, 2 and 4 (nine
// channels) followed by the normalized Sobel magnitude of each blurred
// luminance (three channels).
class FilterbankProvider final : public FeatureProvider {
 public:
  static constexpr int kChannels = 12;
  static constexpr double kScales[3] = {1.0, 2.0, 4.0};

  std::string name() const override { return "filterbank"; }
  int channels() const override { return kChannels; }
  FeatureMap extract(const Image& image) const override;
  Image vjp(const Image& image, const Image& upstream) const override;
};

std::unique_ptr<FeatureProvider> make_feature_provider(const std::string& name);

// Binary feature files: "FVGF", u32 H, W, C, then H*W*C float32, all
// little-endian, row-major, channel-last.
void write_features(const std::filesystem::path& path, const FeatureMap& features);
// Reads a feature file; when expected sizes are positive the header must
// match them (DimensionMismatch otherwise).
FeatureMap ingest_features(const std::filesystem::path& path, int expected_width = -1,
                           int expected_height = -1,
                           const std::string& provider = "external");

}  // namespace fewview
