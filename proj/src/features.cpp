#include "fewview/features.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "fewview/error.hpp"
#include "fewview/filters.hpp"

namespace fewview {

namespace {

constexpr int kBlurChannels = 9;

struct ScaleOutputs {
  Image blurred;  // 3 channels
  Image gx, gy;
};

ScaleOutputs run_scale(const Image& image, double sigma) {
  ScaleOutputs s;
  s.blurred = blur_replicate(image, gaussian_kernel(sigma));
  sobel(to_gray(s.blurred), s.gx, s.gy);
  return s;
}

}  // namespace

FeatureMap FilterbankProvider::extract(const Image& image) const {
  const int w = image.width(), h = image.height();
  FeatureMap out{Image(w, h, kChannels), name()};
  for (int si = 0; si < 3; ++si) {
    const ScaleOutputs s = run_scale(image, kScales[si]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.data.at(x, y, 3 * si + c) = s.blurred.at(x, y, c);
        out.data.at(x, y, kBlurChannels + si) =
            std::hypot(s.gx.at(x, y), s.gy.at(x, y)) / kSobelStepResponse;
      }
    }
  }
  return out;
}

Image FilterbankProvider::vjp(const Image& image, const Image& upstream) const {
  const int w = image.width(), h = image.height();
  if (upstream.width() != w || upstream.height() != h ||
      upstream.channels() != kChannels) {
    throw Error(ErrorCode::ShapeMismatch, "feature gradient shape mismatch");
  }
  Image total(w, h, 3);
  for (int si = 0; si < 3; ++si) {
    const auto kernel = gaussian_kernel(kScales[si]);
    const ScaleOutputs s = run_scale(image, kScales[si]);
    Image d_blurred(w, h, 3);
    Image dgx(w, h, 1), dgy(w, h, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) d_blurred.at(x, y, c) = upstream.at(x, y, 3 * si + c);
        const double gx = s.gx.at(x, y), gy = s.gy.at(x, y);
        const double mag = std::hypot(gx, gy);
        if (mag > 0.0) {
          const double g = upstream.at(x, y, kBlurChannels + si) / (kSobelStepResponse * mag);
          dgx.at(x, y) = g * gx;
          dgy.at(x, y) = g * gy;
        }
      }
    }
    const Image d_gray_rgb = gray_adjoint(sobel_adjoint(dgx, dgy));
    auto db = d_blurred.values();
    const auto dg = d_gray_rgb.values();
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += dg[i];
    const Image back = blur_replicate_adjoint(d_blurred, kernel);
    auto t = total.values();
    const auto b = back.values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += b[i];
  }
  return total;
}

std::unique_ptr<FeatureProvider> make_feature_provider(const std::string& name) {
  if (name == "filterbank") return std::make_unique<FilterbankProvider>();
  throw Error(ErrorCode::ConfigError, "unknown feature provider: " + name);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'V', 'G', 'F'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

}  // namespace

void write_features(const std::filesystem::path& path, const FeatureMap& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kMagic, 4);
  for (int v : {f.height(), f.width(), f.channels()}) {
    const std::uint32_t u = to_little(static_cast<std::uint32_t>(v));
    out.write(reinterpret_cast<const char*>(&u), 4);
  }
  std::vector<float> buf(f.data.values().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = to_little(static_cast<float>(f.data.values()[i]));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

FeatureMap ingest_features(const std::filesystem::path& path, int expected_width,
                           int expected_height, const std::string& provider) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::ParseError, "bad feature file header: " + path.string());
  }
  const std::uint32_t h = to_little(dims[0]), w = to_little(dims[1]),
                      c = to_little(dims[2]);
  if (h == 0 || w == 0 || c == 0 || h > 1u << 15 || w > 1u << 15 || c > 1u << 12) {
    throw Error(ErrorCode::ParseError, "implausible feature dimensions");
  }
  if ((expected_width > 0 && static_cast<int>(w) != expected_width) ||
      (expected_height > 0 && static_cast<int>(h) != expected_height)) {
    throw Error(ErrorCode::DimensionMismatch, "feature map size differs from image");
  }
  std::vector<float> buf(static_cast<std::size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
    throw Error(ErrorCode::ParseError, "truncated feature payload: " + path.string());
  }
  FeatureMap f{Image(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c)),
               provider};
  auto dst = f.data.values();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = to_little(buf[i]);
    if (!std::isfinite(v)) throw Error(ErrorCode::ParseError, "non-finite feature value");
    dst[i] = v;
  }
  return f;
}

}  // namespace fewview
