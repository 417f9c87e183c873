#include "fewview/consistency.hpp"

#include <cmath>

#include "fewview/error.hpp"
#include "fewview/filters.hpp"

namespace fewview {

namespace {

std::vector<double> sample_all(const Image& img, const Vec2& p) {
  std::vector<double> v(img.channels());
  for (int c = 0; c < img.channels(); ++c) v[c] = img.sample(p.x(), p.y(), c);
  return v;
}

Vec3 sample_rgb(const Image& img, const Vec2& p) {
  return Vec3(img.sample(p.x(), p.y(), 0), img.sample(p.x(), p.y(), 1),
              img.sample(p.x(), p.y(), 2));
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

bool ConsistencyWeights::valid() const noexcept {
  return alpha >= 0 && beta >= 0 && gamma >= 0 && theta_g >= 0 && depth_unit > 0 &&
         theta_grad >= 0 && theta_px >= 0;
}

MatchDepths sample_match_depths(const MatchSet& matches, const RenderBuffers& ri,
                                const RenderBuffers& rj, double min_alpha) {
  MatchDepths out;
  const std::size_t n = matches.matches.size();
  out.depth_i.resize(n);
  out.depth_j.resize(n);
  out.valid.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    const Vec2& a = matches.matches[m].pi;
    const Vec2& b = matches.matches[m].pj;
    out.depth_i[m] = ri.depth.sample(a.x(), a.y());
    out.depth_j[m] = rj.depth.sample(b.x(), b.y());
    out.valid[m] = ri.alpha.sample(a.x(), a.y()) >= min_alpha &&
                   rj.alpha.sample(b.x(), b.y()) >= min_alpha && out.depth_i[m] > 0.0 &&
                   out.depth_j[m] > 0.0;
  }
  return out;
}

WarpResult warp_matches(const MatchSet& matches, const MatchDepths& depths,
                        const CameraView& view_i, const CameraView& view_j,
                        const CameraView& view_k, const WarpSources& src,
                        const ConsistencyWeights& w) {
  WarpResult out;
  const Intrinsics& K = view_k.intrinsics;
  for (std::size_t m = 0; m < matches.matches.size(); ++m) {
    if (!depths.valid[m]) {
      ++out.no_depth;
      continue;
    }
    const Match& match = matches.matches[m];
    WarpedMatch wm;
    wm.view_i = matches.view_i;
    wm.view_j = matches.view_j;
    wm.source_i = match.pi;
    wm.source_j = match.pj;
    wm.depth_i = depths.depth_i[m];
    wm.depth_j = depths.depth_j[m];
    const Vec3 cam_i = view_k.pose.apply(unproject_pixel(view_i, match.pi, wm.depth_i));
    const Vec3 cam_j = view_k.pose.apply(unproject_pixel(view_j, match.pj, wm.depth_j));
    if (cam_i.z() <= kMinDepth || cam_j.z() <= kMinDepth) {
      ++out.behind_camera;
      continue;
    }
    wm.warped_depth_i = cam_i.z();
    wm.warped_depth_j = cam_j.z();
    wm.pixel_i = Vec2(K.fx * cam_i.x() / cam_i.z() + K.cx, K.fy * cam_i.y() / cam_i.z() + K.cy);
    wm.pixel_j = Vec2(K.fx * cam_j.x() / cam_j.z() + K.cx, K.fy * cam_j.y() / cam_j.z() + K.cy);
    auto inside = [&](const Vec2& p) {
      return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= K.width - 1.0 && p.y() <= K.height - 1.0;
    };
    if (!inside(wm.pixel_i) || !inside(wm.pixel_j)) {
      ++out.out_of_bounds;
      continue;
    }
    wm.pixel = 0.5 * (wm.pixel_i + wm.pixel_j);
    wm.mask = agreement_mask(wm.warped_depth_i / w.depth_unit,
                             wm.warped_depth_j / w.depth_unit, w.theta_g) &&
              (wm.pixel_i - wm.pixel_j).norm() <= w.theta_px;
    if (!wm.mask) ++out.masked;
    if (src.gradient_i) {
      wm.weight_i = gradient_weight(src.gradient_i->sample(match.pi.x(), match.pi.y()), w.theta_grad);
    }
    if (src.gradient_j) {
      wm.weight_j = gradient_weight(src.gradient_j->sample(match.pj.x(), match.pj.y()), w.theta_grad);
    }
    if (src.image_i) wm.color_i = sample_rgb(*src.image_i, match.pi);
    if (src.image_j) wm.color_j = sample_rgb(*src.image_j, match.pj);
    if (src.features_i) wm.feature_i = sample_all(src.features_i->data, match.pi);
    if (src.features_j) wm.feature_j = sample_all(src.features_j->data, match.pj);
    out.warped.push_back(std::move(wm));
  }
  return out;
}

Image agreement_mask(const Image& x_i, const Image& x_j, double theta) {
  if (!x_i.same_shape(x_j)) throw Error(ErrorCode::ShapeMismatch, "mask inputs differ in shape");
  Image out(x_i.width(), x_i.height(), x_i.channels());
  for (std::size_t k = 0; k < out.values().size(); ++k) {
    out.values()[k] = agreement_mask(x_i.values()[k], x_j.values()[k], theta) ? 1.0 : 0.0;
  }
  return out;
}

Image sobel_gradient_magnitude(const Image& image) {
  Image gx, gy;
  sobel(to_gray(image), gx, gy);
  Image out(image.width(), image.height(), 1);
  for (std::size_t k = 0; k < out.values().size(); ++k) {
    const double g = std::hypot(gx.values()[k], gy.values()[k]) / kSobelStepResponse;
    out.values()[k] = std::min(g, 1.0);
  }
  return out;
}

ConsistencyLoss consistency_loss(const std::vector<WarpedMatch>& warped,
                                 const RenderBuffers& novel, const FeatureMap* features,
                                 const ConsistencyWeights& w) {
  ConsistencyLoss out;
  const int width = novel.depth.width(), height = novel.depth.height();
  out.grads = GradBuffers::zeros(width, height);
  const bool use_features = features != nullptr && w.gamma > 0.0;
  if (use_features) {
    if (features->width() != width || features->height() != height) {
      throw Error(ErrorCode::DimensionMismatch, "novel features do not match the render");
    }
    out.feature_grad = Image(width, height, features->channels());
  }
  for (const WarpedMatch& m : warped) out.surviving += m.mask ? 1 : 0;
  if (out.surviving == 0) throw Error(ErrorCode::NoSurvivingMatches, "all warped matches masked out");
  const double inv = 1.0 / static_cast<double>(out.surviving);

  for (const WarpedMatch& m : warped) {
    if (!m.mask) continue;
    const double px = m.pixel.x(), py = m.pixel.y();

    const double z = novel.depth.sample(px, py);
    const double ri = z - m.warped_depth_i, rj = z - m.warped_depth_j;
    const bool geo_i = std::abs(ri) <= std::abs(rj);
    const double wg = geo_i ? m.weight_i : m.weight_j;
    const double rg = geo_i ? ri : rj;
    out.geom += inv * wg * std::abs(rg);
    out.grads.d_depth.splat_sample(px, py, 0, w.alpha * inv * wg * sign(rg));

    const Vec3 c = sample_rgb(novel.color, m.pixel);
    const Vec3 di = c - m.color_i, dj = c - m.color_j;
    const bool col_i = di.lpNorm<1>() <= dj.lpNorm<1>();
    const double wc = col_i ? m.weight_i : m.weight_j;
    const Vec3& dc = col_i ? di : dj;
    out.color += inv * wc * dc.lpNorm<1>();
    for (int ch = 0; ch < 3; ++ch) {
      out.grads.d_color.splat_sample(px, py, ch, w.beta * inv * wc * sign(dc[ch]));
    }

    if (use_features) {
      const int C = features->channels();
      if (static_cast<int>(m.feature_i.size()) != C || static_cast<int>(m.feature_j.size()) != C) {
        throw Error(ErrorCode::DimensionMismatch, "source features do not match the provider");
      }
      std::vector<double> f = sample_all(features->data, m.pixel);
      double ni = 0.0, nj = 0.0;
      for (int ch = 0; ch < C; ++ch) {
        ni += (f[ch] - m.feature_i[ch]) * (f[ch] - m.feature_i[ch]);
        nj += (f[ch] - m.feature_j[ch]) * (f[ch] - m.feature_j[ch]);
      }
      ni = std::sqrt(ni);
      nj = std::sqrt(nj);
      const bool sem_i = ni <= nj;
      const double ws = sem_i ? m.weight_i : m.weight_j;
      const double nrm = sem_i ? ni : nj;
      const std::vector<double>& ft = sem_i ? m.feature_i : m.feature_j;
      out.semantic += inv * ws * nrm;
      if (nrm > 0.0) {
        for (int ch = 0; ch < C; ++ch) {
          out.feature_grad.splat_sample(px, py, ch, w.gamma * inv * ws * (f[ch] - ft[ch]) / nrm);
        }
      }
    }
  }
  out.loss = w.alpha * out.geom + w.beta * out.color + (use_features ? w.gamma * out.semantic : 0.0);
  return out;
}

}  // namespace fewview
