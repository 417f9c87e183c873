#include "fewview/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fewview/error.hpp"
#include "fewview/parallel.hpp"

namespace fewview {

GradBuffers GradBuffers::zeros(int width, int height) {
  return {Image(width, height, 3), Image(width, height, 1),
          Image(width, height, 1)};
}

namespace {

bool finite_span(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void axpy(std::span<double> dst, std::span<const double> src, double w) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
}

}  // namespace

bool GradBuffers::all_finite() const {
  return finite_span(d_color.values()) && finite_span(d_depth.values()) &&
         finite_span(d_alpha.values());
}

void GradBuffers::add_scaled(const GradBuffers& other, double weight) {
  if (!d_color.same_shape(other.d_color) || !d_depth.same_shape(other.d_depth) ||
      !d_alpha.same_shape(other.d_alpha)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient buffer shapes differ");
  }
  axpy(d_color.values(), other.d_color.values(), weight);
  axpy(d_depth.values(), other.d_depth.values(), weight);
  axpy(d_alpha.values(), other.d_alpha.values(), weight);
}

ParamGrads ParamGrads::zeros(const GaussianScene& scene) {
  const std::size_t n = scene.size();
  ParamGrads g;
  g.sh_coeffs = 3 * sh_coeff_count(scene.sh_degree);
  g.mean.assign(n, Vec3::Zero());
  g.rotation.assign(n, Vec4::Zero());
  g.log_scale.assign(n, Vec3::Zero());
  g.opacity_logit.assign(n, 0.0);
  g.sh.assign(n * g.sh_coeffs, 0.0);
  g.mean2d_norm.assign(n, 0.0);
  g.visible.assign(n, 0);
  return g;
}

void ParamGrads::add_scaled(const ParamGrads& o, double w) {
  if (o.size() != size() || o.sh.size() != sh.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter gradient sizes differ");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    mean[i] += w * o.mean[i];
    rotation[i] += w * o.rotation[i];
    log_scale[i] += w * o.log_scale[i];
    opacity_logit[i] += w * o.opacity_logit[i];
  }
  axpy(sh, o.sh, w);
}

void ParamGrads::scale(double w) {
  for (std::size_t i = 0; i < size(); ++i) {
    mean[i] *= w;
    rotation[i] *= w;
    log_scale[i] *= w;
    opacity_logit[i] *= w;
  }
  for (double& v : sh) v *= w;
}

bool ParamGrads::all_finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!mean[i].allFinite() || !rotation[i].allFinite() ||
        !log_scale[i].allFinite() || !std::isfinite(opacity_logit[i])) {
      return false;
    }
  }
  return finite_span(sh);
}

double ParamGrads::max_abs() const {
  double m = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    m = std::max({m, mean[i].cwiseAbs().maxCoeff(),
                  rotation[i].cwiseAbs().maxCoeff(),
                  log_scale[i].cwiseAbs().maxCoeff(), std::abs(opacity_logit[i])});
  }
  for (double v : sh) m = std::max(m, std::abs(v));
  return m;
}

// ---------------------------------------------------------------------------

namespace {

int active_degree(const GaussianScene& scene, const RenderOptions& opt) {
  if (opt.sh_degree < 0) return std::min(scene.active_sh_degree, scene.sh_degree);
  return std::min(opt.sh_degree, scene.sh_degree);
}

ProjectedGaussian project_gaussian(const Gaussian3D& g, const CameraView& view,
                                   const Vec3& center, int degree,
                                   double support, double alpha_min) {
  ProjectedGaussian pg;
  const Intrinsics& k = view.intrinsics;
  const Vec3 p = view.pose.apply(g.mean);
  pg.cam = p;
  if (!(p.z() > view.near) || !(p.z() > kMinDepth) || p.z() > view.far) return pg;

  const Mat23 j = projection_jacobian(k, p);
  const Mat23 t = j * view.pose.rotation();
  Mat2 cov = t * compose_covariance(g) * t.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kCovarianceFloor;
  cov(1, 1) += kCovarianceFloor;
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
  if (!(det > 0.0)) return pg;

  pg.cov2d = cov;
  pg.conic_a = cov(1, 1) / det;
  pg.conic_b = -cov(0, 1) / det;
  pg.conic_c = cov(0, 0) / det;
  pg.mean_x = k.fx * p.x() / p.z() + k.cx;
  pg.mean_y = k.fy * p.y() / p.z() + k.cy;
  pg.depth = p.z();

  // Beyond sigma = ln(o / alpha_min) the Gaussian is skipped anyway, so
  // the support shrinks for faint Gaussians.
  pg.opacity = g.opacity();
  pg.cutoff = 0.5 * support * support;
  if (alpha_min > 0.0) {
    if (pg.opacity < alpha_min) return pg;
    pg.cutoff = std::min(pg.cutoff, std::log(pg.opacity / alpha_min));
  }
  const double radius = std::sqrt(2.0 * pg.cutoff);
  const double hx = radius * std::sqrt(cov(0, 0));
  const double hy = radius * std::sqrt(cov(1, 1));
  pg.rect_min_x = std::max(0, static_cast<int>(std::ceil(pg.mean_x - hx)));
  pg.rect_max_x = std::min(k.width - 1, static_cast<int>(std::floor(pg.mean_x + hx)));
  pg.rect_min_y = std::max(0, static_cast<int>(std::ceil(pg.mean_y - hy)));
  pg.rect_max_y = std::min(k.height - 1, static_cast<int>(std::floor(pg.mean_y + hy)));
  if (pg.rect_min_x > pg.rect_max_x || pg.rect_min_y > pg.rect_max_y) return pg;

  const Vec3 v = g.mean - center;
  const double vn = v.norm();
  pg.view_dir = vn > 0.0 ? Vec3(v / vn) : Vec3::UnitZ();
  const Vec3 c = eval_sh_color_unclamped(g, pg.view_dir, degree);
  for (int ch = 0; ch < 3; ++ch) {
    pg.color_clamped[ch] = c[ch] < 0.0;
    pg.color[ch] = pg.color_clamped[ch] ? 0.0 : c[ch];
  }
  pg.visible = true;
  return pg;
}

struct TileRange {
  int x0, y0, x1, y1;  // pixel bounds, exclusive end
};

TileRange tile_range(const RenderState& s, std::size_t tile) {
  const int tx = static_cast<int>(tile % s.tiles_x);
  const int ty = static_cast<int>(tile / s.tiles_x);
  return {tx * kTileSize, ty * kTileSize,
          std::min((tx + 1) * kTileSize, s.view.intrinsics.width),
          std::min((ty + 1) * kTileSize, s.view.intrinsics.height)};
}

}  // namespace

RenderResult render_forward(const GaussianScene& scene, const CameraView& view,
                            const RenderOptions& opt) {
  RenderResult result;
  RenderState& s = result.state;
  RenderBuffers& out = result.buffers;
  const int width = view.intrinsics.width;
  const int height = view.intrinsics.height;

  s.scene = &scene;
  s.fingerprint = scene.fingerprint();
  s.view = view;
  s.options = opt;
  s.sh_degree = active_degree(scene, opt);
  s.tiles_x = (width + kTileSize - 1) / kTileSize;
  s.tiles_y = (height + kTileSize - 1) / kTileSize;

  const std::size_t n = scene.size();
  const Vec3 center = view.pose.camera_center();
  s.projected.resize(n);
  parallel_for(n, [&](std::size_t i) {
    s.projected[i] = project_gaussian(scene.gaussians[i], view, center,
                                      s.sh_degree, opt.support_sigma, opt.alpha_min);
  });

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (s.projected[i].visible) order.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = s.projected[a].depth, db = s.projected[b].depth;
    return da < db || (da == db && a < b);
  });

  const std::size_t tiles = static_cast<std::size_t>(s.tiles_x) * s.tiles_y;
  s.tile_offsets.assign(tiles + 1, 0);
  for (std::uint32_t id : order) {
    const auto& pg = s.projected[id];
    for (int ty = pg.rect_min_y / kTileSize; ty <= pg.rect_max_y / kTileSize; ++ty) {
      for (int tx = pg.rect_min_x / kTileSize; tx <= pg.rect_max_x / kTileSize; ++tx) {
        ++s.tile_offsets[ty * s.tiles_x + tx + 1];
      }
    }
  }
  std::partial_sum(s.tile_offsets.begin(), s.tile_offsets.end(),
                   s.tile_offsets.begin());
  s.tile_lists.resize(s.tile_offsets.back());
  {
    std::vector<std::uint32_t> cursor(s.tile_offsets.begin(), s.tile_offsets.end() - 1);
    for (std::uint32_t id : order) {
      const auto& pg = s.projected[id];
      for (int ty = pg.rect_min_y / kTileSize; ty <= pg.rect_max_y / kTileSize; ++ty) {
        for (int tx = pg.rect_min_x / kTileSize; tx <= pg.rect_max_x / kTileSize; ++tx) {
          s.tile_lists[cursor[ty * s.tiles_x + tx]++] = id;
        }
      }
    }
  }

  out.color = Image(width, height, 3);
  out.depth = Image(width, height, 1);
  out.alpha = Image(width, height, 1);
  if (opt.record_contributors) out.contributors.assign(static_cast<std::size_t>(width) * height, 0);
  s.final_transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
  s.processed.assign(static_cast<std::size_t>(width) * height, 0);

  parallel_for(tiles, [&](std::size_t tile) {
    const TileRange r = tile_range(s, tile);
    const std::uint32_t begin = s.tile_offsets[tile];
    const std::uint32_t end = s.tile_offsets[tile + 1];
    for (int py = r.y0; py < r.y1; ++py) {
      for (int px = r.x0; px < r.x1; ++px) {
        double t = 1.0, c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0, a = 0.0;
        std::uint32_t last = 0, used = 0;
        for (std::uint32_t e = begin; e < end; ++e) {
          const ProjectedGaussian& pg = s.projected[s.tile_lists[e]];
          const double dx = pg.mean_x - px;
          const double dy = pg.mean_y - py;
          const double sigma =
              0.5 * (pg.conic_a * dx * dx + pg.conic_c * dy * dy) +
              pg.conic_b * dx * dy;
          if (sigma < 0.0 || sigma > pg.cutoff) continue;
          const double alpha = pg.opacity * std::exp(-sigma);
          if (alpha < opt.alpha_min) continue;
          const double w = alpha * t;
          c0 += pg.color[0] * w;
          c1 += pg.color[1] * w;
          c2 += pg.color[2] * w;
          d += pg.depth * w;
          a += w;
          t *= 1.0 - alpha;
          last = e - begin + 1;
          ++used;
          if (t < opt.transmittance_min) break;
        }
        const std::size_t pix = static_cast<std::size_t>(py) * width + px;
        s.final_transmittance[pix] = t;
        s.processed[pix] = last;
        out.color.at(px, py, 0) = c0;
        out.color.at(px, py, 1) = c1;
        out.color.at(px, py, 2) = c2;
        out.alpha.at(px, py) = a;
        out.depth.at(px, py) = d;
        if (opt.record_contributors) out.contributors[pix] = used;
      }
    }
  });

  s.raw_depth = out.depth;
  s.raw_alpha = out.alpha;
  if (opt.depth_alpha_normalize) {
    auto depth = out.depth.values();
    const auto alpha = out.alpha.values();
    for (std::size_t i = 0; i < depth.size(); ++i) {
      depth[i] = alpha[i] > 0.0 ? depth[i] / alpha[i] : 0.0;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

// Screen-space gradient partials of one tile-list entry.
struct EntryGrad {
  double mean_x = 0.0, mean_y = 0.0;
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
  double opacity = 0.0;
  double color[3] = {0.0, 0.0, 0.0};
  double depth = 0.0;

  void add(const EntryGrad& o) {
    mean_x += o.mean_x;
    mean_y += o.mean_y;
    conic_a += o.conic_a;
    conic_b += o.conic_b;
    conic_c += o.conic_c;
    opacity += o.opacity;
    for (int c = 0; c < 3; ++c) color[c] += o.color[c];
    depth += o.depth;
  }
};

struct Replay {
  std::uint32_t entry;
  double alpha;
  double transmittance;
  double falloff;
  double dx, dy;
};

Vec4 quaternion_backward(const Vec4& raw, const Mat3& g) {
  const double norm = raw.norm();
  const Vec4 q = raw / norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 dq;
  dq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) -
                 y * g(2, 0) + x * g(2, 1));
  dq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) -
                 w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
  dq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) +
                 z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
  dq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                 2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return (dq - q * q.dot(dq)) / norm;
}

}  // namespace

ParamGrads render_backward(const RenderState& s, const GradBuffers& grads) {
  if (s.scene == nullptr || s.scene->fingerprint() != s.fingerprint) {
    throw Error(ErrorCode::StateMismatch,
                "scene changed between render_forward and render_backward");
  }
  const int width = s.view.intrinsics.width;
  const int height = s.view.intrinsics.height;
  if (grads.d_color.width() != width || grads.d_color.height() != height ||
      grads.d_color.channels() != 3 || !grads.d_depth.same_shape(s.raw_depth) ||
      !grads.d_alpha.same_shape(s.raw_depth)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient buffers do not match render");
  }

  const GaussianScene& scene = *s.scene;
  const RenderOptions& opt = s.options;
  const std::size_t tiles = static_cast<std::size_t>(s.tiles_x) * s.tiles_y;
  std::vector<EntryGrad> entry_grads(s.tile_lists.size());
  parallel_for(tiles, [&](std::size_t tile) {
    const TileRange r = tile_range(s, tile);
    const std::uint32_t begin = s.tile_offsets[tile];
    std::vector<Replay> replay;
    for (int py = r.y0; py < r.y1; ++py) {
      for (int px = r.x0; px < r.x1; ++px) {
        const std::size_t pix = static_cast<std::size_t>(py) * width + px;
        const std::uint32_t count = s.processed[pix];
        if (count == 0) continue;

        const double gc[3] = {grads.d_color.at(px, py, 0),
                              grads.d_color.at(px, py, 1),
                              grads.d_color.at(px, py, 2)};
        double gd = grads.d_depth.at(px, py);
        double ga = grads.d_alpha.at(px, py);
        if (opt.depth_alpha_normalize) {
          const double acc = s.raw_alpha.at(px, py);
          if (acc > 0.0) {
            ga -= gd * s.raw_depth.at(px, py) / (acc * acc);
            gd /= acc;
          }
        }
        if (gc[0] == 0.0 && gc[1] == 0.0 && gc[2] == 0.0 && gd == 0.0 && ga == 0.0) {
          continue;
        }

        replay.clear();
        double t = 1.0;
        for (std::uint32_t e = 0; e < count; ++e) {
          const ProjectedGaussian& pg = s.projected[s.tile_lists[begin + e]];
          const double dx = pg.mean_x - px, dy = pg.mean_y - py;
          const double sigma = 0.5 * (pg.conic_a * dx * dx + pg.conic_c * dy * dy) +
                               pg.conic_b * dx * dy;
          if (sigma < 0.0 || sigma > pg.cutoff) continue;
          const double falloff = std::exp(-sigma);
          const double alpha = pg.opacity * falloff;
          if (alpha < opt.alpha_min) continue;
          replay.push_back({e, alpha, t, falloff, dx, dy});
          t *= 1.0 - alpha;
        }

        double back_c[3] = {0.0, 0.0, 0.0};
        double back_d = 0.0, back_a = 0.0;
        for (auto it = replay.rbegin(); it != replay.rend(); ++it) {
          const ProjectedGaussian& pg = s.projected[s.tile_lists[begin + it->entry]];
          EntryGrad& eg = entry_grads[begin + it->entry];
          const double a = it->alpha;
          const double w = a * it->transmittance;

          double d_alpha = 0.0;
          for (int c = 0; c < 3; ++c) {
            eg.color[c] += gc[c] * w;
            d_alpha += gc[c] * (pg.color[c] - back_c[c]);
            back_c[c] = pg.color[c] * a + (1.0 - a) * back_c[c];
          }
          eg.depth += gd * w;
          d_alpha += gd * (pg.depth - back_d) + ga * (1.0 - back_a);
          back_d = pg.depth * a + (1.0 - a) * back_d;
          back_a = a + (1.0 - a) * back_a;
          d_alpha *= it->transmittance;

          eg.opacity += d_alpha * it->falloff;
          const double d_sigma = -d_alpha * a;
          const double dx = it->dx, dy = it->dy;
          eg.mean_x += d_sigma * (pg.conic_a * dx + pg.conic_b * dy);
          eg.mean_y += d_sigma * (pg.conic_b * dx + pg.conic_c * dy);
          eg.conic_a += d_sigma * 0.5 * dx * dx;
          eg.conic_b += d_sigma * dx * dy;
          eg.conic_c += d_sigma * 0.5 * dy * dy;
        }
      }
    }
  });

  // Deterministic merge in tile order.
  const std::size_t n = scene.size();
  std::vector<EntryGrad> per_gaussian(n);
  for (std::size_t e = 0; e < s.tile_lists.size(); ++e) {
    per_gaussian[s.tile_lists[e]].add(entry_grads[e]);
  }

  ParamGrads out = ParamGrads::zeros(scene);
  const Intrinsics& k = s.view.intrinsics;
  const Mat3& r_wc = s.view.pose.rotation();
  const Vec3 center = s.view.pose.camera_center();
  const int coeffs = sh_coeff_count(s.sh_degree);

  parallel_for(n, [&](std::size_t i) {
    const ProjectedGaussian& pg = s.projected[i];
    if (!pg.visible) return;
    out.visible[i] = 1;
    const EntryGrad& eg = per_gaussian[i];
    const Gaussian3D& g = scene.gaussians[i];

    out.mean2d_norm[i] = std::hypot(eg.mean_x * 0.5 * width, eg.mean_y * 0.5 * height);
    out.opacity_logit[i] = eg.opacity * pg.opacity * (1.0 - pg.opacity);

    Vec3 d_mean = Vec3::Zero();

    // Color -> SH coefficients and view direction.
    std::array<double, 16> basis{};
    std::array<Vec3, 16> basis_grad{};
    sh_basis_with_grad(s.sh_degree, pg.view_dir, basis, basis_grad);
    Vec3 d_dir = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      if (pg.color_clamped[ch]) continue;
      const double gcol = eg.color[ch];
      for (int m = 0; m < coeffs; ++m) {
        out.sh[i * out.sh_coeffs + m * 3 + ch] = basis[m] * gcol;
        d_dir += gcol * g.sh[m * 3 + ch] * basis_grad[m];
      }
    }
    if (s.sh_degree > 0) {
      const double vn = (g.mean - center).norm();
      if (vn > 0.0) {
        d_mean += (d_dir - pg.view_dir * pg.view_dir.dot(d_dir)) / vn;
      }
    }

    // Conic -> screen covariance.
    Mat2 conic;
    conic << pg.conic_a, pg.conic_b, pg.conic_b, pg.conic_c;
    Mat2 g_conic;
    g_conic << eg.conic_a, 0.5 * eg.conic_b, 0.5 * eg.conic_b, eg.conic_c;
    const Mat2 g_cov2 = -conic * g_conic * conic;

    const Vec3& p = pg.cam;
    const Mat23 j = projection_jacobian(k, p);
    const Mat23 t = j * r_wc;
    const Mat3 cov3 = compose_covariance(g);

    Mat3 g_cov3 = t.transpose() * g_cov2 * t;
    g_cov3 = 0.5 * (g_cov3 + g_cov3.transpose()).eval();
    const Mat23 g_t = 2.0 * g_cov2 * t * cov3;
    const Mat23 g_j = g_t * r_wc.transpose();

    const double inv_z = 1.0 / p.z();
    const double inv_z2 = inv_z * inv_z;
    const double inv_z3 = inv_z2 * inv_z;
    Vec3 d_cam = Vec3::Zero();
    d_cam.x() += g_j(0, 2) * (-k.fx * inv_z2);
    d_cam.y() += g_j(1, 2) * (-k.fy * inv_z2);
    d_cam.z() += g_j(0, 0) * (-k.fx * inv_z2) + g_j(0, 2) * (2.0 * k.fx * p.x() * inv_z3) +
                 g_j(1, 1) * (-k.fy * inv_z2) + g_j(1, 2) * (2.0 * k.fy * p.y() * inv_z3);
    d_cam += j.transpose() * Vec2(eg.mean_x, eg.mean_y);
    d_cam.z() += eg.depth;
    d_mean += r_wc.transpose() * d_cam;
    out.mean[i] = d_mean;

    // Covariance -> scale and rotation.
    const Mat3 rot = g.rotation_matrix();
    const Vec3 scale = g.scale();
    const Mat3 m = rot * scale.asDiagonal();
    const Mat3 g_m = 2.0 * g_cov3 * m;
    Vec3 d_log_scale;
    for (int c = 0; c < 3; ++c) {
      d_log_scale[c] = scale[c] * g_m.col(c).dot(rot.col(c));
    }
    out.log_scale[i] = d_log_scale;
    const Mat3 g_rot = g_m * scale.asDiagonal();
    out.rotation[i] = quaternion_backward(g.rotation, g_rot);
  });
  return out;
}

}  // namespace fewview
