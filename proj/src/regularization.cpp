#include "fewview/regularization.hpp"

#include <array>
#include <cmath>

#include "fewview/error.hpp"
#include "fewview/filters.hpp"

namespace fewview {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& ssim_kernel() {
  static const std::vector<double> k = gaussian_kernel(kSsimSigma, kSsimWindow / 2);
  return k;
}

Image product(const Image& a, const Image& b) {
  Image out(a.width(), a.height(), a.channels());
  for (std::size_t i = 0; i < out.values().size(); ++i) {
    out.values()[i] = a.values()[i] * b.values()[i];
  }
  return out;
}

void check_shapes(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeMismatch, "image shapes differ");
}

}  // namespace

SsimGrad ssim_with_grad(const Image& a, const Image& b) {
  check_shapes(a, b);
  const auto& k = ssim_kernel();
  const Image mu_a = blur_zero(a, k), mu_b = blur_zero(b, k);
  const Image e_aa = blur_zero(product(a, a), k);
  const Image e_bb = blur_zero(product(b, b), k);
  const Image e_ab = blur_zero(product(a, b), k);

  const std::size_t n = a.values().size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Image g_mu(a.width(), a.height(), a.channels());
  Image g_eaa(a.width(), a.height(), a.channels());
  Image g_eab(a.width(), a.height(), a.channels());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.values()[i], mb = mu_b.values()[i];
    const double var_a = e_aa.values()[i] - ma * ma;
    const double var_b = e_bb.values()[i] - mb * mb;
    const double cov = e_ab.values()[i] - ma * mb;
    const double a1 = 2.0 * ma * mb + kC1, a2 = 2.0 * cov + kC2;
    const double b1 = ma * ma + mb * mb + kC1, b2 = var_a + var_b + kC2;
    const double s = (a1 * a2) / (b1 * b2);
    sum += s;
    g_eab.values()[i] = inv_n * s * 2.0 / a2;
    g_eaa.values()[i] = -inv_n * s / b2;
    g_mu.values()[i] =
        inv_n * s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
  }

  SsimGrad out;
  out.value = sum * inv_n;
  const Image bg_mu = blur_zero(g_mu, k);
  const Image bg_eaa = blur_zero(g_eaa, k);
  const Image bg_eab = blur_zero(g_eab, k);
  out.grad = Image(a.width(), a.height(), a.channels());
  for (std::size_t i = 0; i < n; ++i) {
    out.grad.values()[i] = bg_mu.values()[i] + 2.0 * a.values()[i] * bg_eaa.values()[i] +
                           b.values()[i] * bg_eab.values()[i];
  }
  return out;
}

double ssim(const Image& a, const Image& b) {
  check_shapes(a, b);
  const auto& k = ssim_kernel();
  const Image mu_a = blur_zero(a, k), mu_b = blur_zero(b, k);
  const Image e_aa = blur_zero(product(a, a), k);
  const Image e_bb = blur_zero(product(b, b), k);
  const Image e_ab = blur_zero(product(a, b), k);
  double sum = 0.0;
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.values()[i], mb = mu_b.values()[i];
    const double var_a = e_aa.values()[i] - ma * ma;
    const double var_b = e_bb.values()[i] - mb * mb;
    const double cov = e_ab.values()[i] - ma * mb;
    sum += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
           ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
  }
  return sum / static_cast<double>(n);
}

PhotometricLoss photometric_loss(const Image& rendered, const Image& target,
                                 double lambda_ssim) {
  check_shapes(rendered, target);
  PhotometricLoss out;
  const std::size_t n = rendered.values().size();
  out.grad = Image(rendered.width(), rendered.height(), rendered.channels());
  const double w_l1 = (1.0 - lambda_ssim) / static_cast<double>(n);
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rendered.values()[i] - target.values()[i];
    l1 += std::abs(d);
    out.grad.values()[i] = d > 0.0 ? w_l1 : (d < 0.0 ? -w_l1 : 0.0);
  }
  out.l1 = l1 / static_cast<double>(n);
  if (lambda_ssim != 0.0) {
    const SsimGrad s = ssim_with_grad(rendered, target);
    out.ssim = s.value;
    for (std::size_t i = 0; i < n; ++i) out.grad.values()[i] -= lambda_ssim * s.grad.values()[i];
  } else {
    out.ssim = ssim(rendered, target);
  }
  out.loss = (1.0 - lambda_ssim) * out.l1 + lambda_ssim * (1.0 - out.ssim);
  return out;
}

SceneLoss opacity_loss(const GaussianScene& scene) {
  if (scene.empty()) throw Error(ErrorCode::EmptyScene, "opacity loss on empty scene");
  SceneLoss out{0.0, ParamGrads::zeros(scene)};
  const double inv_n = 1.0 / static_cast<double>(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const double o = scene.gaussians[i].opacity();
    out.loss += o * o * inv_n;
    out.grads.opacity_logit[i] = 2.0 * o * inv_n * o * (1.0 - o);
  }
  return out;
}

SceneLoss locality_loss(const GaussianScene& scene, const Neighbors& nb,
                        double delta, bool detach_means) {
  if (nb.scene_size != scene.size() || nb.indices.size() != scene.size() * nb.k) {
    throw Error(ErrorCode::StaleNeighbors, "neighbors computed for a different scene");
  }
  SceneLoss out{0.0, ParamGrads::zeros(scene)};
  if (scene.empty() || nb.k == 0) return out;
  const std::size_t n = scene.size();
  const double norm = 1.0 / (static_cast<double>(n) * nb.k);

  std::vector<Vec3> colors(n);
  std::vector<std::array<bool, 3>> clamped(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 raw = eval_sh_color_unclamped(scene.gaussians[i], Vec3::UnitZ(), 0);
    for (int c = 0; c < 3; ++c) clamped[i][c] = raw[c] < 0.0;
    colors[i] = raw.cwiseMax(0.0);
  }

  std::vector<Vec3> d_color(n, Vec3::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    const int* row = nb.of(i);
    for (int m = 0; m < nb.k; ++m) {
      const std::size_t k = static_cast<std::size_t>(row[m]);
      const Vec3 dmu = scene.gaussians[k].mean - scene.gaussians[i].mean;
      const double dist = dmu.norm();
      const double w = std::exp(-delta * dist);
      const Vec3 dc = colors[k] - colors[i];
      const double e = dc.norm();
      out.loss += norm * w * e;
      if (e > 0.0) {
        const Vec3 g = norm * w * dc / e;
        d_color[k] += g;
        d_color[i] -= g;
        if (!detach_means && dist > 0.0) {
          const Vec3 gm = -norm * delta * w * e * dmu / dist;
          out.grads.mean[k] += gm;
          out.grads.mean[i] -= gm;
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      if (!clamped[i][c]) out.grads.sh[i * out.grads.sh_coeffs + c] = kShC0 * d_color[i][c];
    }
  }
  return out;
}

}  // namespace fewview
