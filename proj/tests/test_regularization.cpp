#include <doctest.h>

#include <cmath>
#include <random>

#include "fewview/error.hpp"
#include "fewview/regularization.hpp"
#include "support/oracles.hpp"

using namespace fewview;
using namespace fewview::testing;

namespace {

// Direct windowed SSIM with explicit zero padding, one pixel at a time.
double naive_ssim(const Image& a, const Image& b) {
  const int r = kSsimWindow / 2;
  std::vector<double> w(kSsimWindow);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += w[i + r] = std::exp(-i * i / (2 * kSsimSigma * kSsimSigma));
  for (double& v : w) v /= s;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < a.height(); ++y) {
      for (int x = 0; x < a.width(); ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= a.width() || yy >= a.height()) continue;
            const double k = w[dx + r] * w[dy + r];
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        total += ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
                 ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
      }
    }
  }
  return total / static_cast<double>(a.values().size());
}

Gaussian3D colored(const Vec3& mean, const Vec3& color) {
  Gaussian3D g;
  g.mean = mean;
  for (int c = 0; c < 3; ++c) g.sh[c] = (color[c] - 0.5) / kShC0;
  return g;
}

GaussianScene random_colored_scene(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> pos(-1.0, 1.0), col(0.1, 0.9), logit_d(-2.0, 2.0);
  GaussianScene s;
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian3D g = colored(Vec3(pos(rng), pos(rng), pos(rng)), Vec3(col(rng), col(rng), col(rng)));
    g.opacity_logit = logit_d(rng);
    s.gaussians.push_back(g);
  }
  s.reset_stats();
  return s;
}

}  // namespace

TEST_CASE("ssim agrees with a direct windowed oracle") {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 17, 13, 3), b = random_image(rng, 17, 13, 3);
  CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-10));
  CHECK(ssim_with_grad(a, b).value == doctest::Approx(ssim(a, b)).epsilon(1e-12));
}

TEST_CASE("photometric loss of identical images is zero and SSIM is one") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    const Image x = random_image(rng, 14, 10, 3);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(photometric_loss(x, x).loss) < 1e-12);
  }
}

TEST_CASE("constant images offset by 0.1 give L1 of 0.1") {
  const Image a(8, 8, 3, 0.6), b(8, 8, 3, 0.5);
  CHECK(photometric_loss(a, b, 0.0).loss == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("photometric loss shape mismatch") {
  CHECK_THROWS_AS(photometric_loss(Image(4, 4, 3), Image(4, 5, 3)), Error);
}

TEST_CASE("photometric gradient matches finite differences") {
  std::mt19937_64 rng(4);
  const Image x = random_image(rng, 12, 12, 3, 0.1, 0.9);
  const Image target = random_image(rng, 12, 12, 3);
  const PhotometricLoss p = photometric_loss(x, target);
  std::vector<double> flat(x.values().begin(), x.values().end());
  auto f = [&](const std::vector<double>& v) {
    Image y(12, 12, 3);
    std::copy(v.begin(), v.end(), y.values().begin());
    return photometric_loss(y, target).loss;
  };
  const auto fd = central_difference(f, flat, 1e-6);
  int bad = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    // Skip entries whose L1 kink lies inside the FD stencil.
    if (std::abs(flat[i] - target.values()[i]) < 1e-5) continue;
    if (rel_error(p.grad.values()[i], fd[i], 1e-6) > 1e-3) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("opacity loss examples and gradient") {
  GaussianScene s;
  s.gaussians.resize(2);
  s.gaussians[0].opacity_logit = 60.0;
  s.gaussians[1].opacity_logit = -60.0;
  CHECK(opacity_loss(s).loss == doctest::Approx(0.5).epsilon(1e-12));
  s.gaussians[0].opacity_logit = -60.0;
  CHECK(opacity_loss(s).loss < 1e-40);
  CHECK_THROWS_AS(opacity_loss(GaussianScene{}), Error);

  std::mt19937_64 rng(6);
  GaussianScene r = random_colored_scene(rng, 20);
  const SceneLoss l = opacity_loss(r);
  std::vector<double> x;
  for (const auto& g : r.gaussians) x.push_back(g.opacity_logit);
  auto f = [&](const std::vector<double>& v) {
    GaussianScene c = r;
    for (std::size_t i = 0; i < v.size(); ++i) c.gaussians[i].opacity_logit = v[i];
    return opacity_loss(c).loss;
  };
  const auto fd = central_difference(f, x, 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(rel_error(l.grads.opacity_logit[i], fd[i], 1e-8) <= 1e-3);
}

TEST_CASE("locality loss worked example") {
  GaussianScene s;
  s.gaussians = {colored(Vec3(0, 0, 0), Vec3(0.5, 0.5, 0.5)),
                 colored(Vec3(1, 0, 0), Vec3(0.8, 0.9, 0.5))};
  s.reset_stats();
  const Neighbors nb = knn_neighbors(s, 1);
  // Each Gaussian has the other as its only neighbor: two equal pair terms over N*K = 2.
  CHECK(locality_loss(s, nb, 2.0).loss == doctest::Approx(std::exp(-2.0) * 0.5).epsilon(1e-12));
  CHECK(std::exp(-2.0) * 0.5 == doctest::Approx(0.067668).epsilon(1e-5));
}

TEST_CASE("locality loss is zero for identical colors and non-negative otherwise") {
  std::mt19937_64 rng(8);
  GaussianScene s = random_colored_scene(rng, 30);
  const Neighbors nb = knn_neighbors(s, 4);
  CHECK(locality_loss(s, nb).loss > 0.0);
  for (auto& g : s.gaussians) g.sh = {0.3, -0.1, 0.2};
  const SceneLoss z = locality_loss(s, nb);
  CHECK(z.loss == 0.0);
  CHECK(z.grads.max_abs() == 0.0);
}

TEST_CASE("locality loss is invariant under rigid motion") {
  std::mt19937_64 rng(10);
  GaussianScene s = random_colored_scene(rng, 40);
  const Neighbors nb = knn_neighbors(s, 4);
  const double base = locality_loss(s, nb).loss;
  const Mat3 R = quaternion_to_matrix(Vec4(0.8, 0.1, -0.3, 0.5));
  const Vec3 t(3.0, -1.0, 0.5);
  GaussianScene m = s;
  for (auto& g : m.gaussians) g.mean = R * g.mean + t;
  CHECK(locality_loss(m, nb).loss == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("increasing a color difference strictly increases locality loss") {
  GaussianScene s;
  s.gaussians = {colored(Vec3(0, 0, 0), Vec3(0.5, 0.5, 0.5)),
                 colored(Vec3(0.5, 0, 0), Vec3(0.6, 0.5, 0.5)),
                 colored(Vec3(0, 0.7, 0), Vec3(0.4, 0.4, 0.5))};
  s.reset_stats();
  const Neighbors nb = knn_neighbors(s, 2);
  double prev = locality_loss(s, nb).loss;
  for (int step = 1; step <= 5; ++step) {
    s.gaussians[1].sh[0] += 0.1;
    const double cur = locality_loss(s, nb).loss;
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("locality gradient matches finite differences") {
  std::mt19937_64 rng(12);
  GaussianScene s = random_colored_scene(rng, 25);
  const Neighbors nb = knn_neighbors(s, 4);
  for (bool detach : {false, true}) {
    const SceneLoss l = locality_loss(s, nb, 2.0, detach);
    std::vector<double> x;
    for (const auto& g : s.gaussians) {
      for (int c = 0; c < 3; ++c) x.push_back(g.mean[c]);
      for (int c = 0; c < 3; ++c) x.push_back(g.sh[c]);
    }
    auto f = [&](const std::vector<double>& v) {
      GaussianScene c = s;
      for (std::size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
          c.gaussians[i].mean[k] = v[i * 6 + k];
          c.gaussians[i].sh[k] = v[i * 6 + 3 + k];
        }
      }
      return locality_loss(c, nb, 2.0).loss;
    };
    const auto fd = central_difference(f, x, 1e-6);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        const double g_mean = detach ? 0.0 : l.grads.mean[i][k];
        if (!detach) CHECK(rel_error(g_mean, fd[i * 6 + k], 1e-7) <= 1e-3);
        if (detach) CHECK(l.grads.mean[i][k] == 0.0);
        CHECK(rel_error(l.grads.sh[i * 3 + k], fd[i * 6 + 3 + k], 1e-7) <= 1e-3);
      }
    }
  }
}

TEST_CASE("locality loss rejects stale neighbors") {
  std::mt19937_64 rng(14);
  GaussianScene s = random_colored_scene(rng, 10);
  const Neighbors nb = knn_neighbors(s, 4);
  s.gaussians.pop_back();
  try {
    locality_loss(s, nb);
    FAIL("expected StaleNeighbors");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StaleNeighbors);
  }
}
