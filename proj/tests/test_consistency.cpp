#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fewview/consistency.hpp"
#include "fewview/error.hpp"
#include "fewview/features.hpp"
#include "support/oracles.hpp"

using namespace fewview;
using namespace fewview::testing;

namespace {

CameraView view_at(const Vec3& center, double yaw, int size = 48) {
  CameraView v;
  v.intrinsics = {40.0, 40.0, (size - 1) / 2.0, (size - 1) / 2.0, size, size};
  const Mat3 r_c2w = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix();
  v.pose = Pose(Mat3(r_c2w.transpose()), Vec3(-r_c2w.transpose() * center));
  return v;
}

MatchSet random_matches(std::mt19937_64& rng, std::size_t n, int size) {
  std::uniform_real_distribution<double> c(4.0, size - 5.0);
  MatchSet s{0, 1, {}};
  for (std::size_t k = 0; k < n; ++k) s.matches.push_back({Vec2(c(rng), c(rng)), Vec2(c(rng), c(rng)), 1.0});
  return s;
}

MatchDepths constant_depths(std::size_t n, double zi, double zj) {
  return {std::vector<double>(n, zi), std::vector<double>(n, zj), std::vector<std::uint8_t>(n, 1)};
}

WarpedMatch synthetic(const Vec2& p, double zi, double zj) {
  WarpedMatch m;
  m.pixel = m.pixel_i = m.pixel_j = p;
  m.warped_depth_i = zi;
  m.warped_depth_j = zj;
  m.mask = true;
  return m;
}

RenderBuffers constant_render(int size, double depth, const Vec3& color) {
  RenderBuffers b;
  b.depth = Image(size, size, 1, depth);
  b.alpha = Image(size, size, 1, 1.0);
  b.color = Image(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) b.color.at(x, y, c) = color[c];
    }
  }
  return b;
}

double naive_sobel_magnitude(const Image& gray, int x, int y) {
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  double gx = 0, gy = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = std::clamp(x + dx, 0, gray.width() - 1);
      const int yy = std::clamp(y + dy, 0, gray.height() - 1);
      gx += kx[dy + 1][dx + 1] * gray.at(xx, yy);
      gy += ky[dy + 1][dx + 1] * gray.at(xx, yy);
    }
  }
  return std::min(1.0, std::sqrt(gx * gx + gy * gy) / 4.0);
}

}  // namespace

TEST_CASE("identity warp reproduces the source pixel and depth") {
  std::mt19937_64 rng(1);
  const CameraView vi = view_at(Vec3(0.3, -0.1, -4.0), 0.2);
  const CameraView vj = view_at(Vec3(-0.5, 0.0, -4.0), -0.1);
  const MatchSet ms = random_matches(rng, 30, 48);
  std::uniform_real_distribution<double> z(2.0, 6.0);
  MatchDepths d = constant_depths(30, 0, 0);
  for (std::size_t k = 0; k < 30; ++k) {
    d.depth_i[k] = z(rng);
    d.depth_j[k] = z(rng);
  }
  ConsistencyWeights w;
  w.theta_g = w.theta_px = std::numeric_limits<double>::infinity();
  const WarpResult r = warp_matches(ms, d, vi, vj, vi, {}, w);
  for (const WarpedMatch& m : r.warped) {
    CHECK((m.pixel_i - m.source_i).norm() <= 1e-9);
    CHECK(std::abs(m.warped_depth_i - m.depth_i) <= 1e-9);
  }
  CHECK(r.warped.size() + r.out_of_bounds + r.behind_camera == 30);
}

TEST_CASE("translation along the optical axis reduces warped depth") {
  const CameraView vi = view_at(Vec3(0, 0, -5), 0.0);
  for (double delta : {0.5, 1.0, 2.5}) {
    const CameraView vk = view_at(Vec3(0, 0, -5 + delta), 0.0);
    const Vec2 center(vi.intrinsics.cx, vi.intrinsics.cy);
    MatchSet ms{0, 1, {{center, center, 1.0}}};
    const WarpResult r = warp_matches(ms, constant_depths(1, 4.0, 4.0), vi, vi, vk, {}, {});
    REQUIRE(r.warped.size() == 1);
    CHECK(r.warped[0].warped_depth_i == doctest::Approx(4.0 - delta).epsilon(1e-12));
    CHECK((r.warped[0].pixel_i - center).norm() <= 1e-9);
  }
}

TEST_CASE("warp agrees with a homogeneous lift-transform-project oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> z(3.0, 6.0), ang(-0.3, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraView vi = view_at(Vec3(ang(rng), ang(rng), -4.0), ang(rng));
    const CameraView vj = view_at(Vec3(ang(rng), ang(rng), -4.0), ang(rng));
    const CameraView vk = view_at(Vec3(ang(rng), ang(rng), -4.0), ang(rng));
    const MatchSet ms = random_matches(rng, 20, 48);
    MatchDepths d = constant_depths(20, 0, 0);
    for (std::size_t k = 0; k < 20; ++k) {
      d.depth_i[k] = z(rng);
      d.depth_j[k] = z(rng);
    }
    const WarpResult r = warp_matches(ms, d, vi, vj, vk, {}, {});
    for (const WarpedMatch& m : r.warped) {
      const Intrinsics& K = vi.intrinsics;
      const Vec3 ray((m.source_i.x() - K.cx) / K.fx, (m.source_i.y() - K.cy) / K.fy, 1.0);
      const Vec4 cam_i(ray.x() * m.depth_i, ray.y() * m.depth_i, m.depth_i, 1.0);
      const Vec4 world = vi.pose.camera_to_world() * cam_i;
      const Vec2 oracle = homogeneous_project(vk, world.head<3>());
      CHECK((oracle - m.pixel_i).norm() <= 1e-6);
      CHECK((vk.pose.world_to_camera() * world).z() == doctest::Approx(m.warped_depth_i).epsilon(1e-9));
    }
  }
}

TEST_CASE("agreement mask") {
  CHECK(agreement_mask(3.0, 3.0, 1e-9));
  CHECK_FALSE(agreement_mask(1.0, 5.0, 3.0));
  CHECK_FALSE(agreement_mask(1.0, 4.0, 3.0));
  CHECK(ConsistencyWeights{}.theta_g == 10.0);
  const Image a(2, 1, 1, 1.0);
  Image b(2, 1, 1, 1.0);
  b.at(1, 0) = 5.0;
  const Image m = agreement_mask(a, b, 3.0);
  CHECK(m.at(0, 0) == 1.0);
  CHECK(m.at(1, 0) == 0.0);
}

TEST_CASE("gradient weight") {
  CHECK(gradient_weight(0.05, 0.1) == 1.0);
  CHECK(gradient_weight(0.5, 0.1) == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(gradient_weight(0.1, 0.1) == 1.0);
  CHECK(ConsistencyWeights{}.theta_grad == 0.1);
}

TEST_CASE("sobel gradient magnitude") {
  CHECK(sobel_gradient_magnitude(Image(9, 7, 3, 0.4)).values()[5] == 0.0);
  Image step(10, 6, 3, 0.0);
  for (int y = 0; y < 6; ++y) {
    for (int x = 5; x < 10; ++x) {
      for (int c = 0; c < 3; ++c) step.at(x, y, c) = 1.0;
    }
  }
  const Image g = sobel_gradient_magnitude(step);
  for (int y = 0; y < 6; ++y) {
    CHECK(g.at(4, y) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.at(5, y) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.at(2, y) == 0.0);
  }
  std::mt19937_64 rng(9);
  const Image img = random_image(rng, 15, 11, 3);
  const Image gray = to_gray(img);
  const Image s = sobel_gradient_magnitude(img);
  for (int y = 0; y < 11; ++y) {
    for (int x = 0; x < 15; ++x) {
      CHECK(std::abs(s.at(x, y) - naive_sobel_magnitude(gray, x, y)) <= 1e-7);
      CHECK(s.at(x, y) >= 0.0);
      CHECK(s.at(x, y) <= 1.0);
    }
  }
}

TEST_CASE("consistency loss is zero when everything agrees") {
  const RenderBuffers r = constant_render(16, 3.0, Vec3(0.2, 0.4, 0.6));
  WarpedMatch m = synthetic(Vec2(5.5, 7.25), 3.0, 3.0);
  m.color_i = m.color_j = Vec3(0.2, 0.4, 0.6);
  const ConsistencyLoss l = consistency_loss({m, m}, r, nullptr, {});
  CHECK(l.loss == doctest::Approx(0.0));
  CHECK(l.surviving == 2);
}

TEST_CASE("min rule picks the closer depth and its image's weight") {
  const RenderBuffers r = constant_render(16, 3.0, Vec3(0.5, 0.5, 0.5));
  WarpedMatch m = synthetic(Vec2(6, 6), 3.2, 3.5);
  m.color_i = m.color_j = Vec3(0.5, 0.5, 0.5);
  m.weight_i = 0.25;
  m.weight_j = 1.0;
  ConsistencyLoss l = consistency_loss({m}, r, nullptr, {});
  CHECK(l.geom == doctest::Approx(0.25 * 0.2).epsilon(1e-12));
  // Swap the sides: selector and weight follow the winner.
  std::swap(m.warped_depth_i, m.warped_depth_j);
  l = consistency_loss({m}, r, nullptr, {});
  CHECK(l.geom == doctest::Approx(1.0 * 0.2).epsilon(1e-12));
  // Color term chooses independently of the depth term.
  m.color_i = Vec3(0.5, 0.5, 0.9);
  m.color_j = Vec3(0.5, 0.5, 0.6);
  l = consistency_loss({m}, r, nullptr, {});
  CHECK(l.color == doctest::Approx(1.0 * 0.1).epsilon(1e-12));
  m.weight_j = 0.5;
  l = consistency_loss({m}, r, nullptr, {});
  CHECK(l.color == doctest::Approx(0.5 * 0.1).epsilon(1e-12));
  CHECK(l.geom == doctest::Approx(0.5 * 0.2).epsilon(1e-12));
}

TEST_CASE("geometry term is monotone in the selected residual") {
  const RenderBuffers r = constant_render(16, 3.0, Vec3(0.5, 0.5, 0.5));
  double prev = -1.0;
  for (double off = 0.0; off < 2.0; off += 0.1) {
    const ConsistencyLoss l = consistency_loss({synthetic(Vec2(4, 9), 3.0 + off, 9.0)}, r, nullptr, {});
    CHECK(l.geom >= prev);
    prev = l.geom;
  }
}

TEST_CASE("mask soundness") {
  const CameraView vi = view_at(Vec3(0.2, 0, -4.0), 0.05), vj = view_at(Vec3(-0.2, 0, -4.0), -0.05);
  const CameraView vk = view_at(Vec3(0, 0, -4.0), 0.0);
  std::mt19937_64 rng(17);
  const MatchSet ms = random_matches(rng, 40, 48);
  MatchDepths d = constant_depths(40, 0, 0);
  std::uniform_real_distribution<double> z(3.0, 5.0);
  for (std::size_t k = 0; k < 40; ++k) {
    d.depth_i[k] = z(rng);
    d.depth_j[k] = (k % 4 == 0) ? d.depth_i[k] : z(rng);
  }
  ConsistencyWeights w;
  w.theta_g = w.theta_px = std::numeric_limits<double>::infinity();
  const WarpResult all = warp_matches(ms, d, vi, vj, vk, {}, w);
  CHECK(all.masked == 0);
  CHECK(all.warped.size() == 40 - all.out_of_bounds - all.behind_camera);
  w.theta_g = 0.0;
  const WarpResult none = warp_matches(ms, d, vi, vj, vk, {}, w);
  for (const WarpedMatch& m : none.warped) CHECK(m.mask == (m.warped_depth_i == m.warped_depth_j));
}

TEST_CASE("no surviving matches") {
  WarpedMatch m = synthetic(Vec2(3, 3), 1, 1);
  m.mask = false;
  try {
    consistency_loss({m}, constant_render(8, 1.0, Vec3::Zero()), nullptr, {});
    FAIL("expected NoSurvivingMatches");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoSurvivingMatches);
  }
}

TEST_CASE("consistency gradient matches finite differences on the novel buffers") {
  std::mt19937_64 rng(23);
  const int size = 12;
  std::uniform_real_distribution<double> pix(0.5, size - 1.5), zz(2.0, 4.0), cc(0.0, 1.0), ww(0.3, 1.0);
  RenderBuffers r;
  r.depth = random_image(rng, size, size, 1, 2.0, 4.0);
  r.color = random_image(rng, size, size, 3);
  r.alpha = Image(size, size, 1, 1.0);
  FeatureMap f{random_image(rng, size, size, 4), "filterbank"};
  std::vector<WarpedMatch> warped;
  for (int k = 0; k < 10; ++k) {
    WarpedMatch m = synthetic(Vec2(pix(rng), pix(rng)), zz(rng), zz(rng));
    m.color_i = Vec3(cc(rng), cc(rng), cc(rng));
    m.color_j = Vec3(cc(rng), cc(rng), cc(rng));
    m.weight_i = ww(rng);
    m.weight_j = ww(rng);
    for (int c = 0; c < 4; ++c) {
      m.feature_i.push_back(cc(rng));
      m.feature_j.push_back(cc(rng));
    }
    warped.push_back(m);
  }
  ConsistencyWeights w;
  w.gamma = 0.3;
  const ConsistencyLoss base = consistency_loss(warped, r, &f, w);

  auto check_image = [&](Image& img, const Image& grad) {
    std::vector<double> x(img.values().begin(), img.values().end());
    auto fn = [&](const std::vector<double>& v) {
      std::copy(v.begin(), v.end(), img.values().begin());
      const double l = consistency_loss(warped, r, &f, w).loss;
      std::copy(x.begin(), x.end(), img.values().begin());
      return l;
    };
    const auto fd = central_difference(fn, x, 1e-6);
    int bad = 0;
    for (std::size_t i = 0; i < x.size(); ++i) bad += rel_error(grad.values()[i], fd[i], 1e-7) > 1e-3;
    CHECK(bad == 0);
  };
  check_image(r.depth, base.grads.d_depth);
  check_image(r.color, base.grads.d_color);
  check_image(f.data, base.feature_grad);
}

TEST_CASE("gradients do not depend on how the warped constants were produced") {
  std::mt19937_64 rng(29);
  const CameraView vi = view_at(Vec3(0.2, 0, -4.0), 0.05), vj = view_at(Vec3(-0.2, 0, -4.0), -0.05);
  const CameraView vk = view_at(Vec3(0, 0, -4.0), 0.0);
  const GaussianScene scene = random_scene(rng, vk, 40, 0);
  const GaussianScene clone = scene;
  const RenderResult ri = render_forward(scene, vi), rj = render_forward(scene, vj);
  const RenderResult ci = render_forward(clone, vi), cj = render_forward(clone, vj);
  const RenderResult novel = render_forward(scene, vk);
  const MatchSet ms = random_matches(rng, 60, 48);
  ConsistencyWeights w;
  w.theta_g = w.theta_px = std::numeric_limits<double>::infinity();
  const WarpSources src_a{&ri.buffers.color, &rj.buffers.color};
  const WarpSources src_b{&ci.buffers.color, &cj.buffers.color};
  const WarpResult a = warp_matches(ms, sample_match_depths(ms, ri.buffers, rj.buffers, 0.0), vi, vj, vk, src_a, w);
  const WarpResult b = warp_matches(ms, sample_match_depths(ms, ci.buffers, cj.buffers, 0.0), vi, vj, vk, src_b, w);
  REQUIRE(a.surviving() > 0);
  const ConsistencyLoss la = consistency_loss(a.warped, novel.buffers, nullptr, w);
  const ConsistencyLoss lb = consistency_loss(b.warped, novel.buffers, nullptr, w);
  CHECK(la.loss == lb.loss);
  CHECK(la.grads.d_depth.storage() == lb.grads.d_depth.storage());
  CHECK(la.grads.d_color.storage() == lb.grads.d_color.storage());
}
