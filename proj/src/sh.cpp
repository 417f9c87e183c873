#include "fewview/sh.hpp"

namespace fewview {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                           0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,
                           -0.4570457994644658, 0.3731763325901154,
                           -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

}  // namespace

void sh_basis(int degree, const Vec3& dir, std::array<double, 16>& b) {
  b[0] = kShC0;
  if (degree < 1) return;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  b[1] = -kC1 * y;
  b[2] = kC1 * z;
  b[3] = -kC1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  b[4] = kC2[0] * x * y;
  b[5] = kC2[1] * y * z;
  b[6] = kC2[2] * (2.0 * zz - xx - yy);
  b[7] = kC2[3] * x * z;
  b[8] = kC2[4] * (xx - yy);
  if (degree < 3) return;
  b[9] = kC3[0] * y * (3.0 * xx - yy);
  b[10] = kC3[1] * x * y * z;
  b[11] = kC3[2] * y * (4.0 * zz - xx - yy);
  b[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  b[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  b[14] = kC3[5] * z * (xx - yy);
  b[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_with_grad(int degree, const Vec3& dir, std::array<double, 16>& b,
                        std::array<Vec3, 16>& g) {
  sh_basis(degree, dir, b);
  g[0].setZero();
  if (degree < 1) return;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  g[1] = Vec3(0.0, -kC1, 0.0);
  g[2] = Vec3(0.0, 0.0, kC1);
  g[3] = Vec3(-kC1, 0.0, 0.0);
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  g[4] = kC2[0] * Vec3(y, x, 0.0);
  g[5] = kC2[1] * Vec3(0.0, z, y);
  g[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
  g[7] = kC2[3] * Vec3(z, 0.0, x);
  g[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
  if (degree < 3) return;
  g[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
  g[10] = kC3[1] * Vec3(y * z, x * z, x * y);
  g[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
  g[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
  g[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
  g[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
  g[15] = kC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

}  // namespace fewview
