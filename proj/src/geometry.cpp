#include "fewview/geometry.hpp"

#include <cmath>

#include "fewview/error.hpp"

namespace fewview {

bool Intrinsics::valid() const noexcept {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
         cx < width && cy >= 0.0 && cy < height;
}

Pose::Pose(const Eigen::Quaterniond& rotation, const Vec3& translation)
    : quat_(rotation.normalized()), translation_(translation) {
  rotation_ = quat_.toRotationMatrix();
}

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : quat_(Eigen::Quaterniond(rotation).normalized()),
      translation_(translation) {
  rotation_ = quat_.toRotationMatrix();
}

Pose Pose::from_camera_to_world(const Mat4& c2w) {
  const Mat3 r_cw = c2w.topLeftCorner<3, 3>();
  const Vec3 center = c2w.topRightCorner<3, 1>();
  const Mat3 r_wc = r_cw.transpose();
  Pose pose(r_wc, Vec3::Zero());
  // Translation from the re-orthonormalized rotation so that
  // camera_center() reproduces the file's center.
  pose.translation_ = -pose.rotation_ * center;
  return pose;
}

Mat4 Pose::world_to_camera() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Mat4 Pose::camera_to_world() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_.transpose();
  m.topRightCorner<3, 1>() = camera_center();
  return m;
}

bool Pose::valid(double tol) const {
  const double orth = (rotation_ * rotation_.transpose() - Mat3::Identity())
                          .cwiseAbs()
                          .maxCoeff();
  return orth <= tol && std::abs(rotation_.determinant() - 1.0) <= tol &&
         std::abs(quat_.norm() - 1.0) <= tol;
}

bool CameraView::valid() const noexcept {
  return intrinsics.valid() && near > 0.0 && near < far;
}

Projection project_point(const CameraView& view, const Vec3& point_world) {
  const Vec3 p = view.pose.apply(point_world);
  if (p.z() <= kMinDepth) {
    throw Error(ErrorCode::NonPositiveDepth,
                "point projects to non-positive camera depth");
  }
  const Intrinsics& k = view.intrinsics;
  return {Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy),
          p.z()};
}

Vec3 unproject_pixel(const CameraView& view, const Vec2& pixel, double depth,
                     bool check_bounds) {
  if (depth <= kMinDepth) {
    throw Error(ErrorCode::NonPositiveDepth, "unproject with depth <= 0");
  }
  const Intrinsics& k = view.intrinsics;
  if (check_bounds && (pixel.x() < 0.0 || pixel.y() < 0.0 ||
                       pixel.x() > k.width - 1.0 || pixel.y() > k.height - 1.0)) {
    throw Error(ErrorCode::DimensionMismatch, "pixel outside image bounds");
  }
  const Vec3 cam((pixel.x() - k.cx) / k.fx * depth,
                 (pixel.y() - k.cy) / k.fy * depth, depth);
  return view.pose.inverse_apply(cam);
}

Mat23 projection_jacobian(const Intrinsics& intr, const Vec3& p) {
  const double inv_z = 1.0 / p.z();
  const double inv_z2 = inv_z * inv_z;
  Mat23 j;
  j << intr.fx * inv_z, 0.0, -intr.fx * p.x() * inv_z2,  //
      0.0, intr.fy * inv_z, -intr.fy * p.y() * inv_z2;
  return j;
}

Mat2 splat_cov2d(const CameraView& view, const Vec3& mean_world,
                 const Mat3& cov_world) {
  const Vec3 p = view.pose.apply(mean_world);
  if (p.z() <= kMinDepth || p.z() <= view.near) {
    throw Error(ErrorCode::NonPositiveDepth,
                "Gaussian mean is not in front of the near plane");
  }
  const Mat23 j = projection_jacobian(view.intrinsics, p);
  const Mat3& r = view.pose.rotation();
  const Mat23 t = j * r;
  Mat2 cov = t * cov_world * t.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kCovarianceFloor;
  cov(1, 1) += kCovarianceFloor;
  return cov;
}

Pose sample_intermediate_pose(const Pose& pose_i, const Pose& pose_j, double t) {
  if (t <= 0.0) return pose_i;
  if (t >= 1.0) return pose_j;

  const Eigen::Quaterniond& qa = pose_i.quaternion();
  Eigen::Quaterniond qb = pose_j.quaternion();
  double cos_theta = qa.dot(qb);
  if (cos_theta < 0.0) {
    qb.coeffs() = -qb.coeffs();
    cos_theta = -cos_theta;
  }
  Eigen::Quaterniond q;
  if (cos_theta > 1.0 - 1e-12) {
    q.coeffs() = (1.0 - t) * qa.coeffs() + t * qb.coeffs();
  } else {
    const double theta = std::acos(std::min(cos_theta, 1.0));
    const double s = std::sin(theta);
    q.coeffs() = (std::sin((1.0 - t) * theta) / s) * qa.coeffs() +
                 (std::sin(t * theta) / s) * qb.coeffs();
  }
  q.normalize();

  const Vec3 center =
      (1.0 - t) * pose_i.camera_center() + t * pose_j.camera_center();
  const Mat3 r = q.toRotationMatrix();
  return Pose(q, -r * center);
}

}  // namespace fewview
