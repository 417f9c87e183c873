#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace fewview {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Pinhole intrinsics. Convention: +z forward, +x right, +y down, pixel
// origin top-left, pixel centers at integer coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool valid() const noexcept;
};

// World-to-camera rigid transform.
class Pose {
 public:
  Pose() = default;
  Pose(const Eigen::Quaterniond& rotation, const Vec3& translation);
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose from_camera_to_world(const Mat4& c2w);

  const Mat3& rotation() const noexcept { return rotation_; }
  const Eigen::Quaterniond& quaternion() const noexcept { return quat_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 camera_center() const { return -rotation_.transpose() * translation_; }
  Vec3 apply(const Vec3& world) const { return rotation_ * world + translation_; }
  Vec3 inverse_apply(const Vec3& cam) const {
    return rotation_.transpose() * (cam - translation_);
  }
  Mat4 world_to_camera() const;
  Mat4 camera_to_world() const;

  bool valid(double tol = 1e-6) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Eigen::Quaterniond quat_ = Eigen::Quaterniond::Identity();
  Vec3 translation_ = Vec3::Zero();
};

struct CameraView {
  Intrinsics intrinsics;
  Pose pose;
  double near = 0.01;
  double far = 100.0;

  bool valid() const noexcept;
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

inline constexpr double kMinDepth = 1e-8;
inline constexpr double kCovarianceFloor = 0.3;

Projection project_point(const CameraView& view, const Vec3& point_world);

// Lifts a pixel at camera-space depth back to world space. With
// check_bounds, pixels outside the image raise DimensionMismatch.
Vec3 unproject_pixel(const CameraView& view, const Vec2& pixel, double depth,
                     bool check_bounds = false);

// Jacobian of the pixel projection w.r.t. camera-space position.
Mat23 projection_jacobian(const Intrinsics& intr, const Vec3& point_cam);

// Screen-space covariance of a world-space Gaussian, with the isotropic
// kCovarianceFloor added.
Mat2 splat_cov2d(const CameraView& view, const Vec3& mean_world,
                 const Mat3& cov_world);

// Slerp on rotation, linear interpolation of camera centers.
Pose sample_intermediate_pose(const Pose& pose_i, const Pose& pose_j, double t);

}  // namespace fewview
