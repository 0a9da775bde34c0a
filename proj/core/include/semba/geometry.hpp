#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "semba/grid.hpp"

namespace semba {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid world-to-camera transform. The unit quaternion is the source of
/// truth; it is renormalized (and its sign fixed to w >= 0) after every
/// operation that produces a new pose.
///
/// Tangent convention: 6-vectors are ordered (translation, rotation) and
/// increments act on the left, T <- exp(xi) * T.
class Pose {
 public:
  Pose() : q_(Eigen::Quaterniond::Identity()), t_(Vec3::Zero()) {}
  Pose(const Eigen::Quaterniond& q, const Vec3& t);
  Pose(const Mat3& rotation, const Vec3& t);

  static Pose identity() { return Pose(); }

  const Eigen::Quaterniond& rotation() const { return q_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  const Vec3& translation() const { return t_; }
  Mat4 matrix() const;

  /// Camera centre in the world frame, -R^T t.
  Vec3 center() const;

  Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }

 private:
  Eigen::Quaterniond q_;
  Vec3 t_;
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

Mat3 skew(const Vec3& v);
Pose exp_se3(const Vec6& xi);
Vec6 log_se3(const Pose& p);

/// Geodesic interpolation between two poses, s in [0, 1].
Pose interpolate(const Pose& a, const Pose& b, double s);

/// Rotation angle (radians) and translation distance between two poses.
double rotation_distance(const Pose& a, const Pose& b);
double translation_distance(const Pose& a, const Pose& b);

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

/// Pinhole intrinsics in pixel units at the working resolution.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  Vec4 params() const { return {fx, fy, cx, cy}; }
  void set_params(const Vec4& p) {
    fx = p[0];
    fy = p[1];
    cx = p[2];
    cy = p[3];
  }
  /// fx, fy > 0 and principal point strictly inside the image.
  bool valid() const;
  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0;
  }
};

/// Per-pixel inverse depth.
using DisparityMap = Grid<double>;

/// Inverse depths below this are rejected by unproject.
inline constexpr double kMinDepth = 1e-9;

/// Camera-frame point ((u - cx)/fx, (v - cy)/fy, 1) / d. Throws
/// Error(kNonPositiveDisparity) when d <= 0.
Vec3 unproject(const Intrinsics& K, const Pixel& px, double d);

/// Pinhole projection; nullopt when Z <= kMinDepth.
std::optional<Pixel> project(const Intrinsics& K, const Vec3& p);

/// d(project)/d(fx, fy, cx, cy) at a fixed camera-frame point.
Eigen::Matrix<double, 2, 4> project_jacobian_intrinsics(const Vec3& p);

struct Reprojection {
  Pixel px;
  Vec3 point_dst;  // point in the destination camera frame
};

/// mu_ij = project_j(T_j T_i^-1 unproject_i(px, d)). nullopt when the point
/// lands at depth <= kMinDepth in frame j (pixel is invalid, weight 0).
std::optional<Reprojection> reproject(const Pose& T_src, const Pose& T_dst,
                                      const Intrinsics& K, const Pixel& px,
                                      double d);

/// Partials of mu_ij. Pose blocks follow the left-multiplicative tangent
/// convention above; intrinsics block is ordered (fx, fy, cx, cy) and includes
/// the dependence of both the unprojection and the projection on K.
struct ReprojectionJacobians {
  Eigen::Matrix<double, 2, 6> d_src_pose;
  Eigen::Matrix<double, 2, 6> d_dst_pose;
  Vec2 d_disparity;
  Eigen::Matrix<double, 2, 4> d_intrinsics;
};

std::optional<std::pair<Reprojection, ReprojectionJacobians>>
reproject_with_jacobians(const Pose& T_src, const Pose& T_dst,
                         const Intrinsics& K, const Pixel& px, double d);

}  // namespace semba
