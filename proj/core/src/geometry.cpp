#include "semba/geometry.hpp"

#include <cmath>

#include "semba/errors.hpp"

namespace semba {

namespace {

constexpr double kSmallAngle = 1e-8;

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

// V = I + (1 - cos)/th^2 W + (th - sin)/th^3 W^2, the SE(3) left Jacobian of
// the rotation part acting on translation.
Mat3 se3_v(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double th2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / th2 * W +
         (theta - std::sin(theta)) / (th2 * theta) * W * W;
}

Mat3 se3_v_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double half = 0.5 * theta;
  const double coef =
      (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Mat3::Identity() - 0.5 * W + coef * W * W;
}

Vec3 so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = canonical(q_in);
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < kSmallAngle) {
    // theta ~ 2n, axis*theta ~ 2 v / w
    return 2.0 * v / q.w();
  }
  const double theta = 2.0 * std::atan2(n, q.w());
  return v * (theta / n);
}

Eigen::Quaterniond so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(),
                         0.5 * omega.z());
    return canonical(q);
  }
  const Vec3 axis = omega / theta;
  return canonical(Eigen::Quaterniond(Eigen::AngleAxisd(theta, axis)));
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& q, const Vec3& t)
    : q_(canonical(q)), t_(t) {}

Pose::Pose(const Mat3& rotation, const Vec3& t)
    : q_(canonical(Eigen::Quaterniond(rotation))), t_(t) {}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Vec3 Pose::center() const { return -(q_.conjugate() * t_); }

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation() * b.rotation(),
              a.rotation() * b.translation() + a.translation());
}

Pose inverse(const Pose& p) {
  const Eigen::Quaterniond qi = p.rotation().conjugate();
  return Pose(qi, -(qi * p.translation()));
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<   0.0, -v.z(),  v.y(),
       v.z(),    0.0, -v.x(),
      -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Pose exp_se3(const Vec6& xi) {
  const Vec3 upsilon = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  return Pose(so3_exp(omega), se3_v(omega) * upsilon);
}

Vec6 log_se3(const Pose& p) {
  const Vec3 omega = so3_log(p.rotation());
  Vec6 xi;
  xi.head<3>() = se3_v_inverse(omega) * p.translation();
  xi.tail<3>() = omega;
  return xi;
}

Pose interpolate(const Pose& a, const Pose& b, double s) {
  const Vec6 delta = log_se3(compose(b, inverse(a)));
  return compose(exp_se3(s * delta), a);
}

double rotation_distance(const Pose& a, const Pose& b) {
  return so3_log(a.rotation().conjugate() * b.rotation()).norm();
}

double translation_distance(const Pose& a, const Pose& b) {
  return (a.center() - b.center()).norm();
}

bool Intrinsics::valid() const {
  return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 &&
         cy < height;
}

Vec3 unproject(const Intrinsics& K, const Pixel& px, double d) {
  if (!(d > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDisparity,
                "unproject requires d > 0, got " + std::to_string(d));
  }
  return Vec3((px.u - K.cx) / K.fx, (px.v - K.cy) / K.fy, 1.0) / d;
}

std::optional<Pixel> project(const Intrinsics& K, const Vec3& p) {
  if (p.z() <= kMinDepth) return std::nullopt;
  return Pixel{K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

Eigen::Matrix<double, 2, 4> project_jacobian_intrinsics(const Vec3& p) {
  Eigen::Matrix<double, 2, 4> J;
  // clang-format off
  J << p.x() / p.z(), 0.0,           1.0, 0.0,
       0.0,           p.y() / p.z(), 0.0, 1.0;
  // clang-format on
  return J;
}

std::optional<Reprojection> reproject(const Pose& T_src, const Pose& T_dst,
                                      const Intrinsics& K, const Pixel& px,
                                      double d) {
  const Vec3 p_src = unproject(K, px, d);
  const Vec3 p_dst = T_dst * (inverse(T_src) * p_src);
  const auto uv = project(K, p_dst);
  if (!uv) return std::nullopt;
  return Reprojection{*uv, p_dst};
}

std::optional<std::pair<Reprojection, ReprojectionJacobians>>
reproject_with_jacobians(const Pose& T_src, const Pose& T_dst,
                         const Intrinsics& K, const Pixel& px, double d) {
  const Vec3 p_src = unproject(K, px, d);
  const Mat3 R_rel = T_dst.rotation_matrix() * T_src.rotation_matrix().transpose();
  const Vec3 t_rel = T_dst.translation() - R_rel * T_src.translation();
  const Vec3 p = R_rel * p_src + t_rel;
  if (p.z() <= kMinDepth) return std::nullopt;

  const double iz = 1.0 / p.z();
  const Pixel uv{K.fx * p.x() * iz + K.cx, K.fy * p.y() * iz + K.cy};

  Eigen::Matrix<double, 2, 3> Jp;
  // clang-format off
  Jp << K.fx * iz, 0.0,       -K.fx * p.x() * iz * iz,
        0.0,       K.fy * iz, -K.fy * p.y() * iz * iz;
  // clang-format on

  ReprojectionJacobians J;

  Eigen::Matrix<double, 3, 6> dp_dst;
  dp_dst.leftCols<3>() = Mat3::Identity();
  dp_dst.rightCols<3>() = -skew(p);
  J.d_dst_pose = Jp * dp_dst;

  Eigen::Matrix<double, 3, 6> dp_src;
  dp_src.leftCols<3>() = -R_rel;
  dp_src.rightCols<3>() = R_rel * skew(p_src);
  J.d_src_pose = Jp * dp_src;

  J.d_disparity = Jp * (R_rel * (-p_src / d));

  Eigen::Matrix<double, 3, 4> dsrc_dK = Eigen::Matrix<double, 3, 4>::Zero();
  dsrc_dK(0, 0) = -(px.u - K.cx) / (K.fx * K.fx * d);
  dsrc_dK(1, 1) = -(px.v - K.cy) / (K.fy * K.fy * d);
  dsrc_dK(0, 2) = -1.0 / (K.fx * d);
  dsrc_dK(1, 3) = -1.0 / (K.fy * d);
  J.d_intrinsics = project_jacobian_intrinsics(p) + Jp * R_rel * dsrc_dK;

  return std::make_pair(Reprojection{uv, p}, J);
}

}  // namespace semba
