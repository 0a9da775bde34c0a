#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "semba/errors.hpp"
#include "semba/geometry.hpp"
#include "support.hpp"

using namespace semba;

namespace {

Pose rz(double angle, const Vec3& t) {
  return Pose(Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(), t);
}

// Rodrigues rotation, written out independently of Eigen::AngleAxis.
Mat3 rodrigues(const Vec3& w) {
  const double th = w.norm();
  if (th < 1e-15) return Mat3::Identity();
  const Vec3 k = w / th;
  Mat3 K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(th) * K + (1 - std::cos(th)) * K * K;
}

}  // namespace

TEST(Pose, ComposeIdentity) {
  const Pose p = rz(0.3, {1, 2, 3});
  EXPECT_TRUE(compose(Pose::identity(), p).matrix().isApprox(p.matrix(), 1e-15));
  EXPECT_TRUE(compose(p, inverse(p)).matrix().isApprox(Mat4::Identity(), 1e-15));
}

TEST(Pose, ComposeMatchesMatrixProduct) {
  const Pose a = rz(M_PI / 2, {1, 0, 0});
  const Pose c = compose(a, a);
  EXPECT_NEAR(rotation_distance(c, rz(M_PI, Vec3::Zero())), 0.0, 1e-12);
  EXPECT_TRUE(c.translation().isApprox(Vec3(1, 1, 0), 1e-12));

  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose x = semba::testing::random_pose(rng, 2.0, 3.0);
    const Pose y = semba::testing::random_pose(rng, 2.0, 3.0);
    EXPECT_TRUE(compose(x, y).matrix().isApprox(x.matrix() * y.matrix(), 1e-12));
  }
}

TEST(Pose, QuaternionSignCanonical) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Pose p = semba::testing::random_pose(rng, 3.0, 1.0);
    EXPECT_GE(p.rotation().w(), 0.0);
    EXPECT_NEAR(p.rotation().norm(), 1.0, 1e-14);
  }
}

TEST(Pose, CenterIsMinusRtT) {
  const Pose p = rz(0.7, {0.5, -1, 2});
  EXPECT_TRUE((p * p.center()).isZero(1e-14));
}

TEST(Lie, ExpZeroIsIdentity) {
  EXPECT_TRUE(exp_se3(Vec6::Zero()).matrix().isApprox(Mat4::Identity()));
}

TEST(Lie, LogExpRoundtrip) {
  Vec6 xi;
  xi << 0.1, 0, 0, 0, 0, 0;
  EXPECT_TRUE(log_se3(exp_se3(xi)).isApprox(xi, 1e-10));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    Vec6 x;
    for (int k = 0; k < 6; ++k) x[k] = semba::testing::uniform(rng, -1.5, 1.5);
    EXPECT_LT((log_se3(exp_se3(x)) - x).norm(), 1e-10);
  }
}

TEST(Lie, ExpRotationMatchesRodrigues) {
  Vec6 xi = Vec6::Zero();
  xi[5] = M_PI / 2;
  const Pose p = exp_se3(xi);
  Mat3 expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_TRUE(p.rotation_matrix().isApprox(expect, 1e-12));
  EXPECT_TRUE(p.translation().isZero(1e-15));

  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    Vec3 w;
    for (int k = 0; k < 3; ++k) w[k] = semba::testing::uniform(rng, -2, 2);
    Vec6 x;
    x << 0, 0, 0, w;
    EXPECT_TRUE(exp_se3(x).rotation_matrix().isApprox(rodrigues(w), 1e-12));
  }
}

TEST(Lie, SmallAngleIsStable) {
  Vec6 xi;
  xi << 1e-3, -2e-3, 5e-4, 1e-12, -3e-13, 2e-12;
  EXPECT_LT((log_se3(exp_se3(xi)) - xi).norm(), 1e-15);
}

TEST(Pose, InterpolateEndpoints) {
  const Pose a = rz(0.2, {0, 0, 1});
  const Pose b = rz(1.0, {1, 0, 1});
  EXPECT_NEAR(rotation_distance(interpolate(a, b, 0.0), a), 0.0, 1e-12);
  EXPECT_NEAR(translation_distance(interpolate(a, b, 1.0), b), 0.0, 1e-12);
  EXPECT_NEAR(rotation_distance(interpolate(a, b, 0.5), a), 0.4, 1e-12);
}

class ProjectionTest : public ::testing::Test {
 protected:
  Intrinsics K{76.8, 76.8, 32.0, 24.0, 64, 48};
};

TEST_F(ProjectionTest, UnprojectPrincipalPoint) {
  EXPECT_TRUE(unproject(K, {32, 24}, 1.0).isApprox(Vec3(0, 0, 1)));
  EXPECT_TRUE(unproject(K, {32 + 76.8, 24}, 0.5).isApprox(Vec3(2, 0, 2)));
}

TEST_F(ProjectionTest, RoundTrip) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const Pixel px{semba::testing::uniform(rng, 0, 63), semba::testing::uniform(rng, 0, 47)};
    const auto p = project(K, unproject(K, px, semba::testing::uniform(rng, 0.1, 5)));
    ASSERT_TRUE(p);
    EXPECT_NEAR(p->u, px.u, 1e-12);
    EXPECT_NEAR(p->v, px.v, 1e-12);
  }
}

TEST_F(ProjectionTest, NonPositiveDisparityThrows) {
  try {
    unproject(K, {1, 1}, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonPositiveDisparity);
  }
  EXPECT_THROW(unproject(K, {1, 1}, -0.5), Error);
}

TEST_F(ProjectionTest, BehindCameraHasNoProjection) {
  EXPECT_FALSE(project(K, Vec3(0, 0, -1)));
  EXPECT_FALSE(project(K, Vec3(1, 0, 0)));
}

TEST_F(ProjectionTest, ReprojectIdenticalPoses) {
  const Pose T = rz(0.4, {0.1, 0.2, 0.3});
  const auto r = reproject(T, T, K, {10.5, 7.25}, 0.8);
  ASSERT_TRUE(r);
  EXPECT_NEAR(r->px.u, 10.5, 1e-12);
  EXPECT_NEAR(r->px.v, 7.25, 1e-12);
}

TEST_F(ProjectionTest, ReprojectBaselineShift) {
  // Camera j sits b to the right of camera i: world-to-camera t = (-b, 0, 0).
  const double b = 0.1;
  const Pose Ti, Tj(Mat3::Identity(), Vec3(-b, 0, 0));
  const auto r = reproject(Ti, Tj, K, {20, 10}, 1.0);
  ASSERT_TRUE(r);
  EXPECT_NEAR(r->px.u, 20 - K.fx * b, 1e-12);
  EXPECT_NEAR(r->px.v, 10, 1e-12);
}

TEST_F(ProjectionTest, ReprojectBehindDestination) {
  const Pose Ti, Tj(Mat3::Identity(), Vec3(0, 0, -5));
  EXPECT_FALSE(reproject(Ti, Tj, K, {32, 24}, 1.0));
}

TEST_F(ProjectionTest, NoParallaxWithoutTranslation) {
  const Pose T = rz(0.1, Vec3::Zero());
  const auto r = reproject_with_jacobians(Pose(), T, K, {32, 24}, 0.7);
  ASSERT_TRUE(r);
  EXPECT_TRUE(r->second.d_disparity.isZero(1e-14));
}

TEST_F(ProjectionTest, IntrinsicsJacobianOfProjection) {
  const Vec3 p(0.3, -0.2, 1.7);
  const auto J = project_jacobian_intrinsics(p);
  Eigen::Matrix<double, 2, 4> expect;
  expect << p.x() / p.z(), 0, 1, 0, 0, p.y() / p.z(), 0, 1;
  EXPECT_TRUE(J.isApprox(expect, 1e-15));
}

TEST_F(ProjectionTest, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  const double h = 1e-6;
  for (int c = 0; c < 200; ++c) {
    const Pose Ts = semba::testing::random_pose(rng, 0.5, 0.5);
    const Pose Td = compose(semba::testing::random_pose(rng, 0.2, 0.3), Ts);
    const Pixel px{semba::testing::uniform(rng, 0, 63), semba::testing::uniform(rng, 0, 47)};
    const double d = semba::testing::uniform(rng, 0.2, 2.0);
    const auto r = reproject_with_jacobians(Ts, Td, K, px, d);
    if (!r) continue;
    auto mu = [&](const Pose& a, const Pose& b, double dd) {
      const auto p = reproject(a, b, K, px, dd);
      return Vec2(p->px.u, p->px.v);
    };
    Eigen::Matrix<double, 2, 6> ns, nd;
    for (int i = 0; i < 6; ++i) {
      Vec6 xi = Vec6::Zero();
      xi[i] = h;
      ns.col(i) = (mu(compose(exp_se3(xi), Ts), Td, d) - mu(compose(exp_se3(-xi), Ts), Td, d)) / (2 * h);
      nd.col(i) = (mu(Ts, compose(exp_se3(xi), Td), d) - mu(Ts, compose(exp_se3(-xi), Td), d)) / (2 * h);
    }
    const Vec2 nD = (mu(Ts, Td, d + h) - mu(Ts, Td, d - h)) / (2 * h);
    EXPECT_LE((r->second.d_src_pose - ns).norm(), 1e-4 * std::max(1.0, ns.norm()));
    EXPECT_LE((r->second.d_dst_pose - nd).norm(), 1e-4 * std::max(1.0, nd.norm()));
    EXPECT_LE((r->second.d_disparity - nD).norm(), 1e-4 * std::max(1.0, nD.norm()));
  }
}

TEST(Intrinsics, Validity) {
  EXPECT_TRUE((Intrinsics{50, 50, 32, 24, 64, 48}.valid()));
  EXPECT_FALSE((Intrinsics{-1, 50, 32, 24, 64, 48}.valid()));
  EXPECT_FALSE((Intrinsics{50, 50, 70, 24, 64, 48}.valid()));
}
