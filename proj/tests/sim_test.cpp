#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "semba/config.hpp"
#include "semba/embedding.hpp"
#include "semba/pipeline.hpp"
#include "semba/sim.hpp"
#include "support.hpp"

using namespace semba;
using namespace semba::sim;

namespace {

const Intrinsics kK{76.8, 76.8, 32.0, 24.0, 64, 48};

TrajectorySpec still_camera(const Vec3& eye, const Vec3& target, double duration = 4.0) {
  TrajectorySpec t;
  t.kind = TrajectoryKind::kLinear;
  t.start = t.end = eye;
  t.target = target;
  t.duration = duration;
  return t;
}

Scenario dynamic_scenario() {
  return load_scenario(semba::testing::scenario_path("dynamic.json"));
}

}  // namespace

TEST(Scene, DeterministicInSeed) {
  SceneConfig c;
  const auto a = generate_scene(c), b = generate_scene(c);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].points, b.objects[i].points);
    EXPECT_TRUE(a.objects[i].latents == b.objects[i].latents);
  }
  c.seed = 2;
  EXPECT_FALSE(generate_scene(c).objects[0].latents == a.objects[0].latents);
}

TEST(Scene, ClusterSeparation) {
  SceneConfig c;
  c.seed = 9;
  const auto s = generate_scene(c);
  std::mt19937_64 rng(1);
  double same = 0.0, diff = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto& o = s.objects[rng() % s.objects.size()];
    // adjacent surfels of one object
    const std::size_t j = rng() % (o.points.size() - 1);
    same += o.latents.col(j).cast<double>().normalized().dot(
        o.latents.col(j + 1).cast<double>().normalized());
    std::size_t a = rng() % s.objects.size(), b = rng() % s.objects.size();
    while (b == a) b = rng() % s.objects.size();
    const auto& oa = s.objects[a];
    const auto& ob = s.objects[b];
    diff += oa.latents.col(rng() % oa.points.size()).cast<double>().normalized().dot(
        ob.latents.col(rng() % ob.points.size()).cast<double>().normalized());
  }
  EXPECT_GE(same / n, 0.95);
  EXPECT_LE(std::abs(diff / n), 0.05);
}

TEST(Render, StaticConfigHasAllStaticMask) {
  SceneConfig c;
  const auto s = generate_scene(c);
  TrajectorySpec t;
  for (double time : {0.0, 1.3, 3.9}) {
    const auto r = render(s, t, time, kK);
    for (auto g : r.regime) EXPECT_EQ(g, Regime::kStatic);
    EXPECT_GT(regime_fraction(r, Regime::kStatic), 0.99);
  }
}

TEST(Render, FrontalWallHasConstantDisparity) {
  SceneConfig c;
  c.static_boxes = 0;
  const auto s = generate_scene(c);
  const auto t = still_camera({0, 1.3, 0}, {0, 1.3, 2});
  const auto r = render(s, t, 0.0, kK);
  int valid = 0;
  for (std::size_t i = 0; i < r.disparity.size(); ++i) {
    if (!r.valid[i]) continue;
    ++valid;
    EXPECT_NEAR(r.disparity[i], 1.0 / c.room_half_width, 1e-9);
  }
  EXPECT_GT(valid, 64 * 48 * 9 / 10);
}

TEST(Render, ApproachingWallIncreasesDisparity) {
  SceneConfig c;
  c.static_boxes = 0;
  const auto s = generate_scene(c);
  TrajectorySpec t = still_camera({0, 1.3, -1}, {0, 1.3, 2});
  t.end = Vec3(0, 1.3, 1);
  double prev = 0.0;
  for (int f = 0; f < 10; ++f) {
    const auto r = render(s, t, 0.4 * f, kK);
    ASSERT_TRUE(r.valid(32, 24));
    EXPECT_GT(r.disparity(32, 24), prev);
    prev = r.disparity(32, 24);
  }
}

TEST(Render, ActorPixelsLieOnTheActor) {
  const auto sc = dynamic_scenario();
  const auto scene = generate_scene(sc.scene);
  int actor_obj = -1;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].type == SceneObject::Type::kActor) actor_obj = static_cast<int>(i);
  }
  ASSERT_GE(actor_obj, 0);
  const auto& spec = sc.scene.actors[0];
  for (double time : {0.5, 2.2}) {
    const auto r = render(scene, sc.trajectory, time, kK);
    const Pose world_to_body = inverse(object_motion(scene, sc.trajectory, actor_obj, time));
    const Pose cam_to_world = inverse(r.pose);
    int n = 0;
    for (int v = 0; v < 48; ++v) {
      for (int u = 0; u < 64; ++u) {
        if (r.regime(u, v) != Regime::kActor) continue;
        ++n;
        EXPECT_EQ(r.object(u, v), actor_obj);
        const Vec3 body = world_to_body * (cam_to_world * unproject(kK, {double(u), double(v)}, r.disparity(u, v)));
        const double slack = sc.scene.surfel_spacing;
        for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(body[k]), spec.half_extents[k] + slack);
      }
    }
    EXPECT_GT(n, 0);
    // every valid pixel carries exactly one label consistent with its object
    for (std::size_t i = 0; i < r.regime.size(); ++i) {
      if (!r.valid[i]) continue;
      const auto type = scene.objects[r.object[i]].type;
      const auto expect = type == SceneObject::Type::kActor   ? Regime::kActor
                          : type == SceneObject::Type::kQuasi ? Regime::kQuasi
                                                              : Regime::kStatic;
      EXPECT_EQ(r.regime[i], expect);
    }
  }
}

TEST(GtFlow, SameTimeIsZero) {
  const auto sc = dynamic_scenario();
  const auto scene = generate_scene(sc.scene);
  const auto r = render(scene, sc.trajectory, 1.0, kK);
  const auto f = gt_flow(scene, sc.trajectory, r, 1.0, kK);
  for (std::size_t i = 0; i < f.flow.size(); ++i) {
    if (f.valid[i]) EXPECT_LE(f.flow[i].norm(), 1e-12);
  }
}

TEST(GtFlow, StaticPixelsMatchReprojection) {
  const auto sc = dynamic_scenario();
  const auto scene = generate_scene(sc.scene);
  const auto r1 = render(scene, sc.trajectory, 0.6, kK);
  const Pose T2 = sc.trajectory.pose_at(1.1);
  const auto f = gt_flow(scene, sc.trajectory, r1, 1.1, kK);
  int n = 0;
  for (int v = 0; v < 48; ++v) {
    for (int u = 0; u < 64; ++u) {
      if (!f.valid(u, v) || r1.regime(u, v) != Regime::kStatic) continue;
      const auto p = reproject(r1.pose, T2, kK, {double(u), double(v)}, r1.disparity(u, v));
      ASSERT_TRUE(p);
      EXPECT_LE((f.flow(u, v) - Vec2(p->px.u - u, p->px.v - v)).norm(), 1e-9);
      ++n;
    }
  }
  EXPECT_GT(n, 1000);
}

TEST(GtFlow, ActorFlowDiffersFromCameraFlow) {
  const auto sc = dynamic_scenario();
  const auto scene = generate_scene(sc.scene);
  const auto r1 = render(scene, sc.trajectory, 0.6, kK);
  const auto f = gt_flow(scene, sc.trajectory, r1, 0.9, kK);
  const auto rigid = gt_flow(scene, sc.trajectory, r1, 0.9, kK, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.flow.size(); ++i) {
    if (f.valid[i] && r1.regime[i] == Regime::kActor) {
      worst = std::max(worst, (f.flow[i] - rigid.flow[i]).norm());
    }
  }
  EXPECT_GT(worst, 1.0);
}

TEST(Displacement, EventOnlyChangesObjectPixels) {
  auto sc = dynamic_scenario();
  sc.scene.actors.clear();
  const auto scene = generate_scene(sc.scene);
  const auto& q = sc.scene.quasi_static[0];
  EXPECT_TRUE(displacement_event(q, q.event_time - 0.01).matrix().isIdentity());
  EXPECT_FALSE(displacement_event(q, q.event_time + 0.01).matrix().isIdentity());

  const auto t = still_camera({0.3, 1.2, -1.5}, {0.3, 0.3, 0.3});
  const auto before = render(scene, t, q.event_time - 0.1, kK);
  const auto after = render(scene, t, q.event_time + 0.1, kK);
  int changed = 0;
  for (std::size_t i = 0; i < before.disparity.size(); ++i) {
    const bool touched = before.regime[i] == Regime::kQuasi || after.regime[i] == Regime::kQuasi;
    if (before.disparity[i] != after.disparity[i]) {
      ++changed;
      EXPECT_TRUE(touched);
    }
  }
  EXPECT_GT(changed, 20);
  // no change away from the event
  const auto early = render(scene, t, 0.2, kK);
  EXPECT_EQ(early.disparity.data(), before.disparity.data());
}

TEST(Trajectory, RevisitLoopClosesOnDescriptors) {
  const auto sc = load_scenario(semba::testing::scenario_path("revisit_loop.json"));
  const auto w = make_world(sc);
  const int last = w->num_frames() - 1;
  EXPECT_LE(translation_distance(w->render(0).pose, w->render(last).pose), 0.05);
  auto a = w->embedding(0), b = w->embedding(last);
  normalize_map(a);
  normalize_map(b);
  EXPECT_GE(descriptor_similarity(global_descriptor(a), global_descriptor(b)), 0.9);
}

TEST(Trajectory, LookAtFacesTarget) {
  const Pose p = look_at({1, 2, 3}, {0, 1, 0});
  const Vec3 c = p * Vec3(0, 1, 0);
  EXPECT_NEAR(c.x(), 0.0, 1e-12);
  EXPECT_NEAR(c.y(), 0.0, 1e-12);
  EXPECT_GT(c.z(), 0.0);
  EXPECT_TRUE(p.center().isApprox(Vec3(1, 2, 3), 1e-12));
}
