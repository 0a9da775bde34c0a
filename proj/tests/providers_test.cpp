#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "semba/config.hpp"
#include "semba/errors.hpp"
#include "semba/pipeline.hpp"
#include "semba/providers.hpp"
#include "semba/tensor_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace semba;

namespace {

Scenario scenario(const char* name) {
  return load_scenario(semba::testing::scenario_path(name));
}

fs::path temp_dir(const char* name) {
  const auto p = fs::temp_directory_path() / "semba_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Intrinsics, Heuristic) {
  const auto K = heuristic_intrinsics(64, 48);
  EXPECT_DOUBLE_EQ(K.fx, 76.8);
  EXPECT_DOUBLE_EQ(K.fy, 76.8);
  EXPECT_DOUBLE_EQ(K.cx, 32.0);
  EXPECT_DOUBLE_EQ(K.cy, 24.0);
  EXPECT_DOUBLE_EQ(heuristic_intrinsics(64, 48, 0.1).fx, 76.8 * 1.1);
}

class OracleTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto s = scenario("static_orbit.json");
    s.noise = ProviderNoise{};
    clean_ = make_world(s);
  }
  static std::shared_ptr<const OracleWorld> clean_;
};
std::shared_ptr<const OracleWorld> OracleTest::clean_;

TEST_F(OracleTest, NoiselessFlowMatchesReprojection) {
  const auto& w = *clean_;
  const auto obs = w.flow(2, 9);
  const auto& r = w.render(2);
  int checked = 0;
  for (int v = 0; v < r.valid.height(); ++v) {
    for (int u = 0; u < r.valid.width(); ++u) {
      if (obs.confidence(u, v) <= 0.0) continue;
      const auto p = reproject(r.pose, w.render(9).pose, w.true_intrinsics(),
                               {double(u), double(v)}, r.disparity(u, v));
      ASSERT_TRUE(p);
      EXPECT_LE((obs.flow(u, v) - Vec2(p->px.u - u, p->px.v - v)).norm(), 1e-6);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1500);
}

TEST_F(OracleTest, SelfPairIsZeroWithFullConfidence) {
  const auto obs = clean_->flow(4, 4);
  const auto& valid = clean_->render(4).valid;
  for (std::size_t i = 0; i < obs.flow.size(); ++i) {
    EXPECT_EQ(obs.flow[i], Vec2::Zero());
    if (valid[i]) EXPECT_EQ(obs.confidence[i], 1.0);
  }
}

TEST_F(OracleTest, NoiselessDepthIsTruth) {
  const auto d = clean_->depth(3).disparity;
  const auto& r = clean_->render(3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (r.valid[i]) EXPECT_EQ(d[i], r.disparity[i]);
  }
}

TEST_F(OracleTest, SameFrameGivesIdenticalEmbedding) {
  EXPECT_EQ(clean_->embedding(5), clean_->embedding(5));
  EXPECT_EQ(clean_->embedding(5).dim(), 64);
}

TEST(Oracle, DepthNoiseMatchesSigma) {
  auto s = scenario("static_orbit.json");
  s.noise = ProviderNoise{};
  s.noise.depth_relative_sigma = 0.05;
  s.noise.seed = 4;
  const auto w = make_world(s);
  std::vector<double> logs;
  for (int f = 0; f < 10; ++f) {
    const auto d = w->depth(f).disparity;
    const auto& r = w->render(f);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (r.valid[i]) logs.push_back(std::log(r.disparity[i] / d[i]));
    }
  }
  double m = 0.0, v = 0.0;
  for (double x : logs) m += x;
  m /= logs.size();
  for (double x : logs) v += (x - m) * (x - m);
  EXPECT_NEAR(std::sqrt(v / logs.size()), 0.05, 0.002);
  EXPECT_NEAR(m, 0.0, 0.002);
}

TEST(Oracle, ActorPixelsCarryActorFlow) {
  auto s = scenario("dynamic.json");
  s.noise = ProviderNoise{};
  const auto w = make_world(s);
  const auto obs = w->flow(10, 12);
  const auto& r = w->render(10);
  const auto rigid = sim::gt_flow(w->scene(), w->trajectory(), r, w->render(12).time,
                                  w->true_intrinsics(), true);
  const auto truth = sim::gt_flow(w->scene(), w->trajectory(), r, w->render(12).time,
                                  w->true_intrinsics());
  int actor = 0, differing = 0;
  for (std::size_t i = 0; i < r.regime.size(); ++i) {
    if (!truth.valid[i] || obs.confidence[i] <= 0.0) continue;
    if (r.regime[i] == sim::Regime::kActor) {
      ++actor;
      EXPECT_LE((obs.flow[i] - truth.flow[i]).norm(), 1e-9);
      EXPECT_DOUBLE_EQ(obs.confidence[i], s.noise.dynamic_confidence);
      if ((truth.flow[i] - rigid.flow[i]).norm() > 0.1) ++differing;
    } else if (r.regime[i] == sim::Regime::kStatic) {
      EXPECT_LE((obs.flow[i] - rigid.flow[i]).norm(), 1e-9);
    }
  }
  EXPECT_GT(actor, 0);
  EXPECT_GT(differing, actor / 2);
}

TEST(Oracle, QueriesAreOrderIndependent) {
  const auto s = scenario("dynamic.json");
  const auto a = make_world(s), b = make_world(s);
  const auto x1 = a->flow(3, 5);
  b->flow(7, 2);
  const auto x2 = b->flow(3, 5);
  EXPECT_EQ(x1.flow.data(), x2.flow.data());
  EXPECT_EQ(a->embedding(6), b->embedding(6));
  EXPECT_EQ(a->depth(6).disparity.data(), b->depth(6).disparity.data());
}

TEST(Oracle, OutOfRangeFrameThrows) {
  const auto w = make_world(scenario("static_orbit.json"));
  EXPECT_THROW(w->flow(0, 1000), Error);
}

TEST(TensorIo, Roundtrips) {
  const auto dir = temp_dir("io");
  std::mt19937_64 rng(1);
  const auto emb = semba::testing::smooth_embedding(rng, 5, 7, 3);
  io::write_embedding(dir / "a.semb", emb);
  const auto emb2 = io::read_embedding(dir / "a.semb");
  EXPECT_EQ(emb.data(), emb2.data());
  EXPECT_EQ(emb2.dim(), 5);

  FlowObservation f{FlowField(7, 3, Vec2(0.5, -1.25)), Grid<double>(7, 3, 0.75)};
  io::write_flow(dir / "a.sflw", f);
  const auto f2 = io::read_flow(dir / "a.sflw");
  EXPECT_EQ(f2.flow(6, 2), Vec2(0.5, -1.25));
  EXPECT_EQ(f2.confidence(3, 1), 0.75);

  DisparityMap d(7, 3, 0.125);
  io::write_disparity(dir / "a.sdsp", d);
  EXPECT_EQ(io::read_disparity(dir / "a.sdsp").data(), d.data());

  Grid<unsigned char> m(7, 3, 2);
  io::write_mask(dir / "a.smsk", m);
  EXPECT_EQ(io::read_mask(dir / "a.smsk").data(), m.data());

  const PcaCodec c(Eigen::Vector3d(1, 2, 3), Eigen::MatrixXd::Identity(2, 3), Eigen::Vector2d(4, 1));
  io::write_codec(dir / "a.spca", c);
  const auto c2 = io::read_codec(dir / "a.spca");
  EXPECT_EQ(c2.mean(), c.mean());
  EXPECT_EQ(c2.components(), c.components());

  std::vector<io::MapPoint> pts{{3, Vec3(1, 2, 3), Eigen::Vector2f(0.5f, 0.25f)}};
  io::write_map(dir / "a.smap", pts);
  const auto pts2 = io::read_map(dir / "a.smap");
  ASSERT_EQ(pts2.size(), 1u);
  EXPECT_EQ(pts2[0].id, 3u);
  EXPECT_EQ(pts2[0].code, pts[0].code);
}

TEST(TensorIo, BadMagicRejected) {
  const auto dir = temp_dir("io_bad");
  io::write_disparity(dir / "d.sdsp", DisparityMap(2, 2, 1.0));
  try {
    io::read_embedding(dir / "d.sdsp");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadFormat);
  }
  EXPECT_THROW(io::read_flow(dir / "missing.sflw"), Error);
}

TEST(FileProviders, MatchOracleAndChainFlows) {
  const auto dir = temp_dir("files");
  auto s = scenario("static_orbit.json");
  const auto w = make_world(s);
  // Minimal export: meta, per-frame tensors and consecutive flows only.
  {
    std::ofstream meta(dir / "meta.json");
    meta << "{\"width\": 64, \"height\": 48, \"timestamps\": [";
    for (int f = 0; f < 4; ++f) meta << (f ? ", " : "") << w->trajectory().time_of(f);
    meta << "]}";
  }
  for (int f = 0; f < 4; ++f) {
    io::write_embedding(dir / frame_file(f, "semb"), w->embedding(f));
    io::write_disparity(dir / frame_file(f, "sdsp"), w->depth(f).disparity);
    if (f < 3) io::write_flow(dir / frame_file(f, "sflw"), w->flow(f, f + 1));
  }
  const auto p = make_file_providers(dir);
  EXPECT_EQ(p.sequence.num_frames(), 4);
  EXPECT_EQ(p.embedding->query(2), w->embedding(2));
  const auto f01 = p.flow->query(0, 1, nullptr);
  EXPECT_LE((f01.flow(10, 10) - w->flow(0, 1).flow(10, 10)).norm(), 1e-6);  // stored as f32
  // 0 -> 2 is chained through 0 -> 1 -> 2
  const auto f02 = p.flow->query(0, 2, nullptr);
  const auto truth = w->flow(0, 2);
  EXPECT_LE((f02.flow(32, 24) - truth.flow(32, 24)).norm(), 0.05);
  try {
    p.flow->query(2, 0, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingData);
  }
}
