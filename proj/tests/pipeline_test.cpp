#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "semba/errors.hpp"
#include "semba/pipeline.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace semba;

namespace {

Scenario short_static(double duration = 1.5) {
  auto s = load_scenario(semba::testing::scenario_path("static_orbit.json"));
  s.trajectory.duration = duration;
  s.trajectory.arc *= duration / 4.0;
  return s;
}

RunConfig base_config() {
  RunConfig c;
  c.scenario = "unused";
  return c;
}

PipelineResult run(const RunConfig& cfg, const Scenario& s, double intrinsics_error = 0.0) {
  return run_pipeline(cfg, make_oracle_providers(make_world(s), intrinsics_error));
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Pipeline, ShortStaticRunIsAccurateAndDeterministic) {
  const auto s = short_static();
  const auto cfg = base_config();
  const auto a = run(cfg, s);
  const auto gt = ground_truth(*make_world(s));
  EXPECT_EQ(a.trajectory.size(), gt.size());
  EXPECT_GE(a.keyframe_frames.size(), 3u);
  EXPECT_EQ(a.keyframe_frames.front(), 0);
  EXPECT_LE(eval::ate(a.trajectory, gt, eval::AlignMode::kSim3).rmse, 1e-3);
  EXPECT_TRUE(a.graph.keyframe(0).pose.matrix().isIdentity(1e-12));

  const auto b = run(cfg, s);
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    EXPECT_EQ(a.trajectory.poses[i].matrix(), b.trajectory.poses[i].matrix());
  }
  EXPECT_EQ(a.final_report.final.total, b.final_report.final.total);
}

TEST(Pipeline, RecoversFocalLength) {
  auto s = load_scenario(semba::testing::scenario_path("static_orbit.json"));
  auto cfg = base_config();
  cfg.solver.optimize_intrinsics = true;
  const auto r = run(cfg, s, 0.1);
  const double fx_true = s.true_intrinsics().fx;
  EXPECT_LE(std::abs(r.graph.intrinsics().fx - fx_true) / fx_true, 0.02);
}

TEST(Pipeline, KernelIsInertWithoutDynamics) {
  const auto s = short_static();
  auto on = base_config(), off = base_config();
  off.solver.use_kernel = false;
  const auto gt = ground_truth(*make_world(s));
  const double a = eval::ate(run(on, s).trajectory, gt, eval::AlignMode::kSim3).rmse;
  const double b = eval::ate(run(off, s).trajectory, gt, eval::AlignMode::kSim3).rmse;
  EXPECT_NEAR(a, b, 1e-4);
}

TEST(Pipeline, WritesOutputs) {
  const auto s = short_static();
  auto cfg = base_config();
  const auto world = make_world(s);
  const auto r = run_pipeline(cfg, make_oracle_providers(world, 0.0));
  const auto gt = ground_truth(*world);
  const auto out = fs::temp_directory_path() / "semba_tests" / "pipeline_out";
  fs::remove_all(out);
  const auto report = write_run_outputs(r, cfg, s, &gt, out);
  for (const char* f : {"trajectory.tum", "keyframes.tum", "energy.csv", "graph.txt", "map.smap",
                        "codec.spca", "config.json", "report.txt", "report.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(eval::read_tum(out / "trajectory.tum").size(), gt.size());
  EXPECT_EQ(io::read_map(out / "map.smap").size(), r.map.size());
  const auto text = slurp(out / "report.txt");
  for (const char* key : {"tool=", "version=", "config_hash=", "keyframes=", "ate_sim3=", "ate_se3="}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
  bool has_frames = false;
  for (const auto& [k, v] : report.entries()) {
    if (k == "frames") has_frames = v == std::to_string(gt.size());
  }
  EXPECT_TRUE(has_frames);
}

TEST(Ablation, SpecParsing) {
  const auto s = parse_ablation_spec(R"({"kernel": ["on"], "gamma_embed": [0.0, 0.1, 0.2], "seeds": [4, 5]})");
  EXPECT_EQ(s.kernel, std::vector<bool>{true});
  EXPECT_EQ(s.gamma_embed.size(), 3u);
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_THROW(parse_ablation_spec(R"({"kernel": ["maybe"]})"), Error);
  EXPECT_THROW(parse_ablation_spec(R"({"seeds": []})"), Error);
  EXPECT_THROW(parse_ablation_spec(R"({"sedes": [1]})"), Error);
}

TEST(Ablation, OneRowPerGridCell) {
  const auto s = short_static(1.0);
  AblationSpec spec;
  spec.seeds = {1, 2};
  const auto rows = run_ablation(base_config(), s, spec);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    ASSERT_EQ(row.ate_sim3.size(), 2u);
    EXPECT_DOUBLE_EQ(row.median_sim3, median(row.ate_sim3));
  }
  std::ostringstream os;
  write_ablation_table(rows, os);
  const auto t = os.str();
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 5);
}

TEST(Median, Values) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
