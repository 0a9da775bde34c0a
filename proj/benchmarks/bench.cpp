#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "semba/config.hpp"
#include "semba/geometry.hpp"
#include "semba/pipeline.hpp"
#include "semba/robust.hpp"
#include "semba/solver.hpp"
#include "support.hpp"

using namespace semba;

static void BM_BarronRho(benchmark::State& state) {
  const BarronParams p{static_cast<double>(state.range(0)) / 4.0, 1.0};
  std::vector<double> r(1024);
  std::mt19937_64 rng(1);
  for (auto& x : r) x = semba::testing::uniform(rng, -10.0, 10.0);
  for (auto _ : state) {
    double s = 0.0;
    for (double x : r) s += barron_rho(x, p);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(r.size()));
}
// alpha = 2, 1, 0, -1
BENCHMARK(BM_BarronRho)->Arg(8)->Arg(4)->Arg(0)->Arg(-4);

static void BM_BarronWeight(benchmark::State& state) {
  const BarronParams p{0.5, 1.0};
  std::vector<double> r(1024);
  std::mt19937_64 rng(2);
  for (auto& x : r) x = semba::testing::uniform(rng, -10.0, 10.0);
  for (auto _ : state) {
    double s = 0.0;
    for (double x : r) s += barron_weight(x, p);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(r.size()));
}
BENCHMARK(BM_BarronWeight);

static void BM_ReprojectWithJacobians(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const Pose a = semba::testing::random_pose(rng, 0.2, 0.5);
  const Pose b = semba::testing::random_pose(rng, 0.2, 0.5);
  const Intrinsics K{76.8, 76.8, 32.0, 24.0, 64, 48};
  for (auto _ : state) {
    for (int v = 0; v < 48; ++v) {
      for (int u = 0; u < 64; ++u) {
        benchmark::DoNotOptimize(reproject_with_jacobians(a, b, K, {double(u), double(v)}, 0.5));
      }
    }
  }
  state.SetItemsProcessed(state.iterations() * 64 * 48);
}
BENCHMARK(BM_ReprojectWithJacobians);

static void BM_SolveIncrement(benchmark::State& state) {
  std::mt19937_64 rng(4);
  semba::testing::ProblemOptions o;
  o.keyframes = static_cast<int>(state.range(0));
  o.width = 64;
  o.height = 48;
  o.dim = 16;
  auto g = semba::testing::random_problem(rng, o);
  BundleAdjuster ba;
  ba.refresh_kernel(g);
  for (auto _ : state) benchmark::DoNotOptimize(ba.solve_increment(g, 1e-4, true));
}
BENCHMARK(BM_SolveIncrement)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_Energy(benchmark::State& state) {
  std::mt19937_64 rng(5);
  semba::testing::ProblemOptions o;
  o.keyframes = 4;
  o.width = 64;
  o.height = 48;
  o.dim = 16;
  auto g = semba::testing::random_problem(rng, o);
  BundleAdjuster ba;
  ba.refresh_kernel(g);
  for (auto _ : state) benchmark::DoNotOptimize(ba.energy(g));
}
BENCHMARK(BM_Energy)->Unit(benchmark::kMillisecond);

static void BM_StaticPipeline(benchmark::State& state) {
  const auto s = load_scenario(semba::testing::scenario_path("static_orbit.json"));
  const auto world = make_world(s);
  RunConfig cfg;
  cfg.scenario = "static_orbit.json";
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_pipeline(cfg, make_oracle_providers(world, 0.0)));
  }
}
BENCHMARK(BM_StaticPipeline)->Unit(benchmark::kSecond)->Iterations(1);

BENCHMARK_MAIN();
