#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "semba/config.hpp"
#include "semba/eval.hpp"
#include "semba/graph.hpp"
#include "semba/providers.hpp"
#include "semba/solver.hpp"
#include "semba/tensor_io.hpp"

namespace semba {

inline constexpr const char* kVersion = "0.3.0";

struct PipelineResult {
  eval::Trajectory trajectory;  // every frame
  eval::Trajectory keyframe_trajectory;
  std::vector<int> keyframe_frames;
  std::vector<IterationRecord> iterations;  // all solves, in order
  int solves = 0;
  SolveReport final_report;
  FactorGraph graph;
  std::vector<StabilityField> stability;  // per keyframe, final state
  std::vector<Grid<double>> alpha;
  std::optional<PcaCodec> codec;
  std::vector<io::MapPoint> map;
  int covisibility_pairs = 0;
  int skipped_edges = 0;
  int nonkeyframe_fallbacks = 0;
  std::vector<std::string> warnings;
};

/// Intrinsics guess, keyframe selection, PCA after the buffer fills, edges
/// with blended flow priors, adaptive bundle adjustment over the sliding
/// window, a final solve, then non-keyframe poses.
PipelineResult run_pipeline(const RunConfig& cfg, const ProviderSet& providers);

/// Simulator world for a scenario (run overrides already applied).
std::shared_ptr<const OracleWorld> make_world(const Scenario& scenario);

/// Ground-truth trajectory of every frame.
eval::Trajectory ground_truth(const OracleWorld& world);

/// Writes trajectory.tum, keyframes.tum, energy.csv, graph.txt, map.smap,
/// codec.spca, config.json, report.txt and report.csv into `out`. ATE is
/// reported when `gt` is given. Returns the report.
eval::Report write_run_outputs(const PipelineResult& result, const RunConfig& cfg,
                               const std::optional<Scenario>& scenario,
                               const eval::Trajectory* gt,
                               const std::filesystem::path& out);

/// Kernel on/off x gamma_embed grid over a list of seeds.
struct AblationSpec {
  std::vector<bool> kernel{true, false};
  std::vector<double> gamma_embed{0.0, 0.1};
  std::vector<std::uint64_t> seeds{1};
};

AblationSpec parse_ablation_spec(const std::string& json_text);

struct AblationRow {
  bool kernel = true;
  double gamma_embed = 0.0;
  std::vector<double> ate_sim3;  // per seed
  std::vector<double> ate_se3;
  double median_sim3 = 0.0;
  double median_se3 = 0.0;
};

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Scenario& scenario,
                                      const AblationSpec& spec);
void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& os);

double median(std::vector<double> v);

}  // namespace semba
