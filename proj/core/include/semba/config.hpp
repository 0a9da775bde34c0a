#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "semba/graph.hpp"
#include "semba/providers.hpp"
#include "semba/robust.hpp"
#include "semba/sim.hpp"
#include "semba/solver.hpp"

namespace semba {

/// Simulator scenario: scene, camera path, true camera and provider noise.
struct Scenario {
  sim::SceneConfig scene;
  sim::TrajectorySpec trajectory;
  ProviderNoise noise;
  int width = 64;
  int height = 48;
  /// True focal length; the intrinsics heuristic value when unset.
  std::optional<double> fx;

  Intrinsics true_intrinsics() const;
};

struct PcaSettings {
  bool enabled = true;
  int dim = 32;
  int buffer_keyframes = 12;  // keyframes collected before fitting
  std::size_t max_vectors = 65536;
};

struct PipelineSettings {
  bool semantic_prior = true;  // blend semantic flow into the flow prior
  int semantic_radius = 4;     // px
  bool covisibility = true;
  int incremental_iters = 2;   // GN iterations per outer pass after each keyframe
  int incremental_outer = 1;
  bool final_global = true;    // final solve over every keyframe
  bool nonkeyframes = true;
  int map_stride = 4;          // px between exported map points
};

enum class ProviderKind { kOracle, kFiles };

struct RunConfig {
  std::filesystem::path scenario;  // oracle provider
  ProviderKind provider = ProviderKind::kOracle;
  std::filesystem::path data_dir;  // files provider
  std::filesystem::path output_dir = "out";
  std::optional<std::uint64_t> seed;  // replaces scene and noise seeds
  std::optional<ProviderNoise> noise;  // replaces the scenario noise block
  double intrinsics_error = 0.0;

  GraphConfig graph;
  SolverConfig solver;
  RegimeThresholds regime;
  NonKeyframeConfig nonkeyframe;
  PcaSettings pca;
  PipelineSettings pipeline;

  /// Throws kConfig describing the first invalid field.
  void validate() const;
};

/// JSON parsing. Unknown keys and wrong types raise kConfig naming the key
/// path. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& json_text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical JSON (sorted keys) of the effective configuration.
std::string to_json(const RunConfig& cfg);
std::string to_json(const Scenario& s);

/// Scenario with the run's seed and noise overrides applied.
Scenario effective_scenario(const Scenario& s, const RunConfig& cfg);

const char* to_string(ProviderKind k);

}  // namespace semba
