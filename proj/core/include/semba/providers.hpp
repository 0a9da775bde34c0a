#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "semba/embedding.hpp"
#include "semba/flow.hpp"
#include "semba/geometry.hpp"
#include "semba/sim.hpp"

namespace semba {

enum class DynamicCorruption {
  kActorFlow,  // actor pixels carry the actor's true, scene-inconsistent flow
  kNone,       // actor pixels carry camera-induced (rigid-consistent) flow
};

DynamicCorruption parse_dynamic_corruption(const std::string& s);
const char* to_string(DynamicCorruption c);

struct ProviderNoise {
  double flow_sigma = 0.0;            // px
  double depth_relative_sigma = 0.0;  // log-normal sigma on depth
  double depth_scale_bias = 1.0;      // global multiplicative depth bias
  double embed_sigma = 0.0;           // noise norm relative to a unit latent
  DynamicCorruption dynamic_corruption = DynamicCorruption::kActorFlow;
  double dynamic_confidence = 0.8;    // confidence on actor pixels
  // confidence where the target is occluded or straddles a depth/object
  // discontinuity, as flow networks report at occlusion boundaries
  double occlusion_confidence = 0.0;
  std::uint64_t seed = 0;

  bool valid() const {
    return flow_sigma >= 0.0 && depth_relative_sigma >= 0.0 &&
           depth_scale_bias > 0.0 && embed_sigma >= 0.0 &&
           dynamic_confidence >= 0.0 && dynamic_confidence <= 1.0 &&
           occlusion_confidence >= 0.0 && occlusion_confidence <= 1.0;
  }
};

struct DepthPrior {
  DisparityMap disparity;
};

class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  /// Flow from frame i to frame j. `blended_prior` is the caller's current
  /// estimate (may be null); providers without refinement ignore it.
  virtual FlowObservation query(int i, int j,
                                const FlowField* blended_prior) const = 0;
};

class DepthProvider {
 public:
  virtual ~DepthProvider() = default;
  virtual DepthPrior query(int frame) const = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual EmbeddingMap query(int frame) const = 0;
};

class IntrinsicsProvider {
 public:
  virtual ~IntrinsicsProvider() = default;
  virtual Intrinsics initial_guess(int frame) const = 0;
};

/// fx = fy = 1.2 max(W, H) (1 + error), principal point at the image centre.
Intrinsics heuristic_intrinsics(int width, int height, double fx_error = 0.0);

class HeuristicIntrinsics final : public IntrinsicsProvider {
 public:
  HeuristicIntrinsics(int width, int height, double fx_error = 0.0)
      : K_(heuristic_intrinsics(width, height, fx_error)) {}
  Intrinsics initial_guess(int) const override { return K_; }

 private:
  Intrinsics K_;
};

/// Frame count, timing and resolution of a sequence.
struct SequenceInfo {
  int width = 0;
  int height = 0;
  std::vector<double> timestamps;
  int num_frames() const { return static_cast<int>(timestamps.size()); }
};

struct ProviderSet {
  SequenceInfo sequence;
  std::shared_ptr<const FlowProvider> flow;
  std::shared_ptr<const DepthProvider> depth;
  std::shared_ptr<const EmbeddingProvider> embedding;
  std::shared_ptr<const IntrinsicsProvider> intrinsics;
};

/// Simulator-backed ground truth plus noise. Every render is produced at
/// construction, so queries are read-only and thread-safe. Noise is seeded
/// per query from (noise.seed, frame indices), independent of query order.
class OracleWorld {
 public:
  OracleWorld(sim::SceneModel scene, sim::TrajectorySpec traj, Intrinsics K,
              ProviderNoise noise);

  FlowObservation flow(int i, int j) const;
  DepthPrior depth(int frame) const;
  EmbeddingMap embedding(int frame) const;

  int num_frames() const { return static_cast<int>(renders_.size()); }
  const sim::FrameRender& render(int frame) const { return renders_.at(frame); }
  const sim::SceneModel& scene() const { return scene_; }
  const sim::TrajectorySpec& trajectory() const { return traj_; }
  const Intrinsics& true_intrinsics() const { return K_; }
  const ProviderNoise& noise() const { return noise_; }
  SequenceInfo sequence() const;

  /// Regime labels of `frame`, identical to the simulator's masks.
  const Grid<sim::Regime>& dynamic_mask(int frame) const {
    return renders_.at(frame).regime;
  }

 private:
  sim::SceneModel scene_;
  sim::TrajectorySpec traj_;
  Intrinsics K_;
  ProviderNoise noise_;
  std::vector<sim::FrameRender> renders_;
  Eigen::VectorXf void_latent_;
};

/// Builds a provider set over an oracle world. `fx_error` perturbs the
/// heuristic intrinsics guess.
ProviderSet make_oracle_providers(std::shared_ptr<const OracleWorld> world,
                                  double fx_error = 0.0);

/// Reads tensors written by `semba simulate`:
///   meta.json, frame_NNNNNN.{semb,sdsp,sflw}, flow_NNNNNN_MMMMMM.sflw.
/// frame_i.sflw holds flow i -> i+1. Other forward pairs without a file are
/// chained through consecutive flows; missing backward pairs raise
/// kMissingData.
ProviderSet make_file_providers(const std::filesystem::path& dir,
                                double fx_error = 0.0);

std::string frame_file(int frame, const char* ext);
std::string pair_flow_file(int i, int j);

}  // namespace semba
