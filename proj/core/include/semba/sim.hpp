#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semba/embedding.hpp"
#include "semba/flow.hpp"
#include "semba/geometry.hpp"

namespace semba::sim {

enum class TrajectoryKind { kOrbit, kLinear, kRevisitLoop };

TrajectoryKind parse_trajectory_kind(const std::string& s);
const char* to_string(TrajectoryKind kind);

/// Analytic camera path. Poses are world-to-camera with the camera looking
/// at `target`; world y is up, camera axes are x right, y down, z forward.
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kOrbit;
  double duration = 4.0;    // s
  double frame_rate = 15.0; // Hz
  Vec3 target{0.0, 0.9, 0.0};

  // orbit: position on a horizontal circle around `target`
  double radius = 1.2;
  double height = 1.0;
  double start_angle = -1.5707963267948966;  // rad, angle of (x, z)
  double arc = 1.5707963267948966;           // rad swept over the duration

  // linear: start -> end
  Vec3 start{-0.6, 1.0, -1.2};
  Vec3 end{0.6, 1.0, -1.2};

  // revisit-loop: circle of `loop_radius` in the horizontal plane through
  // `start`, returning to it at t = duration
  double loop_radius = 0.5;

  int num_frames() const;
  double time_of(int frame) const { return frame / frame_rate; }
  Pose pose_at(double t) const;
};

/// Camera looking from `eye` at `target` with world up +y.
Pose look_at(const Vec3& eye, const Vec3& target);

enum class ActorKind { kFollow, kLinear };

struct ActorSpec {
  ActorKind kind = ActorKind::kFollow;
  Vec3 half_extents{0.25, 0.22, 0.05};
  // follow: box centre in the camera frame plus a lateral sinusoid
  double distance = 1.4;
  Vec3 offset{0.0, 0.0, 0.0};
  double sway_amplitude = 0.25;  // m along sway_axis
  double sway_frequency = 0.6;   // Hz
  Vec3 sway_axis{1.0, 0.0, 0.0};  // camera frame, normalized on use
  // linear: world-frame start and velocity
  Vec3 position{0.0, 0.5, 0.0};
  Vec3 velocity{0.3, 0.0, 0.0};
  // latent vectors are redrawn every period (s); <= 0 redraws every frame
  double latent_period = 0.0;
};

struct QuasiStaticSpec {
  Vec3 center{0.5, 0.2, 0.3};
  Vec3 half_extents{0.2, 0.2, 0.2};
  Vec3 displacement{-0.45, 0.0, 0.1};
  double yaw = 0.3;         // rad, rotation applied about the box centre
  double event_time = 2.0;  // s
};

struct SceneConfig {
  std::uint64_t seed = 1;
  int k_full = 64;
  double room_half_width = 2.0;  // walls at x, z = +-half_width
  double room_height = 2.6;
  double surfel_spacing = 0.06;
  int static_boxes = 2;
  double latent_sigma = 0.028;  // per dimension, within-object spread
  double latent_wavelength = 1.5;  // m, spatial scale of within-object variation
  std::vector<ActorSpec> actors;
  std::vector<QuasiStaticSpec> quasi_static;
};

enum class Regime : std::uint8_t { kStatic = 0, kQuasi = 1, kActor = 2 };

/// Smooth within-object latent variation: random Fourier features with
/// K-dimensional amplitudes.
struct LatentField {
  std::vector<Vec3> omega;
  std::vector<double> phase;
  std::vector<Eigen::VectorXd> amp;

  Eigen::VectorXd operator()(const Vec3& p) const;
};

/// Body-frame surfels of one object. Static objects use the identity body
/// transform; movers are placed by their motion model at each time.
struct SceneObject {
  enum class Type { kStatic, kActor, kQuasi } type = Type::kStatic;
  int spec_index = -1;  // into SceneConfig::actors / quasi_static
  std::vector<Vec3> points;
  Eigen::MatrixXf latents;  // k_full x points
  Eigen::VectorXd centroid;  // unit cluster mean
  LatentField field;          // unused for actors (redrawn per period)
};

struct SceneModel {
  SceneConfig config;
  std::vector<SceneObject> objects;

  std::size_t num_surfels() const;
};

/// Deterministic in (config.seed, config).
SceneModel generate_scene(const SceneConfig& config);

/// Body-to-world transform of object `obj` at time t, as a Pose mapping body
/// points to world points.
Pose object_motion(const SceneModel& scene, const TrajectorySpec& traj, int obj,
                   double t);

/// Quasi-static transform (identity before the event, the displacement
/// after).
Pose displacement_event(const QuasiStaticSpec& q, double t);

/// Latent of surfel `idx` of object `obj` at time t (actors swap latents per
/// period).
Eigen::VectorXf surfel_latent(const SceneModel& scene,
                              const TrajectorySpec& traj, int obj, int idx,
                              double t);

/// Cluster mean used for actor latents in the given period.
Eigen::VectorXd actor_centroid(const SceneModel& scene, int obj, long period);

struct FrameRender {
  double time = 0.0;
  Pose pose;
  DisparityMap disparity;          // 1/Z, 0 on invalid pixels
  Grid<unsigned char> valid;
  Grid<int> object;                // -1 on invalid pixels
  Grid<int> surfel;                // index within the object
  Grid<Regime> regime;             // invalid pixels are labelled static
  EmbeddingMap embedding;          // k_full channels, noise free
};

FrameRender render(const SceneModel& scene, const TrajectorySpec& traj,
                   double t, const Intrinsics& K);

struct GtFlow {
  FlowField flow;
  Grid<unsigned char> valid;  // source pixel valid and target in front
  Grid<double> target_depth;  // Z of the moved point in the second camera
};

/// True when the bilinear footprint of `target` in `r2` lies on the same
/// object at a depth within `rel_tol` of `depth` (not occluded, no
/// discontinuity).
bool target_visible(const FrameRender& r2, int object, const Vec2& target,
                    double depth, double rel_tol = 0.05);

/// Ground-truth correspondence flow from the render at t1 to time t2: the
/// back-projected pixel moves with its object's rigid motion.
/// `rigid_only` ignores object motion (camera-induced flow).
GtFlow gt_flow(const SceneModel& scene, const TrajectorySpec& traj,
               const FrameRender& r1, double t2, const Intrinsics& K,
               bool rigid_only = false);

/// Fraction of valid pixels labelled `regime`.
double regime_fraction(const FrameRender& r, Regime regime);

}  // namespace semba::sim
