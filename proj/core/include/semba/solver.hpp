#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "semba/graph.hpp"
#include "semba/robust.hpp"

namespace semba {

struct SolverConfig {
  double gamma_photo = 1.0;
  double gamma_embed = 0.1;
  double alpha_disp = 1.0;
  double lambda_embed = kLambdaEmbed;

  int max_iters = 8;    // Gauss-Newton iterations per outer iteration
  int outer_iters = 2;  // stability-field refreshes per solve
  int max_retries = 5;
  double damping_init = 1e-4;
  double damping_up = 10.0;
  double damping_down = 0.5;
  double damping_min = 1e-8;
  double rel_tolerance = 1e-12;  // stop when the relative decrease is below

  bool use_kernel = true;
  bool kernel_on_embed = false;
  bool optimize_intrinsics = true;
  int intrinsics_burn_in = 3;  // outer iterations with K held fixed

  double flow_scale = 1.0;    // px, flow residual whitening
  double barron_scale = 1.0;  // c, in whitened units
  double min_disparity = 1e-4;

  bool fd_check = false;
  double fd_step = 1e-6;

  bool valid() const {
    return gamma_photo >= 0.0 && gamma_embed >= 0.0 && alpha_disp >= 0.0 &&
           max_iters >= 0 && outer_iters >= 1 && damping_init > 0.0 &&
           flow_scale > 0.0 && barron_scale > 0.0;
  }
};

/// Per-pixel residuals of one directed edge src -> dst.
struct EdgeResiduals {
  Grid<Vec2> flow_residual;      // (mu - u) - Omega
  Grid<double> embed_residual;   // lambda sqrt(2 (1 - cs))
  Grid<double> cosine;           // cs_ij(u)
  Grid<double> flow_conf;        // w(u)
  Grid<double> kernel_weight;    // w_ark, 1 until apply_adaptive_kernel
  Grid<unsigned char> valid;     // reprojection succeeded
  Grid<unsigned char> embed_valid;
};

/// Flow part: Omega_prior - Omega with Omega_prior = mu_ij - u from the current
/// state. Throws kProviderFailure when the edge carries no observation.
EdgeResiduals photometric_residuals(const FactorGraph& graph, const Edge& edge);

/// Adds the embedding part (bilinear sample of the dst working map at mu,
/// cosine with the src pixel, lambda sqrt(2(1 - cs))) to `res`.
void embedding_residuals(const FactorGraph& graph, const Edge& edge,
                         EdgeResiduals& res, double lambda = kLambdaEmbed);

/// sqrt(alpha_disp) (d - d_prior) per pixel.
Grid<double> regularization_residuals(const Keyframe& kf, double alpha_disp);

/// kernel_weight(u) = barron_weight(sqrt(w) |r| / flow_scale, shape_map(S(u))).
void apply_adaptive_kernel(EdgeResiduals& res, const StabilityField& stability,
                           const RegimeThresholds& thresholds,
                           double flow_scale = 1.0, double barron_scale = 1.0);

struct EnergyBreakdown {
  double photo = 0.0;
  double embed = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct IterationRecord {
  int solve = 0;  // index of the solve call within a run
  int iteration = 0;
  int outer = 0;
  EnergyBreakdown energy;
  double energy_before = 0.0;
  double damping = 0.0;
  bool accepted = false;
};

struct SolveReport {
  std::vector<IterationRecord> iterations;
  EnergyBreakdown initial;
  EnergyBreakdown final;
  int accepted_steps = 0;
  bool ran = false;
  std::string message;
  std::optional<double> gradient_check_error;
};

/// solve,iteration,outer,e_photo_ark,e_embed,e_reg,e_total,damping,accepted
void write_energy_csv(std::ostream& os, std::span<const IterationRecord> rows,
                      bool header = true);

/// Sparse Jacobian row over the full variable vector (camera block first,
/// then disparities), used by the dense reference solver in tests.
struct JacobianRow {
  double residual = 0.0;
  double weight = 0.0;
  std::vector<std::pair<int, double>> entries;
};

struct VariableLayout {
  std::vector<int> pose_offset;       // per keyframe, -1 when held fixed
  int intrinsics_offset = -1;         // -1 when K is held fixed
  int camera_dim = 0;
  std::vector<int> disparity_offset;  // per keyframe, -1 for frozen keyframes
  int disparity_dim = 0;
  int total() const { return camera_dim + disparity_dim; }
};

/// Joint Gauss-Newton / Levenberg bundle adjuster over the active window.
/// Keyframe 0 is the gauge and never moves; frozen keyframes enter only
/// through their edges to active keyframes.
class BundleAdjuster {
 public:
  explicit BundleAdjuster(SolverConfig cfg = {}, RegimeThresholds thr = {});

  const SolverConfig& config() const { return cfg_; }
  SolverConfig& config() { return cfg_; }
  const RegimeThresholds& thresholds() const { return thr_; }

  /// Runs outer_iters x max_iters damped Gauss-Newton iterations. A graph
  /// with fewer than two keyframes or no edges is a no-op.
  SolveReport solve(FactorGraph& graph);

  /// Recomputes per-keyframe stability fields from current-state cosines and
  /// maps them to Barron shapes. With the kernel off every alpha is 2.
  void refresh_kernel(const FactorGraph& graph);
  const std::vector<StabilityField>& stability() const { return stability_; }
  const std::vector<Grid<double>>& alpha() const { return alpha_; }

  EnergyBreakdown energy(const FactorGraph& graph) const;

  VariableLayout layout(const FactorGraph& graph, bool intrinsics_free) const;

  /// Full Gauss-Newton increment (camera block then disparities) from the
  /// Schur-reduced system with Levenberg damping `lambda`.
  Eigen::VectorXd solve_increment(const FactorGraph& graph, double lambda,
                                  bool intrinsics_free) const;

  /// Every weighted residual row at the current state.
  std::vector<JacobianRow> jacobian_rows(const FactorGraph& graph,
                                         bool intrinsics_free) const;

  /// Analytic gradient of E_total over all variables.
  Eigen::VectorXd gradient(const FactorGraph& graph, bool intrinsics_free) const;

  /// Applies an increment laid out by `layout`.
  void apply_increment(FactorGraph& graph, const VariableLayout& layout,
                       const Eigen::VectorXd& delta) const;

  /// Max relative error between the analytic gradient and central finite
  /// differences of energy() over every variable.
  double check_gradient(FactorGraph& graph, bool intrinsics_free) const;

 private:
  struct Linearization;
  Linearization linearize(const FactorGraph& graph,
                          const VariableLayout& layout) const;
  Eigen::VectorXd solve_linearization(const Linearization& lin,
                                      const VariableLayout& layout,
                                      double lambda) const;

  SolverConfig cfg_;
  RegimeThresholds thr_;
  std::vector<StabilityField> stability_;
  std::vector<Grid<double>> alpha_;
};

struct NonKeyframeObservation {
  const Keyframe* keyframe = nullptr;
  const FlowObservation* flow = nullptr;  // keyframe -> frame
  const Grid<double>* alpha = nullptr;    // optional Barron shapes
};

struct NonKeyframeConfig {
  int max_iters = 20;
  int max_retries = 5;
  double damping_init = 1e-4;
  double max_rms = 1.0;  // px, robust-weighted; above this the fit diverged
  double barron_scale = 1.0;
};

struct NonKeyframeResult {
  Pose pose;
  bool fallback = false;
  double rms = 0.0;
  int iterations = 0;
};

/// Pose of a non-keyframe by flow alignment against fixed keyframes (their
/// poses and disparities are not touched). On divergence returns `fallback`
/// with the flag set.
NonKeyframeResult estimate_nonkeyframe_pose(
    std::span<const NonKeyframeObservation> observations, const Intrinsics& K,
    const Pose& init, const Pose& fallback, const NonKeyframeConfig& cfg = {});

}  // namespace semba
