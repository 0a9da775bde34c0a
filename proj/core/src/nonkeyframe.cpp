#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "semba/errors.hpp"
#include "semba/solver.hpp"

namespace semba {

namespace {

struct Normal {
  Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
  Vec6 g = Vec6::Zero();
  double energy = 0.0;
  double weighted_sq = 0.0;
  double weight_sum = 0.0;
};

Normal accumulate(std::span<const NonKeyframeObservation> obs,
                  const Intrinsics& K, const Pose& T, double barron_scale,
                  bool jac) {
  Normal n;
  for (const auto& o : obs) {
    const Keyframe& kf = *o.keyframe;
    const int W = kf.disparity.width();
    const int H = kf.disparity.height();
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        const double w = o.flow->confidence(u, v);
        if (w <= 0.0) continue;
        const Pixel px{double(u), double(v)};
        Vec2 r;
        Eigen::Matrix<double, 2, 6> J;
        if (jac) {
          auto res = reproject_with_jacobians(kf.pose, T, K, px, kf.disparity(u, v));
          if (!res) continue;
          r = Vec2(res->first.px.u - u, res->first.px.v - v) - o.flow->flow(u, v);
          J = res->second.d_dst_pose;
        } else {
          auto res = reproject(kf.pose, T, K, px, kf.disparity(u, v));
          if (!res) continue;
          r = Vec2(res->px.u - u, res->px.v - v) - o.flow->flow(u, v);
        }
        const double alpha = o.alpha && !o.alpha->empty() ? (*o.alpha)(u, v) : 2.0;
        const BarronParams bp{alpha, barron_scale};
        const double s = std::sqrt(w) * r.norm();
        const double wk = w * barron_weight(s, bp);
        n.energy += 2.0 * barron_rho(s, bp);
        n.weighted_sq += wk * r.squaredNorm();
        n.weight_sum += wk;
        if (jac) {
          n.H.noalias() += wk * J.transpose() * J;
          n.g.noalias() += wk * J.transpose() * r;
        }
      }
    }
  }
  return n;
}

}  // namespace

NonKeyframeResult estimate_nonkeyframe_pose(
    std::span<const NonKeyframeObservation> observations, const Intrinsics& K,
    const Pose& init, const Pose& fallback, const NonKeyframeConfig& cfg) {
  for (const auto& o : observations) {
    if (o.keyframe == nullptr || o.flow == nullptr) {
      throw Error(ErrorCode::kProviderFailure, "non-keyframe observation missing");
    }
  }
  NonKeyframeResult out;
  out.pose = init;
  double damping = cfg.damping_init;
  Normal cur = accumulate(observations, K, out.pose, cfg.barron_scale, true);
  for (int it = 0; it < cfg.max_iters; ++it) {
    out.iterations = it + 1;
    bool accepted = false;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
      Eigen::Matrix<double, 6, 6> A = cur.H;
      A.diagonal().array() += damping;
      const Vec6 xi = A.ldlt().solve(-cur.g);
      if (!xi.allFinite()) {
        damping *= 10.0;
        continue;
      }
      const Pose trial = compose(exp_se3(xi), out.pose);
      const Normal next = accumulate(observations, K, trial, cfg.barron_scale, true);
      if (std::isfinite(next.energy) && next.energy < cur.energy) {
        const double rel = (cur.energy - next.energy) / std::max(cur.energy, 1e-300);
        out.pose = trial;
        cur = next;
        damping = std::max(1e-8, damping * 0.5);
        accepted = true;
        if (rel < 1e-10) it = cfg.max_iters;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;
  }
  out.rms = cur.weight_sum > 0.0
                ? std::sqrt(cur.weighted_sq / cur.weight_sum)
                : std::numeric_limits<double>::infinity();
  if (!std::isfinite(out.rms) || out.rms > cfg.max_rms) {
    out.pose = fallback;
    out.fallback = true;
  }
  return out;
}

}  // namespace semba
