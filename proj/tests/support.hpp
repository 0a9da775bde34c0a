#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>

#include "semba/graph.hpp"
#include "semba/solver.hpp"

namespace semba::testing {

inline std::filesystem::path source_dir() { return SEMBA_SOURCE_DIR; }
inline std::filesystem::path scenario_path(const char* name) {
  return source_dir() / "scenarios" / name;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Pose random_pose(std::mt19937_64& rng, double rot, double trans) {
  Vec6 xi;
  for (int i = 0; i < 3; ++i) xi[i] = uniform(rng, -trans, trans);
  for (int i = 3; i < 6; ++i) xi[i] = uniform(rng, -rot, rot);
  return exp_se3(xi);
}

// Smooth random K-channel map, unit vectors per pixel.
inline EmbeddingMap smooth_embedding(std::mt19937_64& rng, int K, int W, int H) {
  EmbeddingMap m(K, W, H);
  std::vector<Vec4> waves(K);
  for (auto& w : waves) {
    w = Vec4(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6),
             uniform(rng, 0.0, 6.28), uniform(rng, 0.5, 1.5));
  }
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      auto z = m.at(u, v);
      for (int k = 0; k < K; ++k) {
        const auto& w = waves[k];
        z[k] = static_cast<float>(w[3] * std::sin(w[0] * u + w[1] * v + w[2]) + 0.3);
      }
    }
  }
  normalize_map(m);
  return m;
}

struct ProblemOptions {
  int keyframes = 3;
  int width = 8;
  int height = 8;
  int dim = 6;           // embedding channels, 0 disables the term
  double flow_noise = 0.3;
  double pose_noise = 0.01;
  double disp_noise = 0.05;
  bool all_pairs = true;
};

// Keyframes looking at a slanted surface from nearby poses. The stored state
// is a perturbation of the truth and the flows carry noise, so residuals are
// non-zero.
inline FactorGraph random_problem(std::mt19937_64& rng, const ProblemOptions& o) {
  Intrinsics K{1.2 * o.width, 1.2 * o.width, 0.5 * (o.width - 1) + 0.1,
               0.5 * (o.height - 1) - 0.1, o.width, o.height};
  FactorGraph g(K);
  const double a = uniform(rng, -0.1, 0.1), b = uniform(rng, -0.1, 0.1);
  std::vector<Pose> truth;
  std::vector<DisparityMap> true_disp;
  for (int k = 0; k < o.keyframes; ++k) {
    Keyframe kf;
    kf.timestamp = k;
    const Pose T = k == 0 ? Pose() : random_pose(rng, 0.03, 0.08);
    truth.push_back(T);
    DisparityMap d(o.width, o.height);
    for (int v = 0; v < o.height; ++v) {
      for (int u = 0; u < o.width; ++u) {
        d(u, v) = 0.5 + a * (u - o.width / 2.0) / o.width +
                  b * (v - o.height / 2.0) / o.height;
      }
    }
    true_disp.push_back(d);
    kf.disparity_prior = d;
    kf.disparity = d;
    for (auto& x : kf.disparity) x *= 1.0 + uniform(rng, -o.disp_noise, o.disp_noise);
    for (auto& x : kf.disparity_prior) x *= 1.0 + uniform(rng, -0.02, 0.02);
    kf.pose = k == 0 ? T : compose(random_pose(rng, o.pose_noise, o.pose_noise), T);
    if (o.dim > 0) {
      kf.embedding = smooth_embedding(rng, o.dim, o.width, o.height);
      kf.embedding_raw = kf.embedding;
      kf.descriptor = global_descriptor(kf.embedding);
    }
    g.add_keyframe(std::move(kf));
  }
  auto add = [&](int i, int j) {
    auto obs = std::make_shared<FlowObservation>();
    obs->flow = FlowField(o.width, o.height, Vec2::Zero());
    obs->confidence = Grid<double>(o.width, o.height, 0.0);
    for (int v = 0; v < o.height; ++v) {
      for (int u = 0; u < o.width; ++u) {
        auto r = reproject(truth[i], truth[j], K, {double(u), double(v)},
                           true_disp[i](u, v));
        if (!r) continue;
        obs->flow(u, v) = Vec2(r->px.u - u + uniform(rng, -o.flow_noise, o.flow_noise),
                               r->px.v - v + uniform(rng, -o.flow_noise, o.flow_noise));
        obs->confidence(u, v) = uniform(rng, 0.3, 1.0);
      }
    }
    Edge e;
    e.src = i;
    e.dst = j;
    e.observation = obs;
    g.add_edge(e);
  };
  for (int i = 0; i < o.keyframes; ++i) {
    for (int j = 0; j < o.keyframes; ++j) {
      if (i == j) continue;
      if (!o.all_pairs && std::abs(i - j) != 1) continue;
      add(i, j);
    }
  }
  return g;
}

// True when some reprojection lands within `margin` px of an integer
// coordinate, where bilinear sampling is not differentiable (and the image
// border is a jump). Finite differences are meaningless there.
inline bool near_pixel_lattice(const FactorGraph& g, double margin) {
  for (const auto& e : g.edges()) {
    const auto& s = g.keyframe(e.src);
    const auto& d = g.keyframe(e.dst);
    for (int v = 0; v < s.disparity.height(); ++v) {
      for (int u = 0; u < s.disparity.width(); ++u) {
        auto r = reproject(s.pose, d.pose, g.intrinsics(), {double(u), double(v)},
                           s.disparity(u, v));
        if (!r) continue;
        for (double x : {r->px.u, r->px.v}) {
          if (std::abs(x - std::round(x)) < margin) return true;
        }
      }
    }
  }
  return false;
}

// Dense normal equations from every weighted residual row, then the damped
// solve with LDLT. Reference for the Schur path.
inline Eigen::VectorXd dense_increment(const BundleAdjuster& ba,
                                       const FactorGraph& g, double lambda,
                                       bool intrinsics_free) {
  const auto lay = ba.layout(g, intrinsics_free);
  const int n = lay.total();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (const auto& row : ba.jacobian_rows(g, intrinsics_free)) {
    for (const auto& [i, ji] : row.entries) {
      rhs[i] += row.weight * row.residual * ji;
      for (const auto& [j, jj] : row.entries) H(i, j) += row.weight * ji * jj;
    }
  }
  H.diagonal().array() += lambda;
  return H.ldlt().solve(-rhs);
}

}  // namespace semba::testing
