#include "semba/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include <Eigen/Cholesky>

#include "semba/errors.hpp"
#include "semba/parallel.hpp"

namespace semba {

namespace {

// Camera columns of one pixel row: src pose (6), dst pose (6), K (4).
constexpr int kCamCols = 16;
using CamRow = Eigen::Matrix<double, 1, kCamCols>;
using CamHessian = Eigen::Matrix<double, kCamCols, kCamCols>;

constexpr double kMinOneMinusCs = 1e-12;

struct PixelEval {
  bool flow_ok = false;
  bool embed_ok = false;
  Vec2 flow_res = Vec2::Zero();
  double conf = 0.0;
  double cs = 1.0;
  double embed_res = 0.0;
  Eigen::Matrix<double, 2, kCamCols> J_flow;
  Vec2 J_flow_d = Vec2::Zero();
  CamRow J_embed;
  double J_embed_d = 0.0;
};

// Per-edge evaluation helper; holds the normalized source embeddings.
class EdgeEvaluator {
 public:
  EdgeEvaluator(const FactorGraph& graph, const Edge& edge, bool want_embed,
                double lambda)
      : src_(graph.keyframe(edge.src)),
        dst_(graph.keyframe(edge.dst)),
        K_(graph.intrinsics(src_.intrinsics_id)),
        obs_(edge.observation.get()),
        lambda_(lambda) {
    embed_ = want_embed && !src_.embedding.empty() && !dst_.embedding.empty() &&
             src_.embedding.dim() == dst_.embedding.dim();
    if (embed_) {
      sample_.resize(dst_.embedding.dim());
      zsrc_.resize(dst_.embedding.dim());
    }
  }

  bool has_embedding() const { return embed_; }
  const Keyframe& src() const { return src_; }
  const Keyframe& dst() const { return dst_; }

  void eval(int u, int v, bool jac, PixelEval& out) {
    out.flow_ok = false;
    out.embed_ok = false;
    const double d = src_.disparity(u, v);
    const Pixel px{double(u), double(v)};
    Pixel mu;
    ReprojectionJacobians J;
    if (jac) {
      auto r = reproject_with_jacobians(src_.pose, dst_.pose, K_, px, d);
      if (!r) return;
      mu = r->first.px;
      J = r->second;
      out.J_flow.block<2, 6>(0, 0) = J.d_src_pose;
      out.J_flow.block<2, 6>(0, 6) = J.d_dst_pose;
      out.J_flow.block<2, 4>(0, 12) = J.d_intrinsics;
      out.J_flow_d = J.d_disparity;
    } else {
      auto r = reproject(src_.pose, dst_.pose, K_, px, d);
      if (!r) return;
      mu = r->px;
    }
    out.flow_ok = true;
    if (obs_ != nullptr) {
      out.flow_res = Vec2(mu.u - u, mu.v - v) - obs_->flow(u, v);
      out.conf = obs_->confidence(u, v);
    } else {
      out.flow_res.setZero();
      out.conf = 0.0;
    }

    if (!embed_) return;
    zsrc_ = src_.embedding.vec(u, v).cast<double>();
    const double nz = zsrc_.norm();
    if (nz <= 1e-12) return;
    zsrc_ /= nz;
    if (!bilinear_sample(dst_.embedding, mu, sample_, jac ? &grad_ : nullptr)) {
      return;
    }
    const double ns = sample_.norm();
    if (ns <= 1e-12) return;
    const double cs = std::clamp(zsrc_.dot(sample_) / ns, -1.0, 1.0);
    out.cs = cs;
    out.embed_res = embedding_residual(cs, lambda_);
    out.embed_ok = true;
    if (jac) {
      // dcs/dz_hat = (zbar - cs z_hat/|z_hat|) / |z_hat|
      const Eigen::VectorXd dcs_dz = (zsrc_ - cs * sample_ / ns) / ns;
      const Eigen::RowVector2d dcs_dmu = dcs_dz.transpose() * grad_;
      const double dr_dcs =
          -lambda_ / std::sqrt(2.0 * std::max(1.0 - cs, kMinOneMinusCs));
      const Eigen::RowVector2d dr_dmu = dr_dcs * dcs_dmu;
      out.J_embed = dr_dmu * out.J_flow;
      out.J_embed_d = dr_dmu.dot(out.J_flow_d);
    }
  }

 private:
  const Keyframe& src_;
  const Keyframe& dst_;
  const Intrinsics& K_;
  const FlowObservation* obs_;
  double lambda_;
  bool embed_ = false;
  Eigen::VectorXd sample_;
  Eigen::VectorXd zsrc_;
  BilinearGradient grad_;
};

double alpha_at(const std::vector<Grid<double>>& alpha, int kf, int u, int v) {
  if (kf < 0 || static_cast<std::size_t>(kf) >= alpha.size()) return 2.0;
  const auto& g = alpha[kf];
  if (g.empty()) return 2.0;
  return g(u, v);
}

// Weighted pixel contributions under the active kernel configuration.
struct WeightedTerms {
  double photo_energy = 0.0;
  double photo_weight = 0.0;  // per flow row
  double embed_energy = 0.0;
  double embed_weight = 0.0;
};

WeightedTerms weigh(const PixelEval& e, const SolverConfig& cfg, double alpha) {
  WeightedTerms t;
  if (e.flow_ok && e.conf > 0.0 && cfg.gamma_photo > 0.0) {
    const double inv_s2 = 1.0 / (cfg.flow_scale * cfg.flow_scale);
    const double s2 = e.conf * e.flow_res.squaredNorm() * inv_s2;
    if (cfg.use_kernel) {
      const BarronParams bp{alpha, cfg.barron_scale};
      const double s = std::sqrt(s2);
      t.photo_energy = cfg.gamma_photo * 2.0 * barron_rho(s, bp);
      t.photo_weight =
          cfg.gamma_photo * e.conf * inv_s2 * barron_weight(s, bp);
    } else {
      t.photo_energy = cfg.gamma_photo * s2;
      t.photo_weight = cfg.gamma_photo * e.conf * inv_s2;
    }
  }
  if (e.embed_ok && e.conf > 0.0 && cfg.gamma_embed > 0.0) {
    const double s2 = e.conf * e.embed_res * e.embed_res;
    if (cfg.use_kernel && cfg.kernel_on_embed) {
      const BarronParams bp{alpha, cfg.barron_scale};
      const double s = std::sqrt(s2);
      t.embed_energy = cfg.gamma_embed * 2.0 * barron_rho(s, bp);
      t.embed_weight = cfg.gamma_embed * e.conf * barron_weight(s, bp);
    } else {
      t.embed_energy = cfg.gamma_embed * s2;
      t.embed_weight = cfg.gamma_embed * e.conf;
    }
  }
  return t;
}

bool edge_is_live(const FactorGraph& graph, const Edge& e) {
  if (!e.observation) return false;
  return !graph.keyframe(e.src).frozen || !graph.keyframe(e.dst).frozen;
}

std::vector<std::vector<const Edge*>> edges_by_source(const FactorGraph& graph) {
  std::vector<std::vector<const Edge*>> out(graph.num_keyframes());
  for (const auto& e : graph.edges()) {
    if (edge_is_live(graph, e)) out[e.src].push_back(&e);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Residual views

EdgeResiduals photometric_residuals(const FactorGraph& graph, const Edge& edge) {
  if (!edge.observation) {
    throw Error(ErrorCode::kProviderFailure,
                "edge " + std::to_string(edge.src) + "->" +
                    std::to_string(edge.dst) + " has no flow observation");
  }
  const Keyframe& src = graph.keyframe(edge.src);
  const int W = src.disparity.width();
  const int H = src.disparity.height();
  EdgeResiduals res{Grid<Vec2>(W, H, Vec2::Zero()), Grid<double>(W, H, 0.0),
                    Grid<double>(W, H, 0.0),        Grid<double>(W, H, 0.0),
                    Grid<double>(W, H, 1.0),        Grid<unsigned char>(W, H, 0),
                    Grid<unsigned char>(W, H, 0)};
  EdgeEvaluator ev(graph, edge, false, kLambdaEmbed);
  PixelEval pe;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      ev.eval(u, v, false, pe);
      if (!pe.flow_ok) continue;
      res.valid(u, v) = 1;
      res.flow_residual(u, v) = pe.flow_res;
      res.flow_conf(u, v) = pe.conf;
    }
  }
  return res;
}

void embedding_residuals(const FactorGraph& graph, const Edge& edge,
                         EdgeResiduals& res, double lambda) {
  EdgeEvaluator ev(graph, edge, true, lambda);
  if (!ev.has_embedding()) {
    throw Error(ErrorCode::kProviderFailure, "embedding maps missing");
  }
  const int W = ev.src().disparity.width();
  const int H = ev.src().disparity.height();
  if (res.cosine.empty()) {
    res.cosine = Grid<double>(W, H, 0.0);
    res.embed_residual = Grid<double>(W, H, 0.0);
    res.embed_valid = Grid<unsigned char>(W, H, 0);
  }
  PixelEval pe;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      ev.eval(u, v, false, pe);
      res.embed_valid(u, v) = pe.embed_ok ? 1 : 0;
      res.cosine(u, v) = pe.embed_ok ? pe.cs : 0.0;
      res.embed_residual(u, v) = pe.embed_ok ? pe.embed_res : 0.0;
    }
  }
}

Grid<double> regularization_residuals(const Keyframe& kf, double alpha_disp) {
  if (!kf.disparity.same_shape(kf.disparity_prior)) {
    throw Error(ErrorCode::kDimensionMismatch, "disparity prior shape");
  }
  Grid<double> out(kf.disparity.width(), kf.disparity.height());
  const double s = std::sqrt(alpha_disp);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = s * (kf.disparity[i] - kf.disparity_prior[i]);
  }
  return out;
}

void apply_adaptive_kernel(EdgeResiduals& res, const StabilityField& stability,
                           const RegimeThresholds& thresholds,
                           double flow_scale, double barron_scale) {
  if (!res.flow_residual.same_shape(stability.stability)) {
    throw Error(ErrorCode::kDimensionMismatch, "stability field shape");
  }
  if (!res.kernel_weight.same_shape(res.flow_residual)) {
    res.kernel_weight = Grid<double>(res.flow_residual.width(), res.flow_residual.height(), 1.0);
  }
  for (std::size_t i = 0; i < res.kernel_weight.size(); ++i) {
    if (!res.valid[i]) {
      res.kernel_weight[i] = 0.0;
      continue;
    }
    const double alpha = shape_map(stability.stability[i], thresholds);
    const double s =
        std::sqrt(res.flow_conf[i]) * res.flow_residual[i].norm() / flow_scale;
    res.kernel_weight[i] = barron_weight(s, {alpha, barron_scale});
  }
}

void write_energy_csv(std::ostream& os, std::span<const IterationRecord> rows,
                      bool header) {
  if (header) {
    os << "solve,iteration,outer,e_photo_ark,e_embed,e_reg,e_total,damping,accepted\n";
  }
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.10e,%.10e,%.10e,%.10e,%.3e,%d\n",
                  r.solve, r.iteration, r.outer, r.energy.photo, r.energy.embed,
                  r.energy.reg, r.energy.total, r.damping, r.accepted ? 1 : 0);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Bundle adjuster

struct BundleAdjuster::Linearization {
  struct Source {
    int kf = -1;
    std::vector<int> block_global;  // global offset of each local block
    std::vector<int> block_size;
    int L = 0;
    Eigen::MatrixXd A;  // L x L
    Eigen::VectorXd g;  // L
    bool has_disparity = false;
    int disparity_offset = -1;
    Eigen::MatrixXd B;   // L x npix
    Eigen::VectorXd D;   // npix
    Eigen::VectorXd gy;  // npix
  };
  std::vector<Source> sources;
};

BundleAdjuster::BundleAdjuster(SolverConfig cfg, RegimeThresholds thr)
    : cfg_(cfg), thr_(thr) {
  if (!cfg_.valid()) throw Error(ErrorCode::kConfig, "invalid SolverConfig");
  if (!thr_.valid()) throw Error(ErrorCode::kConfig, "invalid RegimeThresholds");
}

VariableLayout BundleAdjuster::layout(const FactorGraph& graph,
                                      bool intrinsics_free) const {
  VariableLayout lay;
  const int n = static_cast<int>(graph.num_keyframes());
  lay.pose_offset.assign(n, -1);
  lay.disparity_offset.assign(n, -1);
  int off = 0;
  for (int k = 1; k < n; ++k) {  // keyframe 0 is the gauge
    if (graph.keyframe(k).frozen) continue;
    lay.pose_offset[k] = off;
    off += 6;
  }
  if (intrinsics_free) {
    lay.intrinsics_offset = off;
    off += 4;
  }
  lay.camera_dim = off;
  int doff = 0;
  for (int k = 0; k < n; ++k) {
    const auto& kf = graph.keyframe(k);
    if (kf.frozen) continue;
    lay.disparity_offset[k] = off + doff;
    doff += static_cast<int>(kf.disparity.size());
  }
  lay.disparity_dim = doff;
  return lay;
}

void BundleAdjuster::refresh_kernel(const FactorGraph& graph) {
  const std::size_t n = graph.num_keyframes();
  stability_.assign(n, StabilityField{});
  alpha_.assign(n, Grid<double>{});
  if (!cfg_.use_kernel) return;
  std::vector<std::vector<const Edge*>> out(n);
  for (const auto& e : graph.edges()) out[e.src].push_back(&e);

  parallel_for(n, [&](std::size_t k) {
    if (out[k].empty()) return;
    const Keyframe& src = graph.keyframe(static_cast<int>(k));
    const int W = src.disparity.width();
    const int H = src.disparity.height();
    std::vector<Grid<double>> cs;
    std::vector<Grid<unsigned char>> valid;
    cs.reserve(out[k].size());
    valid.reserve(out[k].size());
    PixelEval pe;
    for (const Edge* e : out[k]) {
      EdgeEvaluator ev(graph, *e, true, cfg_.lambda_embed);
      if (!ev.has_embedding()) continue;
      Grid<double> c(W, H, 0.0);
      Grid<unsigned char> ok(W, H, 0);
      for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
          ev.eval(u, v, false, pe);
          if (!pe.embed_ok) continue;
          c(u, v) = pe.cs;
          ok(u, v) = 1;
        }
      }
      cs.push_back(std::move(c));
      valid.push_back(std::move(ok));
    }
    if (cs.empty()) return;
    std::vector<CosineGrid> stack;
    for (std::size_t i = 0; i < cs.size(); ++i) stack.push_back({&cs[i], &valid[i]});
    StabilityField f = stability_field(stack);
    Grid<double> a(W, H);
    for (std::size_t i = 0; i < a.size(); ++i) {
      // Pixels never observed from any neighbour keep full l2 influence;
      // their flow terms carry zero confidence in practice.
      a[i] = f.count[i] > 0 ? shape_map(f.stability[i], thr_) : 2.0;
    }
    stability_[k] = std::move(f);
    alpha_[k] = std::move(a);
  });
}

EnergyBreakdown BundleAdjuster::energy(const FactorGraph& graph) const {
  const auto by_src = edges_by_source(graph);
  const std::size_t n = graph.num_keyframes();
  std::vector<EnergyBreakdown> parts(n);
  const bool want_embed = cfg_.gamma_embed > 0.0;
  parallel_for(n, [&](std::size_t k) {
    EnergyBreakdown e;
    const Keyframe& kf = graph.keyframe(static_cast<int>(k));
    PixelEval pe;
    for (const Edge* edge : by_src[k]) {
      EdgeEvaluator ev(graph, *edge, want_embed, cfg_.lambda_embed);
      for (int v = 0; v < kf.disparity.height(); ++v) {
        for (int u = 0; u < kf.disparity.width(); ++u) {
          ev.eval(u, v, false, pe);
          const auto t = weigh(pe, cfg_, alpha_at(alpha_, edge->src, u, v));
          e.photo += t.photo_energy;
          e.embed += t.embed_energy;
        }
      }
    }
    if (!kf.frozen && cfg_.alpha_disp > 0.0) {
      for (std::size_t i = 0; i < kf.disparity.size(); ++i) {
        const double r = kf.disparity[i] - kf.disparity_prior[i];
        e.reg += cfg_.alpha_disp * r * r;
      }
    }
    parts[k] = e;
  });
  EnergyBreakdown total;
  for (const auto& p : parts) {
    total.photo += p.photo;
    total.embed += p.embed;
    total.reg += p.reg;
  }
  total.total = total.photo + total.embed + total.reg;
  return total;
}

BundleAdjuster::Linearization BundleAdjuster::linearize(
    const FactorGraph& graph, const VariableLayout& lay) const {
  const auto by_src = edges_by_source(graph);
  const std::size_t n = graph.num_keyframes();
  Linearization lin;
  lin.sources.resize(n);
  const bool want_embed = cfg_.gamma_embed > 0.0;

  parallel_for(n, [&](std::size_t k) {
    auto& S = lin.sources[k];
    S.kf = static_cast<int>(k);
    const Keyframe& kf = graph.keyframe(S.kf);
    S.has_disparity = lay.disparity_offset[k] >= 0;
    S.disparity_offset = lay.disparity_offset[k];
    if (by_src[k].empty() && !S.has_disparity) return;

    // Local camera blocks: own pose, each destination pose, intrinsics.
    std::map<int, int> local_of_global;
    auto add_block = [&](int global, int size) {
      if (global < 0 || local_of_global.count(global)) return;
      local_of_global[global] = S.L;
      S.block_global.push_back(global);
      S.block_size.push_back(size);
      S.L += size;
    };
    add_block(lay.pose_offset[k], 6);
    for (const Edge* e : by_src[k]) add_block(lay.pose_offset[e->dst], 6);
    add_block(lay.intrinsics_offset, 4);

    const int W = kf.disparity.width();
    const int H = kf.disparity.height();
    const int npix = W * H;
    S.A = Eigen::MatrixXd::Zero(S.L, S.L);
    S.g = Eigen::VectorXd::Zero(S.L);
    if (S.has_disparity) {
      S.B = Eigen::MatrixXd::Zero(S.L, npix);
      S.D = Eigen::VectorXd::Zero(npix);
      S.gy = Eigen::VectorXd::Zero(npix);
      for (int i = 0; i < npix; ++i) {
        if (cfg_.alpha_disp > 0.0) {
          S.D[i] += cfg_.alpha_disp;
          S.gy[i] += cfg_.alpha_disp * (kf.disparity[i] - kf.disparity_prior[i]);
        }
      }
    }

    PixelEval pe;
    for (const Edge* e : by_src[k]) {
      std::array<int, kCamCols> loc;
      loc.fill(-1);
      auto map_block = [&](int global, int col0, int size) {
        if (global < 0) return;
        const int l = local_of_global.at(global);
        for (int c = 0; c < size; ++c) loc[col0 + c] = l + c;
      };
      map_block(lay.pose_offset[e->src], 0, 6);
      map_block(lay.pose_offset[e->dst], 6, 6);
      map_block(lay.intrinsics_offset, 12, 4);

      CamHessian Hcc = CamHessian::Zero();
      Eigen::Matrix<double, kCamCols, 1> gc =
          Eigen::Matrix<double, kCamCols, 1>::Zero();
      EdgeEvaluator ev(graph, *e, want_embed, cfg_.lambda_embed);
      for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
          ev.eval(u, v, true, pe);
          const auto t = weigh(pe, cfg_, alpha_at(alpha_, e->src, u, v));
          const int pix = v * W + u;
          Eigen::Matrix<double, kCamCols, 1> bu =
              Eigen::Matrix<double, kCamCols, 1>::Zero();
          double Du = 0.0;
          double gyu = 0.0;
          if (t.photo_weight > 0.0) {
            const double w = t.photo_weight;
            Hcc.noalias() += w * pe.J_flow.transpose() * pe.J_flow;
            gc.noalias() += w * pe.J_flow.transpose() * pe.flow_res;
            bu.noalias() += w * pe.J_flow.transpose() * pe.J_flow_d;
            Du += w * pe.J_flow_d.squaredNorm();
            gyu += w * pe.J_flow_d.dot(pe.flow_res);
          }
          if (t.embed_weight > 0.0) {
            const double w = t.embed_weight;
            Hcc.noalias() += w * pe.J_embed.transpose() * pe.J_embed;
            gc.noalias() += (w * pe.embed_res) * pe.J_embed.transpose();
            bu.noalias() += (w * pe.J_embed_d) * pe.J_embed.transpose();
            Du += w * pe.J_embed_d * pe.J_embed_d;
            gyu += w * pe.J_embed_d * pe.embed_res;
          }
          if (S.has_disparity && (t.photo_weight > 0.0 || t.embed_weight > 0.0)) {
            for (int a = 0; a < kCamCols; ++a) {
              if (loc[a] >= 0) S.B(loc[a], pix) += bu[a];
            }
            S.D[pix] += Du;
            S.gy[pix] += gyu;
          }
        }
      }
      for (int a = 0; a < kCamCols; ++a) {
        if (loc[a] < 0) continue;
        S.g[loc[a]] += gc[a];
        for (int b = 0; b < kCamCols; ++b) {
          if (loc[b] >= 0) S.A(loc[a], loc[b]) += Hcc(a, b);
        }
      }
    }
  });
  return lin;
}

Eigen::VectorXd BundleAdjuster::solve_linearization(
    const Linearization& lin, const VariableLayout& lay, double lambda) const {
  const int C = lay.camera_dim;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(C, C);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(C);

  auto scatter_index = [](const Linearization::Source& src) {
    std::vector<int> idx(src.L);
    int l = 0;
    for (std::size_t b = 0; b < src.block_global.size(); ++b) {
      for (int c = 0; c < src.block_size[b]; ++c) idx[l++] = src.block_global[b] + c;
    }
    return idx;
  };

  for (const auto& src : lin.sources) {
    if (src.L == 0 && !src.has_disparity) continue;
    Eigen::MatrixXd Sl = src.A;
    Eigen::VectorXd rl = src.g;
    if (src.has_disparity && src.L > 0) {
      const Eigen::VectorXd dinv = (src.D.array() + lambda).inverse().matrix();
      const Eigen::MatrixXd Bs = src.B * dinv.asDiagonal();
      Sl.noalias() -= Bs * src.B.transpose();
      rl.noalias() -= Bs * src.gy;
    }
    const auto idx = scatter_index(src);
    for (int a = 0; a < src.L; ++a) {
      rhs[idx[a]] += rl[a];
      for (int b = 0; b < src.L; ++b) S(idx[a], idx[b]) += Sl(a, b);
    }
  }

  Eigen::VectorXd dx = Eigen::VectorXd::Zero(C);
  if (C > 0) {
    S.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const auto dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    const double dmin = dvec.minCoeff();
    if (ldlt.info() != Eigen::Success || !(dmin > 0.0) ||
        !std::isfinite(dmax)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "reduced system not positive definite (pivot range "
                    "[%.3e, %.3e], damping %.1e)",
                    dmin, dmax, lambda);
      throw Error(ErrorCode::kSingularSystem, buf);
    }
    dx = ldlt.solve(-rhs);
  }

  Eigen::VectorXd delta = Eigen::VectorXd::Zero(lay.total());
  delta.head(C) = dx;
  for (const auto& src : lin.sources) {
    if (!src.has_disparity) continue;
    const auto npix = src.D.size();
    Eigen::VectorXd rhs_y = src.gy;
    if (src.L > 0) {
      const auto idx = scatter_index(src);
      Eigen::VectorXd dxl(src.L);
      for (int a = 0; a < src.L; ++a) dxl[a] = dx[idx[a]];
      rhs_y.noalias() += src.B.transpose() * dxl;
    }
    delta.segment(src.disparity_offset, npix) =
        -(rhs_y.array() / (src.D.array() + lambda)).matrix();
  }
  return delta;
}

Eigen::VectorXd BundleAdjuster::solve_increment(const FactorGraph& graph,
                                                double lambda,
                                                bool intrinsics_free) const {
  const auto lay = layout(graph, intrinsics_free);
  return solve_linearization(linearize(graph, lay), lay, lambda);
}

Eigen::VectorXd BundleAdjuster::gradient(const FactorGraph& graph,
                                         bool intrinsics_free) const {
  const auto lay = layout(graph, intrinsics_free);
  const auto lin = linearize(graph, lay);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.total());
  for (const auto& src : lin.sources) {
    int l = 0;
    for (std::size_t b = 0; b < src.block_global.size(); ++b) {
      for (int c = 0; c < src.block_size[b]; ++c) {
        g[src.block_global[b] + c] += src.g[l++];
      }
    }
    if (src.has_disparity) {
      g.segment(src.disparity_offset, src.gy.size()) += src.gy;
    }
  }
  return 2.0 * g;
}

std::vector<JacobianRow> BundleAdjuster::jacobian_rows(
    const FactorGraph& graph, bool intrinsics_free) const {
  const auto lay = layout(graph, intrinsics_free);
  const auto by_src = edges_by_source(graph);
  const bool want_embed = cfg_.gamma_embed > 0.0;
  std::vector<JacobianRow> rows;

  for (std::size_t k = 0; k < graph.num_keyframes(); ++k) {
    const Keyframe& kf = graph.keyframe(static_cast<int>(k));
    const int W = kf.disparity.width();
    PixelEval pe;
    for (const Edge* e : by_src[k]) {
      std::array<int, kCamCols> col;
      col.fill(-1);
      for (int c = 0; c < 6; ++c) {
        if (lay.pose_offset[e->src] >= 0) col[c] = lay.pose_offset[e->src] + c;
        if (lay.pose_offset[e->dst] >= 0) col[6 + c] = lay.pose_offset[e->dst] + c;
      }
      for (int c = 0; c < 4; ++c) {
        if (lay.intrinsics_offset >= 0) col[12 + c] = lay.intrinsics_offset + c;
      }
      EdgeEvaluator ev(graph, *e, want_embed, cfg_.lambda_embed);
      for (int v = 0; v < kf.disparity.height(); ++v) {
        for (int u = 0; u < W; ++u) {
          ev.eval(u, v, true, pe);
          const auto t = weigh(pe, cfg_, alpha_at(alpha_, e->src, u, v));
          const int dcol = lay.disparity_offset[k] >= 0
                               ? lay.disparity_offset[k] + v * W + u
                               : -1;
          auto emit = [&](double r, double w, const CamRow& J, double Jd) {
            JacobianRow row{r, w, {}};
            for (int a = 0; a < kCamCols; ++a) {
              if (col[a] >= 0) row.entries.emplace_back(col[a], J[a]);
            }
            if (dcol >= 0) row.entries.emplace_back(dcol, Jd);
            rows.push_back(std::move(row));
          };
          if (t.photo_weight > 0.0) {
            emit(pe.flow_res[0], t.photo_weight, pe.J_flow.row(0), pe.J_flow_d[0]);
            emit(pe.flow_res[1], t.photo_weight, pe.J_flow.row(1), pe.J_flow_d[1]);
          }
          if (t.embed_weight > 0.0) {
            emit(pe.embed_res, t.embed_weight, pe.J_embed, pe.J_embed_d);
          }
        }
      }
    }
    if (lay.disparity_offset[k] >= 0 && cfg_.alpha_disp > 0.0) {
      for (std::size_t i = 0; i < kf.disparity.size(); ++i) {
        rows.push_back({kf.disparity[i] - kf.disparity_prior[i], cfg_.alpha_disp,
                        {{lay.disparity_offset[k] + static_cast<int>(i), 1.0}}});
      }
    }
  }
  return rows;
}

void BundleAdjuster::apply_increment(FactorGraph& graph,
                                     const VariableLayout& lay,
                                     const Eigen::VectorXd& delta) const {
  for (std::size_t k = 0; k < graph.num_keyframes(); ++k) {
    Keyframe& kf = graph.keyframe(static_cast<int>(k));
    if (lay.pose_offset[k] >= 0) {
      const Vec6 xi = delta.segment<6>(lay.pose_offset[k]);
      kf.pose = compose(exp_se3(xi), kf.pose);
    }
    if (lay.disparity_offset[k] >= 0) {
      for (std::size_t i = 0; i < kf.disparity.size(); ++i) {
        kf.disparity[i] = std::max(
            cfg_.min_disparity, kf.disparity[i] + delta[lay.disparity_offset[k] + i]);
      }
    }
  }
  if (lay.intrinsics_offset >= 0) {
    Intrinsics& K = graph.intrinsics();
    K.set_params(K.params() + delta.segment<4>(lay.intrinsics_offset));
  }
}

double BundleAdjuster::check_gradient(FactorGraph& graph,
                                      bool intrinsics_free) const {
  const auto lay = layout(graph, intrinsics_free);
  const Eigen::VectorXd analytic = gradient(graph, intrinsics_free);
  Eigen::VectorXd numeric(lay.total());
  const FactorGraph saved = graph;
  for (int i = 0; i < lay.total(); ++i) {
    Eigen::VectorXd step = Eigen::VectorXd::Zero(lay.total());
    step[i] = cfg_.fd_step;
    apply_increment(graph, lay, step);
    const double ep = energy(graph).total;
    graph = saved;
    step[i] = -cfg_.fd_step;
    apply_increment(graph, lay, step);
    const double em = energy(graph).total;
    graph = saved;
    numeric[i] = (ep - em) / (2.0 * cfg_.fd_step);
  }
  const double denom = std::max(numeric.norm(), 1e-12);
  return (analytic - numeric).norm() / denom;
}

SolveReport BundleAdjuster::solve(FactorGraph& graph) {
  SolveReport report;
  const bool any_edge =
      std::any_of(graph.edges().begin(), graph.edges().end(),
                  [&](const Edge& e) { return edge_is_live(graph, e); });
  if (graph.num_keyframes() < 2 || !any_edge) {
    report.message = "gauge-only system: fewer than two keyframes or no live "
                     "edges, nothing to optimize";
    return report;
  }
  report.ran = true;
  if (cfg_.fd_check) {
    refresh_kernel(graph);
    report.gradient_check_error =
        check_gradient(graph, cfg_.optimize_intrinsics);
  }

  double damping = cfg_.damping_init;
  int global_it = 0;
  bool first = true;
  for (int outer = 0; outer < cfg_.outer_iters; ++outer) {
    refresh_kernel(graph);
    EnergyBreakdown current = energy(graph);
    if (!std::isfinite(current.total)) {
      throw Error(ErrorCode::kDivergedEnergy, "non-finite energy");
    }
    if (first) {
      report.initial = current;
      first = false;
    }
    for (int it = 0; it < cfg_.max_iters; ++it, ++global_it) {
      const bool k_free =
          cfg_.optimize_intrinsics && outer >= cfg_.intrinsics_burn_in;
      const auto lay = layout(graph, k_free);
      const auto lin = linearize(graph, lay);

      bool accepted = false;
      const FactorGraph::Snapshot saved = graph.snapshot();
      for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        Eigen::VectorXd delta;
        try {
          delta = solve_linearization(lin, lay, damping);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kSingularSystem ||
              attempt == cfg_.max_retries) {
            throw;
          }
          damping *= cfg_.damping_up;
          continue;
        }
        apply_increment(graph, lay, delta);
        const EnergyBreakdown trial = energy(graph);
        IterationRecord rec;
        rec.iteration = global_it;
        rec.outer = outer;
        rec.energy = trial;
        rec.energy_before = current.total;
        rec.damping = damping;
        rec.accepted = std::isfinite(trial.total) && trial.total < current.total;
        report.iterations.push_back(rec);
        if (rec.accepted) {
          const double decrease = current.total - trial.total;
          const double before = current.total;
          current = trial;
          damping = std::max(cfg_.damping_min, damping * cfg_.damping_down);
          accepted = true;
          ++report.accepted_steps;
          if (decrease <= cfg_.rel_tolerance * before) it = cfg_.max_iters;
          break;
        }
        graph.restore(saved);
        damping *= cfg_.damping_up;
      }
      if (!accepted) break;
    }
    report.final = current;
  }
  report.message = "ok";
  return report;
}

}  // namespace semba
