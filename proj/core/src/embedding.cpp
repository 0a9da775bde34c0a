#include "semba/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "semba/errors.hpp"

namespace semba {

EmbeddingMap::EmbeddingMap(int dim, int width, int height)
    : dim_(dim), width_(width), height_(height),
      data_(static_cast<std::size_t>(dim) * width * height, 0.0f) {
  if (dim < 1) throw Error(ErrorCode::kDimensionMismatch, "K must be >= 1");
}

void normalize_map(EmbeddingMap& map) {
  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      auto z = map.vec(u, v);
      const double n = z.cast<double>().norm();
      if (n > 0.0) z /= static_cast<float>(n);
    }
  }
  map.set_normalized(true);
}

PcaCodec::PcaCodec(Eigen::VectorXd mean, Eigen::MatrixXd components,
                   Eigen::VectorXd eigenvalues)
    : mean_(std::move(mean)),
      components_(std::move(components)),
      eigenvalues_(std::move(eigenvalues)) {
  if (components_.cols() != mean_.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "PCA components/mean dimension mismatch");
  }
}

Eigen::VectorXd PcaCodec::encode(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mean_.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "encode expects " + std::to_string(mean_.size()) +
                    " values, got " + std::to_string(x.size()));
  }
  return components_ * (x - mean_);
}

Eigen::VectorXd PcaCodec::decode(
    const Eigen::Ref<const Eigen::VectorXd>& code) const {
  if (code.size() != components_.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "decode expects " + std::to_string(components_.rows()) +
                    " values, got " + std::to_string(code.size()));
  }
  return components_.transpose() * code + mean_;
}

EmbeddingMap PcaCodec::encode_map(const EmbeddingMap& map) const {
  if (map.dim() != input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "map has K=" + std::to_string(map.dim()) + ", codec expects " +
                    std::to_string(input_dim()));
  }
  EmbeddingMap out(output_dim(), map.width(), map.height());
  const Eigen::MatrixXf C = components_.cast<float>();
  const Eigen::VectorXf m = mean_.cast<float>();
  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      out.vec(u, v) = C * (map.vec(u, v) - m);
    }
  }
  return out;
}

PcaCodec pca_fit(const Eigen::MatrixXd& samples, int dim) {
  const auto n = samples.rows();
  const auto k = samples.cols();
  if (dim < 1 || dim > k) {
    throw Error(ErrorCode::kDimensionMismatch,
                "PCA dimension " + std::to_string(dim) +
                    " outside [1, " + std::to_string(k) + "]");
  }
  if (n < dim) {
    throw Error(ErrorCode::kInsufficientSamples,
                std::to_string(n) + " samples for D=" + std::to_string(dim));
  }
  const Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Ascending order from Eigen; take the top `dim` in reverse.
  Eigen::MatrixXd components(dim, k);
  Eigen::VectorXd values(dim);
  for (int r = 0; r < dim; ++r) {
    const auto col = k - 1 - r;
    Eigen::VectorXd c = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c[arg] < 0.0) c = -c;
    components.row(r) = c.transpose();
    values[r] = std::max(0.0, eig.eigenvalues()[col]);
  }
  return PcaCodec(mean, components, values);
}

Eigen::MatrixXd collect_pca_samples(std::span<const EmbeddingMap* const> maps,
                                    std::size_t max_vectors) {
  std::size_t total = 0;
  int dim = 0;
  for (const auto* m : maps) {
    total += static_cast<std::size_t>(m->width()) * m->height();
    dim = m->dim();
  }
  if (total == 0) throw Error(ErrorCode::kInsufficientSamples, "no maps");
  const std::size_t stride =
      std::max<std::size_t>(1, (total + max_vectors - 1) / max_vectors);
  Eigen::MatrixXd samples((total + stride - 1) / stride, dim);
  std::size_t flat = 0;
  Eigen::Index row = 0;
  for (const auto* m : maps) {
    if (m->dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "mixed map dimensions");
    }
    for (int v = 0; v < m->height(); ++v) {
      for (int u = 0; u < m->width(); ++u, ++flat) {
        if (flat % stride != 0) continue;
        samples.row(row++) = m->vec(u, v).cast<double>().transpose();
      }
    }
  }
  samples.conservativeResize(row, dim);
  return samples;
}

bool bilinear_sample(const EmbeddingMap& map, const Pixel& px,
                     Eigen::Ref<Eigen::VectorXd> out,
                     BilinearGradient* gradient) {
  const double u = px.u;
  const double v = px.v;
  if (!(u >= 0.0 && v >= 0.0 && u <= map.width() - 1.0 &&
        v <= map.height() - 1.0)) {
    return false;
  }
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, map.width() - 1);
  const int y1 = std::min(y0 + 1, map.height() - 1);
  const double a = u - x0;
  const double b = v - y0;

  const auto z00 = map.vec(x0, y0).cast<double>();
  const auto z10 = map.vec(x1, y0).cast<double>();
  const auto z01 = map.vec(x0, y1).cast<double>();
  const auto z11 = map.vec(x1, y1).cast<double>();

  out = (1.0 - a) * (1.0 - b) * z00 + a * (1.0 - b) * z10 +
        (1.0 - a) * b * z01 + a * b * z11;
  if (gradient != nullptr) {
    gradient->resize(map.dim(), 2);
    gradient->col(0) = (1.0 - b) * (z10 - z00) + b * (z11 - z01);
    gradient->col(1) = (1.0 - a) * (z01 - z00) + a * (z11 - z10);
  }
  return true;
}

std::optional<Eigen::VectorXd> bilinear_sample(const EmbeddingMap& map,
                                               const Pixel& px) {
  Eigen::VectorXd out(map.dim());
  if (!bilinear_sample(map, px, out)) return std::nullopt;
  return out;
}

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine of unequal lengths");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= 1e-12 || nb <= 1e-12) {
    throw Error(ErrorCode::kDegenerateVector, "cosine of a zero vector");
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double embedding_residual(double cs, double lambda) {
  const double c = std::clamp(cs, -1.0, 1.0);
  return lambda * std::sqrt(2.0 * (1.0 - c));
}

GlobalDescriptor global_descriptor(const EmbeddingMap& map) {
  if (map.empty()) throw Error(ErrorCode::kZeroMeanVector, "empty map");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(map.dim());
  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      sum += map.vec(u, v).cast<double>();
    }
  }
  sum /= static_cast<double>(map.width()) * map.height();
  const double n = sum.norm();
  if (n <= 1e-12) {
    throw Error(ErrorCode::kZeroMeanVector, "mean embedding vanishes");
  }
  return {sum / n};
}

double descriptor_similarity(const GlobalDescriptor& a,
                             const GlobalDescriptor& b) {
  return cosine_similarity(a.vector, b.vector);
}

SemanticFlowField semantic_flow(const EmbeddingMap& src,
                                const EmbeddingMap& dst,
                                const FlowField& center, int radius) {
  if (src.dim() != dst.dim() || src.width() != dst.width() ||
      src.height() != dst.height() || !center.same_shape(src.width(),
                                                         src.height())) {
    throw Error(ErrorCode::kDimensionMismatch, "semantic_flow shape mismatch");
  }
  const int W = src.width();
  const int H = src.height();
  const int K = src.dim();

  // Unit vectors once up front; zero vectors stay zero and score 0.
  auto unit = [K](const EmbeddingMap& m) {
    std::vector<float> out(m.data());
    for (std::size_t p = 0; p < out.size(); p += K) {
      double n = 0.0;
      for (int k = 0; k < K; ++k) n += double(out[p + k]) * out[p + k];
      n = std::sqrt(n);
      if (n > 0.0) {
        for (int k = 0; k < K; ++k) out[p + k] = float(out[p + k] / n);
      }
    }
    return out;
  };
  const std::vector<float> s = unit(src);
  const std::vector<float> d = unit(dst);

  SemanticFlowField field{FlowField(W, H, Vec2::Zero()),
                          Grid<double>(W, H, -1.0)};
  constexpr double kTieTol = 1e-12;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const Vec2& c = center(u, v);
      const int cu = static_cast<int>(std::lround(u + c.x()));
      const int cv = static_cast<int>(std::lround(v + c.y()));
      const int u_lo = std::max(0, cu - radius);
      const int u_hi = std::min(W - 1, cu + radius);
      const int v_lo = std::max(0, cv - radius);
      const int v_hi = std::min(H - 1, cv + radius);
      const float* a = s.data() + (static_cast<std::size_t>(v) * W + u) * K;

      double best = -std::numeric_limits<double>::infinity();
      long best_disp = 0;
      int best_u = u;
      int best_v = v;
      for (int y = v_lo; y <= v_hi; ++y) {  // row-major scan
        for (int x = u_lo; x <= u_hi; ++x) {
          const float* b = d.data() + (static_cast<std::size_t>(y) * W + x) * K;
          double dot = 0.0;
          for (int k = 0; k < K; ++k) dot += double(a[k]) * b[k];
          const long disp = long(x - u) * (x - u) + long(y - v) * (y - v);
          if (dot > best + kTieTol ||
              (std::abs(dot - best) <= kTieTol && disp < best_disp)) {
            best = dot;
            best_disp = disp;
            best_u = x;
            best_v = y;
          }
        }
      }
      if (u_lo > u_hi || v_lo > v_hi) {
        // Window entirely outside the image: no semantic evidence.
        field.flow(u, v) = c;
        field.peak_sim(u, v) = 0.0;
        continue;
      }
      field.flow(u, v) = Vec2(best_u - u, best_v - v);
      field.peak_sim(u, v) = std::clamp(best, -1.0, 1.0);
    }
  }
  return field;
}

double blend_weight(double flow_confidence, double peak_sim) {
  const double s = std::max(peak_sim, 0.0);
  if (s <= 0.0) return 1.0;
  return flow_confidence / (flow_confidence + s + kBlendEpsilon);
}

FlowField blend_prior(const FlowField& prior, const Grid<double>& confidence,
                      const SemanticFlowField& sem) {
  if (!prior.same_shape(confidence) || !prior.same_shape(sem.flow) ||
      !prior.same_shape(sem.peak_sim)) {
    throw Error(ErrorCode::kDimensionMismatch, "blend_prior shape mismatch");
  }
  FlowField out(prior.width(), prior.height());
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double beta = blend_weight(confidence[i], sem.peak_sim[i]);
    out[i] = beta * prior[i] + (1.0 - beta) * sem.flow[i];
  }
  return out;
}

}  // namespace semba
