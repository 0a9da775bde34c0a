#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semba/flow.hpp"
#include "semba/geometry.hpp"
#include "semba/grid.hpp"

namespace semba {

/// Dense K-channel feature map at the working resolution. Stored pixel-major
/// (K contiguous floats per pixel); the on-disk SEMB format is channel-major
/// and is converted on I/O.
class EmbeddingMap {
 public:
  EmbeddingMap() = default;
  EmbeddingMap(int dim, int width, int height);

  int dim() const { return dim_; }
  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::span<float> at(int u, int v) {
    return {data_.data() + index(u, v), static_cast<std::size_t>(dim_)};
  }
  std::span<const float> at(int u, int v) const {
    return {data_.data() + index(u, v), static_cast<std::size_t>(dim_)};
  }
  Eigen::Map<const Eigen::VectorXf> vec(int u, int v) const {
    return {data_.data() + index(u, v), dim_};
  }
  Eigen::Map<Eigen::VectorXf> vec(int u, int v) {
    return {data_.data() + index(u, v), dim_};
  }

  /// True once normalize_map has been applied (per-pixel unit vectors).
  bool normalized() const { return normalized_; }
  void set_normalized(bool n) { normalized_ = n; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const EmbeddingMap& o) const {
    return dim_ == o.dim_ && width_ == o.width_ && height_ == o.height_ &&
           data_ == o.data_;
  }

 private:
  std::size_t index(int u, int v) const {
    return (static_cast<std::size_t>(v) * width_ + u) * dim_;
  }

  int dim_ = 0;
  int width_ = 0;
  int height_ = 0;
  bool normalized_ = false;
  std::vector<float> data_;
};

/// L2-normalizes every pixel vector in place. Zero vectors are left as-is.
void normalize_map(EmbeddingMap& map);

/// Linear PCA codec: encode(x) = C (x - mean), decode(c) = C^T c + mean.
class PcaCodec {
 public:
  PcaCodec() = default;
  PcaCodec(Eigen::VectorXd mean, Eigen::MatrixXd components,
           Eigen::VectorXd eigenvalues = {});

  int input_dim() const { return static_cast<int>(mean_.size()); }
  int output_dim() const { return static_cast<int>(components_.rows()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// D x K_full, orthonormal rows sorted by descending eigenvalue.
  const Eigen::MatrixXd& components() const { return components_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }

  Eigen::VectorXd encode(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd decode(const Eigen::Ref<const Eigen::VectorXd>& code) const;
  EmbeddingMap encode_map(const EmbeddingMap& map) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd components_;
  Eigen::VectorXd eigenvalues_;
};

/// Top-D principal components of the rows of `samples` (N x K_full). Each
/// component's largest-magnitude entry is made positive. Throws
/// kInsufficientSamples when N < D and kDimensionMismatch when D > K_full.
PcaCodec pca_fit(const Eigen::MatrixXd& samples, int dim);

/// Gathers up to `max_vectors` pixel vectors from the maps with a fixed
/// stride, for PCA fitting.
Eigen::MatrixXd collect_pca_samples(std::span<const EmbeddingMap* const> maps,
                                    std::size_t max_vectors);

/// d(sample)/du and d(sample)/dv, one column each.
using BilinearGradient = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Bilinear interpolation of the four integer neighbours with weights
/// (1-a)(1-b), a(1-b), (1-a)b, ab where a, b are the fractional parts of
/// (u, v). Returns false (pixel invalid) outside [0, W-1] x [0, H-1].
bool bilinear_sample(const EmbeddingMap& map, const Pixel& px,
                     Eigen::Ref<Eigen::VectorXd> out,
                     BilinearGradient* gradient = nullptr);
std::optional<Eigen::VectorXd> bilinear_sample(const EmbeddingMap& map,
                                               const Pixel& px);

/// a.b / (|a||b|) clamped to [-1, 1]. Throws kDegenerateVector for norms
/// <= 1e-12.
double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b);

inline constexpr double kLambdaEmbed = 2.0;

/// lambda * sqrt(2 (1 - cs)).
double embedding_residual(double cs, double lambda = kLambdaEmbed);

struct GlobalDescriptor {
  Eigen::VectorXd vector;
};

/// L2-normalized mean of all pixel vectors; kZeroMeanVector when the mean
/// vanishes.
GlobalDescriptor global_descriptor(const EmbeddingMap& map);
double descriptor_similarity(const GlobalDescriptor& a,
                             const GlobalDescriptor& b);

struct SemanticFlowField {
  FlowField flow;
  Grid<double> peak_sim;
};

/// Dense argmax-cosine correspondence search in a (2r+1)^2 window around
/// round(u + center(u)). Ties go to the smallest displacement, then row-major
/// order. Windows are clipped to the image.
SemanticFlowField semantic_flow(const EmbeddingMap& src,
                                const EmbeddingMap& dst,
                                const FlowField& center, int radius);

inline constexpr double kBlendEpsilon = 1e-6;

/// Per-pixel beta * prior + (1 - beta) * semantic with
/// beta = w / (w + max(peak, 0) + eps); beta = 1 when peak <= 0.
double blend_weight(double flow_confidence, double peak_sim);
FlowField blend_prior(const FlowField& prior, const Grid<double>& confidence,
                      const SemanticFlowField& sem);

}  // namespace semba
