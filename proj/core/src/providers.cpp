#include "semba/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>

#include "json.hpp"
#include "semba/errors.hpp"
#include "semba/parallel.hpp"
#include "semba/tensor_io.hpp"

namespace semba {

namespace {

enum NoiseTag : std::uint32_t { kFlowNoise = 1, kDepthNoise = 2, kEmbedNoise = 3, kVoid = 4 };

std::mt19937_64 noise_rng(std::uint64_t seed, std::uint32_t tag, int a, int b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

void check_frame(int frame, int n) {
  if (frame < 0 || frame >= n) {
    throw Error(ErrorCode::kMissingData, "frame " + std::to_string(frame) +
                                             " outside [0, " + std::to_string(n) + ")");
  }
}

FlowObservation self_flow(int W, int H) {
  return {FlowField(W, H, Vec2::Zero()), Grid<double>(W, H, 1.0)};
}

class OracleFlow final : public FlowProvider {
 public:
  explicit OracleFlow(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}
  FlowObservation query(int i, int j, const FlowField*) const override {
    return w_->flow(i, j);
  }

 private:
  std::shared_ptr<const OracleWorld> w_;
};

class OracleDepth final : public DepthProvider {
 public:
  explicit OracleDepth(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}
  DepthPrior query(int frame) const override { return w_->depth(frame); }

 private:
  std::shared_ptr<const OracleWorld> w_;
};

class OracleEmbedding final : public EmbeddingProvider {
 public:
  explicit OracleEmbedding(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}
  EmbeddingMap query(int frame) const override { return w_->embedding(frame); }

 private:
  std::shared_ptr<const OracleWorld> w_;
};

}  // namespace

DynamicCorruption parse_dynamic_corruption(const std::string& s) {
  if (s == "actor_flow") return DynamicCorruption::kActorFlow;
  if (s == "none") return DynamicCorruption::kNone;
  throw Error(ErrorCode::kConfig, "unknown dynamic corruption '" + s + "'");
}

const char* to_string(DynamicCorruption c) {
  return c == DynamicCorruption::kActorFlow ? "actor_flow" : "none";
}

Intrinsics heuristic_intrinsics(int width, int height, double fx_error) {
  Intrinsics K;
  K.width = width;
  K.height = height;
  K.fx = K.fy = 1.2 * std::max(width, height) * (1.0 + fx_error);
  K.cx = width / 2.0;
  K.cy = height / 2.0;
  return K;
}

// ---------------------------------------------------------------------------
// Oracle

OracleWorld::OracleWorld(sim::SceneModel scene, sim::TrajectorySpec traj,
                         Intrinsics K, ProviderNoise noise)
    : scene_(std::move(scene)), traj_(traj), K_(K), noise_(noise) {
  if (!noise_.valid()) throw Error(ErrorCode::kConfig, "invalid provider noise");
  if (!K_.valid()) throw Error(ErrorCode::kConfig, "invalid oracle intrinsics");
  const int n = traj_.num_frames();
  renders_.resize(n);
  parallel_for(n, [&](std::size_t f) {
    renders_[f] = sim::render(scene_, traj_, traj_.time_of(static_cast<int>(f)), K_);
  });
  auto rng = noise_rng(scene_.config.seed, kVoid, 0, 0);
  std::normal_distribution<float> g(0.0f, 1.0f);
  void_latent_.resize(scene_.config.k_full);
  for (auto& x : void_latent_) x = g(rng);
  void_latent_.normalize();
}

SequenceInfo OracleWorld::sequence() const {
  SequenceInfo s;
  s.width = K_.width;
  s.height = K_.height;
  for (int f = 0; f < num_frames(); ++f) s.timestamps.push_back(traj_.time_of(f));
  return s;
}

FlowObservation OracleWorld::flow(int i, int j) const {
  check_frame(i, num_frames());
  check_frame(j, num_frames());
  const int W = K_.width, H = K_.height;
  if (i == j) return self_flow(W, H);

  const auto& r1 = renders_[i];
  const double t2 = traj_.time_of(j);
  const auto truth = sim::gt_flow(scene_, traj_, r1, t2, K_, false);
  sim::GtFlow rigid;
  const bool need_rigid = noise_.dynamic_corruption == DynamicCorruption::kNone;
  if (need_rigid) rigid = sim::gt_flow(scene_, traj_, r1, t2, K_, true);

  FlowObservation obs{FlowField(W, H, Vec2::Zero()), Grid<double>(W, H, 0.0)};
  auto rng = noise_rng(noise_.seed, kFlowNoise, i, j);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      // Draw unconditionally so the noise pattern does not depend on masks.
      const Vec2 n(g(rng), g(rng));
      const bool actor = r1.regime(u, v) == sim::Regime::kActor;
      const auto& src = (actor && need_rigid) ? rigid : truth;
      if (!src.valid(u, v)) continue;
      Vec2 f = src.flow(u, v);
      if (noise_.flow_sigma > 0.0) f += noise_.flow_sigma * n;
      obs.flow(u, v) = f;
      if (!K_.contains(u + f.x(), v + f.y())) continue;
      double c = (actor && !need_rigid) ? noise_.dynamic_confidence : 1.0;
      if (!sim::target_visible(renders_[j], r1.object(u, v),
                               Vec2(u, v) + truth.flow(u, v), truth.target_depth(u, v))) {
        c *= noise_.occlusion_confidence;
      }
      obs.confidence(u, v) = c;
    }
  }
  return obs;
}

DepthPrior OracleWorld::depth(int frame) const {
  check_frame(frame, num_frames());
  const auto& r = renders_[frame];
  DepthPrior p{DisparityMap(K_.width, K_.height, 0.0)};
  auto rng = noise_rng(noise_.seed, kDepthNoise, frame, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> valid;
  for (std::size_t i = 0; i < p.disparity.size(); ++i) {
    const double n = g(rng);
    if (!r.valid[i]) continue;
    const double scale = noise_.depth_scale_bias * std::exp(noise_.depth_relative_sigma * n);
    p.disparity[i] = r.disparity[i] / scale;
    valid.push_back(p.disparity[i]);
  }
  const double fill = valid.empty() ? 1.0 : median(valid);
  for (std::size_t i = 0; i < p.disparity.size(); ++i) {
    if (!r.valid[i]) p.disparity[i] = fill;
  }
  return p;
}

EmbeddingMap OracleWorld::embedding(int frame) const {
  check_frame(frame, num_frames());
  const auto& r = renders_[frame];
  EmbeddingMap map = r.embedding;
  map.set_normalized(false);
  const int K = map.dim();
  auto rng = noise_rng(noise_.seed, kEmbedNoise, frame, 0);
  std::normal_distribution<float> g(0.0f, 1.0f);
  const float sigma = static_cast<float>(noise_.embed_sigma / std::sqrt(double(K)));
  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      auto x = map.vec(u, v);
      if (!r.valid(u, v)) x = void_latent_;
      for (int k = 0; k < K; ++k) {
        const float n = g(rng);
        if (sigma > 0.0f) x[k] += sigma * n;
      }
    }
  }
  return map;
}

ProviderSet make_oracle_providers(std::shared_ptr<const OracleWorld> world,
                                  double fx_error) {
  ProviderSet set;
  set.sequence = world->sequence();
  set.intrinsics = std::make_shared<HeuristicIntrinsics>(
      set.sequence.width, set.sequence.height, fx_error);
  set.flow = std::make_shared<OracleFlow>(world);
  set.depth = std::make_shared<OracleDepth>(world);
  set.embedding = std::make_shared<OracleEmbedding>(world);
  return set;
}

// ---------------------------------------------------------------------------
// Files

std::string frame_file(int frame, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%06d.%s", frame, ext);
  return buf;
}

std::string pair_flow_file(int i, int j) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "flow_%06d_%06d.sflw", i, j);
  return buf;
}

namespace {

struct FileSequence {
  std::filesystem::path dir;
  SequenceInfo info;
  int k_full = 0;

  void check_shape(int W, int H, const std::string& what) const {
    if (W != info.width || H != info.height) {
      throw Error(ErrorCode::kDimensionMismatch,
                  what + ": " + std::to_string(W) + "x" + std::to_string(H) +
                      ", expected " + std::to_string(info.width) + "x" +
                      std::to_string(info.height));
    }
  }
};

class FileFlow final : public FlowProvider {
 public:
  explicit FileFlow(std::shared_ptr<const FileSequence> seq) : seq_(std::move(seq)) {}

  FlowObservation query(int i, int j, const FlowField*) const override {
    check_frame(i, seq_->info.num_frames());
    check_frame(j, seq_->info.num_frames());
    if (i == j) return self_flow(seq_->info.width, seq_->info.height);
    if (auto direct = load(i, j)) return *direct;
    if (j < i) {
      throw Error(ErrorCode::kMissingData,
                  "no flow file for " + std::to_string(i) + " -> " + std::to_string(j));
    }
    FlowObservation acc = require(i, i + 1);
    for (int k = i + 1; k < j; ++k) chain(acc, require(k, k + 1));
    return acc;
  }

 private:
  std::optional<FlowObservation> load(int i, int j) const {
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find({i, j}); it != cache_.end()) return it->second;
    }
    std::filesystem::path p = seq_->dir / pair_flow_file(i, j);
    if (j == i + 1 && !std::filesystem::exists(p)) p = seq_->dir / frame_file(i, "sflw");
    if (!std::filesystem::exists(p)) return std::nullopt;
    FlowObservation obs = io::read_flow(p);
    seq_->check_shape(obs.flow.width(), obs.flow.height(), p.string());
    std::lock_guard lock(mu_);
    cache_.emplace(std::make_pair(i, j), obs);
    return obs;
  }

  FlowObservation require(int i, int j) const {
    if (auto f = load(i, j)) return *f;
    throw Error(ErrorCode::kMissingData,
                "no flow file for " + std::to_string(i) + " -> " + std::to_string(j));
  }

  // acc <- acc followed by next, sampling `next` bilinearly at the
  // intermediate positions.
  static void chain(FlowObservation& acc, const FlowObservation& next) {
    const int W = acc.flow.width(), H = acc.flow.height();
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        if (acc.confidence(u, v) <= 0.0) continue;
        const double x = u + acc.flow(u, v).x();
        const double y = v + acc.flow(u, v).y();
        if (x < 0.0 || y < 0.0 || x > W - 1.0 || y > H - 1.0) {
          acc.confidence(u, v) = 0.0;
          continue;
        }
        const int x0 = std::min(static_cast<int>(x), W - 2 < 0 ? 0 : W - 2);
        const int y0 = std::min(static_cast<int>(y), H - 2 < 0 ? 0 : H - 2);
        const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        const double a = x - x0, b = y - y0;
        const auto lerp = [&](const auto& g) {
          return (1 - a) * (1 - b) * g(x0, y0) + a * (1 - b) * g(x1, y0) +
                 (1 - a) * b * g(x0, y1) + a * b * g(x1, y1);
        };
        acc.flow(u, v) += lerp(next.flow);
        acc.confidence(u, v) *= lerp(next.confidence);
      }
    }
  }

  std::shared_ptr<const FileSequence> seq_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<int, int>, FlowObservation> cache_;
};

class FileDepth final : public DepthProvider {
 public:
  explicit FileDepth(std::shared_ptr<const FileSequence> seq) : seq_(std::move(seq)) {}
  DepthPrior query(int frame) const override {
    check_frame(frame, seq_->info.num_frames());
    const auto p = seq_->dir / frame_file(frame, "sdsp");
    DepthPrior d{io::read_disparity(p)};
    seq_->check_shape(d.disparity.width(), d.disparity.height(), p.string());
    for (double x : d.disparity) {
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw Error(ErrorCode::kBadFormat, p.string() + ": non-positive disparity");
      }
    }
    return d;
  }

 private:
  std::shared_ptr<const FileSequence> seq_;
};

class FileEmbedding final : public EmbeddingProvider {
 public:
  explicit FileEmbedding(std::shared_ptr<const FileSequence> seq) : seq_(std::move(seq)) {}
  EmbeddingMap query(int frame) const override {
    check_frame(frame, seq_->info.num_frames());
    const auto p = seq_->dir / frame_file(frame, "semb");
    EmbeddingMap m = io::read_embedding(p);
    seq_->check_shape(m.width(), m.height(), p.string());
    if (seq_->k_full > 0 && m.dim() != seq_->k_full) {
      throw Error(ErrorCode::kDimensionMismatch, p.string() + ": channel count");
    }
    return m;
  }

 private:
  std::shared_ptr<const FileSequence> seq_;
};

}  // namespace

ProviderSet make_file_providers(const std::filesystem::path& dir, double fx_error) {
  auto seq = std::make_shared<FileSequence>();
  seq->dir = dir;
  const auto meta_path = dir / "meta.json";
  std::ifstream is(meta_path);
  if (!is) throw Error(ErrorCode::kMissingData, "cannot open " + meta_path.string());
  try {
    const auto meta = nlohmann::json::parse(is);
    seq->info.width = meta.at("width").get<int>();
    seq->info.height = meta.at("height").get<int>();
    seq->k_full = meta.value("k_full", 0);
    seq->info.timestamps = meta.at("timestamps").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadFormat, meta_path.string() + ": " + e.what());
  }
  if (seq->info.width <= 0 || seq->info.height <= 0 || seq->info.timestamps.empty()) {
    throw Error(ErrorCode::kBadFormat, meta_path.string() + ": empty sequence");
  }
  ProviderSet set;
  set.sequence = seq->info;
  set.flow = std::make_shared<FileFlow>(seq);
  set.depth = std::make_shared<FileDepth>(seq);
  set.embedding = std::make_shared<FileEmbedding>(seq);
  set.intrinsics = std::make_shared<HeuristicIntrinsics>(seq->info.width,
                                                         seq->info.height, fx_error);
  return set;
}

}  // namespace semba
