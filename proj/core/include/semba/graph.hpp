#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "semba/embedding.hpp"
#include "semba/flow.hpp"
#include "semba/geometry.hpp"

namespace semba {

/// Factor-graph vertex. `embedding_raw` is the provider map (K_full channels);
/// `embedding` is the working map used by the solver (PCA codes once a codec
/// is fitted, the raw map otherwise).
struct Keyframe {
  int id = -1;
  int frame = -1;
  double timestamp = 0.0;
  Pose pose;
  DisparityMap disparity;
  DisparityMap disparity_prior;
  EmbeddingMap embedding_raw;
  EmbeddingMap embedding;
  GlobalDescriptor descriptor;
  int intrinsics_id = 0;
  bool frozen = false;
};

enum class EdgeKind { kTemporal, kCovisibility };

const char* to_string(EdgeKind kind);

/// Directed residual edge src -> dst. Members of a bidirectional pair carry
/// directed = false.
struct Edge {
  int src = -1;
  int dst = -1;
  EdgeKind kind = EdgeKind::kTemporal;
  bool directed = false;
  double descriptor_similarity = 0.0;
  std::shared_ptr<const FlowObservation> observation;
};

struct GraphConfig {
  double motion_threshold = 2.5;  // px, confidence-weighted mean flow
  int tau_recency = 10;           // keyframes
  double eta_sim = 0.9;
  int window_size = 25;           // active keyframes
  int temporal_neighbors = 2;

  bool valid() const {
    return motion_threshold > 0.0 && tau_recency > 0 && eta_sim > 0.0 &&
           eta_sim <= 1.0 && window_size > 0 && temporal_neighbors > 0;
  }
};

class FactorGraph {
 public:
  FactorGraph() = default;
  explicit FactorGraph(const Intrinsics& K) { intrinsics_.push_back(K); }

  /// Appends a keyframe; its id is assigned here. Throws kConfig if the
  /// timestamp does not increase.
  int add_keyframe(Keyframe kf);

  /// Inserts an edge unless (src, dst, kind) already exists. Returns whether
  /// the edge was inserted.
  bool add_edge(Edge e);
  bool has_edge(int src, int dst, EdgeKind kind) const;

  std::size_t num_keyframes() const { return keyframes_.size(); }
  Keyframe& keyframe(int id) { return keyframes_.at(static_cast<std::size_t>(id)); }
  const Keyframe& keyframe(int id) const {
    return keyframes_.at(static_cast<std::size_t>(id));
  }
  std::vector<Keyframe>& keyframes() { return keyframes_; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<Edge>& edges() { return edges_; }

  /// Every keyframe sharing an edge with `id`, ascending and unique.
  std::vector<int> neighbors(int id) const;
  std::vector<int> active_ids() const;

  Intrinsics& intrinsics(int id = 0) { return intrinsics_.at(id); }
  const Intrinsics& intrinsics(int id = 0) const { return intrinsics_.at(id); }

  /// Poses, disparities and intrinsics, for cheap rollback of rejected steps.
  struct Snapshot {
    std::vector<Pose> poses;
    std::vector<DisparityMap> disparities;
    std::vector<Intrinsics> intrinsics;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

  /// One line per vertex and per edge.
  void dump(std::ostream& os) const;

 private:
  std::vector<Keyframe> keyframes_;
  std::vector<Edge> edges_;
  std::vector<Intrinsics> intrinsics_;
};

/// Accept iff the confidence-weighted mean flow magnitude strictly exceeds
/// the motion threshold. Zero total confidence rejects.
bool keyframe_decision(const Grid<double>& flow_magnitude,
                       const Grid<double>& confidence, const GraphConfig& cfg);
bool keyframe_decision(const FlowObservation& obs, const GraphConfig& cfg);

/// Bidirectional co-visibility pairs to every stored keyframe at least tau
/// keyframes older than `new_kf` whose descriptor cosine exceeds eta, in
/// ascending id order.
std::vector<Edge> propose_covisibility(const Keyframe& new_kf,
                                       std::span<const Keyframe> store,
                                       const GraphConfig& cfg);

/// Bidirectional pairs to the `temporal_neighbors` nearest active
/// predecessors of `new_kf`.
std::vector<Edge> temporal_edges(const Keyframe& new_kf,
                                 const FactorGraph& graph,
                                 const GraphConfig& cfg);

/// Freezes the oldest active keyframes until at most window_size remain.
/// Returns the ids frozen by this call. Edges are kept.
std::vector<int> slide_window(FactorGraph& graph, const GraphConfig& cfg);

}  // namespace semba
