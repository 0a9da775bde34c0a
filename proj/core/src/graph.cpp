#include "semba/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "semba/errors.hpp"

namespace semba {

const char* to_string(EdgeKind kind) {
  return kind == EdgeKind::kTemporal ? "temporal" : "covisibility";
}

int FactorGraph::add_keyframe(Keyframe kf) {
  if (!keyframes_.empty() && !(kf.timestamp > keyframes_.back().timestamp)) {
    throw Error(ErrorCode::kConfig, "keyframe timestamps must increase");
  }
  kf.id = static_cast<int>(keyframes_.size());
  keyframes_.push_back(std::move(kf));
  return keyframes_.back().id;
}

bool FactorGraph::has_edge(int src, int dst, EdgeKind kind) const {
  return std::any_of(edges_.begin(), edges_.end(), [&](const Edge& e) {
    return e.src == src && e.dst == dst && e.kind == kind;
  });
}

bool FactorGraph::add_edge(Edge e) {
  if (e.src == e.dst) {
    throw Error(ErrorCode::kConfig, "self edge on keyframe " +
                                        std::to_string(e.src));
  }
  const int n = static_cast<int>(keyframes_.size());
  if (e.src < 0 || e.dst < 0 || e.src >= n || e.dst >= n) {
    throw Error(ErrorCode::kConfig, "edge endpoint out of range");
  }
  if (has_edge(e.src, e.dst, e.kind)) return false;
  edges_.push_back(std::move(e));
  return true;
}

std::vector<int> FactorGraph::neighbors(int id) const {
  std::vector<int> out;
  for (const auto& e : edges_) {
    if (e.src == id) out.push_back(e.dst);
    if (e.dst == id) out.push_back(e.src);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> FactorGraph::active_ids() const {
  std::vector<int> out;
  for (const auto& kf : keyframes_) {
    if (!kf.frozen) out.push_back(kf.id);
  }
  return out;
}

FactorGraph::Snapshot FactorGraph::snapshot() const {
  Snapshot s;
  for (const auto& kf : keyframes_) {
    s.poses.push_back(kf.pose);
    s.disparities.push_back(kf.frozen ? DisparityMap{} : kf.disparity);
  }
  s.intrinsics = intrinsics_;
  return s;
}

void FactorGraph::restore(const Snapshot& s) {
  for (std::size_t k = 0; k < keyframes_.size() && k < s.poses.size(); ++k) {
    keyframes_[k].pose = s.poses[k];
    if (!s.disparities[k].empty()) keyframes_[k].disparity = s.disparities[k];
  }
  intrinsics_ = s.intrinsics;
}

void FactorGraph::dump(std::ostream& os) const {
  char buf[256];
  for (const auto& kf : keyframes_) {
    std::snprintf(buf, sizeof(buf),
                  "vertex id=%d frame=%d t=%.6f state=%s\n", kf.id, kf.frame,
                  kf.timestamp, kf.frozen ? "frozen" : "active");
    os << buf;
  }
  for (const auto& e : edges_) {
    std::snprintf(buf, sizeof(buf),
                  "edge src=%d dst=%d kind=%s directed=%d sim=%.6f\n", e.src,
                  e.dst, to_string(e.kind), e.directed ? 1 : 0,
                  e.descriptor_similarity);
    os << buf;
  }
}

bool keyframe_decision(const Grid<double>& flow_magnitude,
                       const Grid<double>& confidence, const GraphConfig& cfg) {
  if (!flow_magnitude.same_shape(confidence)) {
    throw Error(ErrorCode::kDimensionMismatch, "flow/confidence shape");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < flow_magnitude.size(); ++i) {
    num += confidence[i] * flow_magnitude[i];
    den += confidence[i];
  }
  if (den <= 0.0) return false;
  return num / den > cfg.motion_threshold;
}

bool keyframe_decision(const FlowObservation& obs, const GraphConfig& cfg) {
  Grid<double> mag(obs.flow.width(), obs.flow.height());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = obs.flow[i].norm();
  return keyframe_decision(mag, obs.confidence, cfg);
}

std::vector<Edge> propose_covisibility(const Keyframe& new_kf,
                                       std::span<const Keyframe> store,
                                       const GraphConfig& cfg) {
  std::vector<const Keyframe*> candidates;
  for (const auto& kf : store) {
    if (kf.id <= new_kf.id - cfg.tau_recency) candidates.push_back(&kf);
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Keyframe* a, const Keyframe* b) { return a->id < b->id; });
  std::vector<Edge> out;
  for (const auto* kf : candidates) {
    const double sim = descriptor_similarity(new_kf.descriptor, kf->descriptor);
    if (sim > cfg.eta_sim) {
      out.push_back({new_kf.id, kf->id, EdgeKind::kCovisibility, false, sim, {}});
      out.push_back({kf->id, new_kf.id, EdgeKind::kCovisibility, false, sim, {}});
    }
  }
  return out;
}

std::vector<Edge> temporal_edges(const Keyframe& new_kf,
                                 const FactorGraph& graph,
                                 const GraphConfig& cfg) {
  std::vector<int> preds;
  for (const auto& kf : graph.keyframes()) {
    if (kf.id < new_kf.id && !kf.frozen) preds.push_back(kf.id);
  }
  const std::size_t take =
      std::min<std::size_t>(preds.size(), cfg.temporal_neighbors);
  std::vector<Edge> out;
  for (std::size_t k = preds.size() - take; k < preds.size(); ++k) {
    const int p = preds[k];
    out.push_back({new_kf.id, p, EdgeKind::kTemporal, false, 0.0, {}});
    out.push_back({p, new_kf.id, EdgeKind::kTemporal, false, 0.0, {}});
  }
  return out;
}

std::vector<int> slide_window(FactorGraph& graph, const GraphConfig& cfg) {
  std::vector<int> evicted;
  auto active = graph.active_ids();
  std::size_t k = 0;
  while (active.size() - k > static_cast<std::size_t>(cfg.window_size)) {
    graph.keyframe(active[k]).frozen = true;
    evicted.push_back(active[k]);
    ++k;
  }
  return evicted;
}

}  // namespace semba
