#include "semba/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/SVD>

#include "semba/errors.hpp"

namespace semba::eval {

void Trajectory::push_back(double t, const Pose& pose) {
  if (!timestamps.empty() && !(t > timestamps.back())) {
    throw Error(ErrorCode::kConfig, "trajectory timestamps must increase");
  }
  timestamps.push_back(t);
  poses.push_back(pose);
}

AlignMode parse_align_mode(const std::string& s) {
  if (s == "se3") return AlignMode::kSe3;
  if (s == "sim3") return AlignMode::kSim3;
  throw Error(ErrorCode::kConfig, "unknown alignment mode '" + s + "'");
}

const char* to_string(AlignMode m) { return m == AlignMode::kSe3 ? "se3" : "sim3"; }

namespace {

std::size_t nearest(const std::vector<double>& ts, double t) {
  const auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return ts.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  // Ties go to the earlier sample.
  return (t - ts[hi - 1] <= ts[hi] - t) ? hi - 1 : hi;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> associate(
    const Trajectory& est, const Trajectory& gt, double max_gap) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (est.empty() || gt.empty()) return out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const std::size_t j = nearest(gt.timestamps, est.timestamps[i]);
    if (nearest(est.timestamps, gt.timestamps[j]) != i) continue;
    if (std::abs(est.timestamps[i] - gt.timestamps[j]) <= max_gap) out.emplace_back(i, j);
  }
  return out;
}

Alignment umeyama(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst,
                  bool with_scale, bool* degenerate) {
  if (src.cols() != dst.cols() || src.cols() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "umeyama point counts");
  }
  const double n = static_cast<double>(src.cols());
  const Vec3 mu_s = src.rowwise().mean();
  const Vec3 mu_d = dst.rowwise().mean();
  const Eigen::Matrix3Xd xs = src.colwise() - mu_s;
  const Eigen::Matrix3Xd xd = dst.colwise() - mu_d;

  Alignment a;
  // Collinear or coincident sources leave the rotation unobservable.
  Eigen::JacobiSVD<Mat3> spread(xs * xs.transpose() / n);
  const Vec3 sv = spread.singularValues();
  const bool degen = !(sv[1] > 1e-12 * std::max(sv[0], 1e-300)) || sv[0] <= 1e-300;
  if (degenerate) *degenerate = degen;
  if (degen) {
    a.translation = mu_d - mu_s;
    return a;
  }

  const Mat3 sigma = xd * xs.transpose() / n;
  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  a.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  if (with_scale) {
    const double var_s = xs.squaredNorm() / n;
    a.scale = (svd.singularValues().asDiagonal() * S).trace() / var_s;
  }
  a.translation = mu_d - a.scale * a.rotation * mu_s;
  return a;
}

AteResult ate(const Trajectory& est, const Trajectory& gt, AlignMode mode,
              double max_gap) {
  const auto pairs = associate(est, gt, max_gap);
  if (pairs.size() < 3) {
    throw Error(ErrorCode::kTooFewPairs,
                std::to_string(pairs.size()) + " associated pairs, need 3");
  }
  Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    src.col(k) = est.poses[pairs[k].first].center();
    dst.col(k) = gt.poses[pairs[k].second].center();
  }
  AteResult r;
  r.pairs = pairs.size();
  r.alignment = umeyama(src, dst, mode == AlignMode::kSim3, &r.degenerate);
  if (r.degenerate) {
    r.warning = "degenerate alignment: collinear trajectory, translation-only fallback";
  }
  double sq = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Vec3 c = r.alignment.apply(src.col(k));
    const double e = (c - dst.col(k)).norm();
    r.errors.push_back(e);
    sq += e * e;
    const Mat3 R_wc = r.alignment.rotation * est.poses[pairs[k].first].rotation_matrix().transpose();
    const Mat3 R_cw = R_wc.transpose();
    r.aligned.push_back(est.timestamps[pairs[k].first], Pose(R_cw, -R_cw * c));
  }
  r.rmse = std::sqrt(sq / static_cast<double>(pairs.size()));
  return r;
}

Trajectory parse_tum(std::istream& is, const std::string& name) {
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    int got = 0;
    std::string tok;
    bool ok = true;
    while (ss >> tok) {
      if (got == 8) {
        ok = false;
        break;
      }
      char* end = nullptr;
      v[got] = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v[got])) {
        ok = false;
        break;
      }
      ++got;
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!ok || got != 8 || q.norm() < 1e-9) {
      throw Error(ErrorCode::kMalformedLine,
                  name + ":" + std::to_string(lineno) + ": " + line);
    }
    if (!traj.empty() && !(v[0] > traj.timestamps.back())) {
      throw Error(ErrorCode::kMalformedLine,
                  name + ":" + std::to_string(lineno) + ": timestamp not increasing");
    }
    const Pose T_wc(q.normalized(), Vec3(v[1], v[2], v[3]));
    traj.push_back(v[0], inverse(T_wc));
  }
  if (traj.empty()) throw Error(ErrorCode::kEmptyTrajectory, name + ": no poses");
  return traj;
}

Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kMissingData, "cannot open " + path.string());
  return parse_tum(is, path.string());
}

void write_tum(const Trajectory& traj, std::ostream& os) {
  char buf[512];
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Pose T_wc = inverse(traj.poses[k]);
    const Vec3& t = T_wc.translation();
    const Eigen::Quaterniond& q = T_wc.rotation();
    std::snprintf(buf, sizeof(buf),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  traj.timestamps[k], t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    os << buf;
  }
}

void write_tum(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  os << "# timestamp tx ty tz qx qy qz qw\n";
  write_tum(traj, os);
  if (!os) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

RegimeMetrics regime_detection_metrics(std::span<const RegimeSample> samples,
                                       double theta) {
  std::vector<std::pair<double, bool>> scored;  // (S, is actor)
  for (const auto& s : samples) {
    if (!s.stability || !s.labels || !s.stability->same_shape(*s.labels) ||
        (s.count && !s.count->same_shape(*s.labels))) {
      throw Error(ErrorCode::kDimensionMismatch, "regime sample shapes");
    }
    for (std::size_t i = 0; i < s.labels->size(); ++i) {
      if (s.count && (*s.count)[i] <= 0) continue;
      const auto label = (*s.labels)[i];
      if (label == sim::Regime::kQuasi) continue;
      scored.emplace_back((*s.stability)[i], label == sim::Regime::kActor);
    }
  }
  RegimeMetrics m;
  m.threshold = theta;
  std::size_t tp = 0, fp = 0;
  for (const auto& [S, pos] : scored) {
    (pos ? m.positives : m.negatives)++;
    if (S < theta) {
      ++m.predicted_positives;
      (pos ? tp : fp)++;
    }
  }
  if (m.predicted_positives > 0) m.precision = static_cast<double>(tp) / m.predicted_positives;
  if (m.positives > 0) m.recall = static_cast<double>(tp) / m.positives;

  if (m.positives == 0 || m.negatives == 0) {
    m.auc = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  // Sweep thresholds upward through the sorted scores; lower S means
  // "more dynamic".
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double auc = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
  std::size_t ctp = 0, cfp = 0;
  for (std::size_t k = 0; k < scored.size();) {
    std::size_t e = k;
    while (e < scored.size() && scored[e].first == scored[k].first) {
      (scored[e].second ? ctp : cfp)++;
      ++e;
    }
    const double tpr = static_cast<double>(ctp) / m.positives;
    const double fpr = static_cast<double>(cfp) / m.negatives;
    auc += 0.5 * (tpr + prev_tpr) * (fpr - prev_fpr);
    prev_tpr = tpr;
    prev_fpr = fpr;
    k = e;
  }
  m.auc = auc;
  return m;
}

GroundingResult ground_query(std::span<const io::MapPoint> points,
                             const PcaCodec& codec, const Eigen::VectorXd& query) {
  if (query.size() != codec.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query has " + std::to_string(query.size()) + " dims, codec decodes to " +
                    std::to_string(codec.input_dim()));
  }
  const double qn = query.norm();
  if (qn <= 1e-12) throw Error(ErrorCode::kDegenerateVector, "zero query");
  const Eigen::VectorXd q = query / qn;

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].id < points[b].id; });
  GroundingResult r;
  r.ids.reserve(points.size());
  r.scores.reserve(points.size());
  for (std::size_t k : order) {
    const auto& p = points[k];
    if (p.code.size() != codec.output_dim()) {
      throw Error(ErrorCode::kDimensionMismatch, "map code length vs codec");
    }
    const Eigen::VectorXd x = codec.decode(p.code.cast<double>());
    const double n = x.norm();
    r.ids.push_back(p.id);
    r.scores.push_back(n > 1e-12 ? std::clamp(x.dot(q) / n, -1.0, 1.0) : 0.0);
  }
  return r;
}

double top_k_precision(const GroundingResult& result,
                       std::span<const std::uint32_t> positives) {
  if (positives.empty()) return 0.0;
  std::vector<std::uint32_t> pos(positives.begin(), positives.end());
  std::sort(pos.begin(), pos.end());
  std::vector<std::size_t> order(result.ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (result.scores[a] != result.scores[b]) return result.scores[a] > result.scores[b];
    return result.ids[a] < result.ids[b];
  });
  const std::size_t k = std::min(pos.size(), order.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::binary_search(pos.begin(), pos.end(), result.ids[order[i]])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pos.size());
}

void Report::add(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

void Report::add(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", value);
  entries_.emplace_back(key, buf);
}

void Report::add(const std::string& key, long long value) {
  entries_.emplace_back(key, std::to_string(value));
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void emit_report(const Report& report, std::ostream& os, ReportFormat format) {
  const auto& e = report.entries();
  if (format == ReportFormat::kKeyValue) {
    for (const auto& [k, v] : e) os << k << '=' << v << '\n';
    return;
  }
  for (std::size_t i = 0; i < e.size(); ++i) os << (i ? "," : "") << csv_field(e[i].first);
  os << '\n';
  for (std::size_t i = 0; i < e.size(); ++i) os << (i ? "," : "") << csv_field(e[i].second);
  os << '\n';
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace semba::eval
