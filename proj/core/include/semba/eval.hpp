#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semba/embedding.hpp"
#include "semba/geometry.hpp"
#include "semba/sim.hpp"
#include "semba/tensor_io.hpp"

namespace semba::eval {

/// Timestamped world-to-camera poses, timestamps strictly increasing.
struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;

  std::size_t size() const { return timestamps.size(); }
  bool empty() const { return timestamps.empty(); }
  /// Appends a sample; throws kConfig unless t exceeds the last timestamp.
  void push_back(double t, const Pose& pose);
};

enum class AlignMode { kSe3, kSim3 };
AlignMode parse_align_mode(const std::string& s);
const char* to_string(AlignMode m);

inline constexpr double kDefaultMaxGap = 0.02;  // s

/// Mutual nearest-neighbour association by timestamp, |dt| <= max_gap.
/// Returns (est index, gt index) pairs in increasing order.
std::vector<std::pair<std::size_t, std::size_t>> associate(
    const Trajectory& est, const Trajectory& gt, double max_gap = kDefaultMaxGap);

/// Similarity x -> s R x + t.
struct Alignment {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
};

/// Closed-form least-squares alignment of `src` onto `dst` (rows are
/// points). Scale is estimated iff `with_scale`. Sets `degenerate` when the
/// source points are collinear or coincident; the result then only
/// translates.
Alignment umeyama(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst,
                  bool with_scale, bool* degenerate = nullptr);

struct AteResult {
  double rmse = 0.0;
  std::size_t pairs = 0;
  Alignment alignment;
  bool degenerate = false;
  std::string warning;
  Trajectory aligned;               // associated estimate samples, aligned
  std::vector<double> errors;       // per associated pair
};

/// Camera-centre RMSE after alignment. Throws kTooFewPairs below 3 pairs.
AteResult ate(const Trajectory& est, const Trajectory& gt, AlignMode mode,
              double max_gap = kDefaultMaxGap);

/// "timestamp tx ty tz qx qy qz qw" with camera-to-world poses. '#' lines and
/// blank lines are skipped. Throws kMalformedLine (with the line number) and
/// kEmptyTrajectory.
Trajectory read_tum(const std::filesystem::path& path);
Trajectory parse_tum(std::istream& is, const std::string& name = "<stream>");
void write_tum(const Trajectory& traj, const std::filesystem::path& path);
void write_tum(const Trajectory& traj, std::ostream& os);

/// One frame's stability field with ground-truth labels. Pixels with
/// `count` 0 (never observed) and quasi-static pixels are excluded.
struct RegimeSample {
  const Grid<double>* stability = nullptr;
  const Grid<int>* count = nullptr;
  const Grid<sim::Regime>* labels = nullptr;
};

struct RegimeMetrics {
  double threshold = 0.0;
  std::size_t positives = 0;  // actor pixels
  std::size_t negatives = 0;  // static pixels
  std::size_t predicted_positives = 0;
  double precision = 1.0;     // 1 when nothing is predicted dynamic
  double recall = 1.0;        // 1 when there are no actor pixels
  double auc = 0.0;           // NaN unless both classes are present
};

/// Predict dynamic iff S < theta. AUC by the trapezoid rule over the full
/// threshold sweep (ties handled as one step).
RegimeMetrics regime_detection_metrics(std::span<const RegimeSample> samples,
                                       double theta);

struct GroundingResult {
  std::vector<std::uint32_t> ids;  // ascending
  std::vector<double> scores;      // cosine in [-1, 1]
};

/// score = cosine(decode(code), query) per point. Throws kDimensionMismatch
/// when the query or the codes do not match the codec, kDegenerateVector for
/// a zero query.
GroundingResult ground_query(std::span<const io::MapPoint> points,
                             const PcaCodec& codec, const Eigen::VectorXd& query);

/// Fraction of the |positives| highest-scoring points that are positives.
/// Ties are broken by ascending id.
double top_k_precision(const GroundingResult& result,
                       std::span<const std::uint32_t> positives);

/// Flat record of run metadata and metrics, in insertion order.
class Report {
 public:
  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, double value);
  void add(const std::string& key, long long value);
  void add(const std::string& key, int value) { add(key, static_cast<long long>(value)); }
  void add(const std::string& key, std::size_t value) {
    add(key, static_cast<long long>(value));
  }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

enum class ReportFormat { kKeyValue, kCsv };

/// key=value lines, or a CSV header line plus one value line.
void emit_report(const Report& report, std::ostream& os,
                 ReportFormat format = ReportFormat::kKeyValue);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace semba::eval
