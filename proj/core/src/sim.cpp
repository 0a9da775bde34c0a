#include "semba/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "semba/errors.hpp"

namespace semba::sim {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kNearPlane = 0.05;
constexpr double kFillRadius = 2.0;  // px
constexpr int kFourierTerms = 4;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int k) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) v[i] = n(rng);
  return v.normalized();
}

LatentField make_field(std::mt19937_64& rng, int k, double sigma,
                       double wavelength) {
  LatentField f;
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  const double amp_sigma = sigma / std::sqrt(0.5 * kFourierTerms);
  for (int m = 0; m < kFourierTerms; ++m) {
    Vec3 dir(n(rng), n(rng), n(rng));
    f.omega.push_back(dir.normalized() * (kTwoPi / wavelength));
    f.phase.push_back(ph(rng));
    Eigen::VectorXd a(k);
    for (int i = 0; i < k; ++i) a[i] = amp_sigma * n(rng);
    f.amp.push_back(a);
  }
  return f;
}

// Grid of points on the rectangle origin + s*e1 + t*e2, s in [0, L1], t in
// [0, L2].
void add_rect(std::vector<Vec3>& pts, const Vec3& origin, const Vec3& e1,
              double l1, const Vec3& e2, double l2, double spacing) {
  const int n1 = std::max(1, static_cast<int>(std::round(l1 / spacing)));
  const int n2 = std::max(1, static_cast<int>(std::round(l2 / spacing)));
  for (int j = 0; j <= n2; ++j) {
    for (int i = 0; i <= n1; ++i) {
      pts.push_back(origin + e1 * (l1 * i / n1) + e2 * (l2 * j / n2));
    }
  }
}

// Box faces centred at c. The bottom face is skipped when `open_bottom`.
std::vector<Vec3> box_points(const Vec3& c, const Vec3& h, double spacing,
                             bool open_bottom) {
  std::vector<Vec3> pts;
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  const Vec3 lo = c - h;
  // +-x faces
  add_rect(pts, lo, ey, 2 * h.y(), ez, 2 * h.z(), spacing);
  add_rect(pts, lo + 2 * h.x() * ex, ey, 2 * h.y(), ez, 2 * h.z(), spacing);
  // +-z faces
  add_rect(pts, lo, ex, 2 * h.x(), ey, 2 * h.y(), spacing);
  add_rect(pts, lo + 2 * h.z() * ez, ex, 2 * h.x(), ey, 2 * h.y(), spacing);
  // top and bottom
  add_rect(pts, lo + 2 * h.y() * ey, ex, 2 * h.x(), ez, 2 * h.z(), spacing);
  if (!open_bottom) add_rect(pts, lo, ex, 2 * h.x(), ez, 2 * h.z(), spacing);
  return pts;
}

void assign_latents(SceneObject& obj, const LatentField& field) {
  obj.field = field;
  const int k = static_cast<int>(obj.centroid.size());
  obj.latents.resize(k, static_cast<Eigen::Index>(obj.points.size()));
  for (std::size_t i = 0; i < obj.points.size(); ++i) {
    obj.latents.col(static_cast<Eigen::Index>(i)) =
        (obj.centroid + field(obj.points[i])).normalized().cast<float>();
  }
}

long latent_period_index(const ActorSpec& a, const TrajectorySpec& traj,
                         double t) {
  const double period = a.latent_period > 0.0 ? a.latent_period
                                              : 1.0 / traj.frame_rate;
  // Half-period offset keeps frame times away from the period boundaries.
  return static_cast<long>(std::floor(t / period + 0.5));
}

}  // namespace

Eigen::VectorXd LatentField::operator()(const Vec3& p) const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(amp.front().size());
  for (std::size_t m = 0; m < omega.size(); ++m) {
    f += std::sin(omega[m].dot(p) + phase[m]) * amp[m];
  }
  return f;
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "orbit") return TrajectoryKind::kOrbit;
  if (s == "linear") return TrajectoryKind::kLinear;
  if (s == "revisit-loop") return TrajectoryKind::kRevisitLoop;
  throw Error(ErrorCode::kConfig, "unknown trajectory kind '" + s + "'");
}

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kOrbit: return "orbit";
    case TrajectoryKind::kLinear: return "linear";
    case TrajectoryKind::kRevisitLoop: return "revisit-loop";
  }
  return "?";
}

int TrajectorySpec::num_frames() const {
  return static_cast<int>(std::llround(duration * frame_rate)) + 1;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitY());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R_wc;
  R_wc.col(0) = x;
  R_wc.col(1) = y;
  R_wc.col(2) = z;
  const Mat3 R = R_wc.transpose();
  return Pose(R, -R * eye);
}

Pose TrajectorySpec::pose_at(double t) const {
  const double s = duration > 0.0 ? t / duration : 0.0;
  switch (kind) {
    case TrajectoryKind::kOrbit: {
      const double a = start_angle + arc * s;
      const Vec3 eye(target.x() + radius * std::cos(a), height,
                     target.z() + radius * std::sin(a));
      return look_at(eye, target);
    }
    case TrajectoryKind::kLinear:
      return look_at(start + (end - start) * s, target);
    case TrajectoryKind::kRevisitLoop: {
      const double phi = kTwoPi * s;
      const Vec3 eye = start + loop_radius * Vec3(std::cos(phi) - 1.0, 0.0,
                                                  std::sin(phi));
      return look_at(eye, target);
    }
  }
  return Pose();
}

std::size_t SceneModel::num_surfels() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.points.size();
  return n;
}

SceneModel generate_scene(const SceneConfig& cfg) {
  if (cfg.k_full <= 0 || cfg.surfel_spacing <= 0.0 ||
      cfg.room_half_width <= 0.0 || cfg.room_height <= 0.0) {
    throw Error(ErrorCode::kConfig, "invalid scene config");
  }
  SceneModel scene;
  scene.config = cfg;
  auto rng = make_rng(cfg.seed, 0x5CE7E, 0);
  const double w = cfg.room_half_width;
  const double h = cfg.room_height;
  const double s = cfg.surfel_spacing;
  const int k = cfg.k_full;

  auto add_static = [&](std::vector<Vec3> pts) {
    SceneObject obj;
    obj.type = SceneObject::Type::kStatic;
    obj.points = std::move(pts);
    obj.centroid = random_unit(rng, k);
    assign_latents(obj, make_field(rng, k, cfg.latent_sigma, cfg.latent_wavelength));
    scene.objects.push_back(std::move(obj));
  };

  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  auto rect = [&](const Vec3& o, const Vec3& e1, double l1, const Vec3& e2,
                  double l2) {
    std::vector<Vec3> pts;
    add_rect(pts, o, e1, l1, e2, l2, s);
    return pts;
  };
  add_static(rect(Vec3(-w, 0, -w), ex, 2 * w, ez, 2 * w));  // floor
  add_static(rect(Vec3(-w, h, -w), ex, 2 * w, ez, 2 * w));  // ceiling
  add_static(rect(Vec3(-w, 0, -w), ex, 2 * w, ey, h));      // z = -w
  add_static(rect(Vec3(-w, 0, w), ex, 2 * w, ey, h));       // z = +w
  add_static(rect(Vec3(-w, 0, -w), ez, 2 * w, ey, h));      // x = -w
  add_static(rect(Vec3(w, 0, -w), ez, 2 * w, ey, h));       // x = +w

  std::uniform_real_distribution<double> ang(0.0, kTwoPi);
  std::uniform_real_distribution<double> rad(0.3, 0.8);
  std::uniform_real_distribution<double> ext(0.12, 0.25);
  for (int b = 0; b < cfg.static_boxes; ++b) {
    const double a = ang(rng);
    const double r = rad(rng) * w / 2.0;
    const Vec3 half(ext(rng), ext(rng), ext(rng));
    const Vec3 c(r * std::cos(a), half.y(), r * std::sin(a));
    add_static(box_points(c, half, s, true));
  }

  for (std::size_t q = 0; q < cfg.quasi_static.size(); ++q) {
    const auto& spec = cfg.quasi_static[q];
    SceneObject obj;
    obj.type = SceneObject::Type::kQuasi;
    obj.spec_index = static_cast<int>(q);
    obj.points = box_points(spec.center, spec.half_extents, s, true);
    obj.centroid = random_unit(rng, k);
    assign_latents(obj, make_field(rng, k, cfg.latent_sigma, cfg.latent_wavelength));
    scene.objects.push_back(std::move(obj));
  }

  for (std::size_t a = 0; a < cfg.actors.size(); ++a) {
    const auto& spec = cfg.actors[a];
    SceneObject obj;
    obj.type = SceneObject::Type::kActor;
    obj.spec_index = static_cast<int>(a);
    obj.points = box_points(Vec3::Zero(), spec.half_extents, s, false);
    obj.centroid = random_unit(rng, k);
    // Actor latents are redrawn per period, see actor_field.
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

Pose displacement_event(const QuasiStaticSpec& q, double t) {
  if (t < q.event_time) return Pose();
  const Mat3 R = Eigen::AngleAxisd(q.yaw, Vec3::UnitY()).toRotationMatrix();
  return Pose(R, q.center + q.displacement - R * q.center);
}

Pose object_motion(const SceneModel& scene, const TrajectorySpec& traj, int obj,
                   double t) {
  const auto& o = scene.objects.at(static_cast<std::size_t>(obj));
  switch (o.type) {
    case SceneObject::Type::kStatic:
      return Pose();
    case SceneObject::Type::kQuasi:
      return displacement_event(scene.config.quasi_static[o.spec_index], t);
    case SceneObject::Type::kActor: {
      const auto& a = scene.config.actors[o.spec_index];
      if (a.kind == ActorKind::kLinear) {
        return Pose(Eigen::Quaterniond::Identity(), a.position + a.velocity * t);
      }
      const double sway = a.sway_amplitude * std::sin(kTwoPi * a.sway_frequency * t);
      const Vec3 in_cam = a.offset + Vec3(0.0, 0.0, a.distance) + sway * a.sway_axis.normalized();
      return compose(inverse(traj.pose_at(t)),
                     Pose(Eigen::Quaterniond::Identity(), in_cam));
    }
  }
  return Pose();
}

Eigen::VectorXd actor_centroid(const SceneModel& scene, int obj, long period) {
  auto rng = make_rng(scene.config.seed, 0xAC7000u + static_cast<unsigned>(obj),
                      static_cast<std::uint64_t>(period) & 0xffffffffu);
  return random_unit(rng, scene.config.k_full);
}

namespace {

// Per-period actor field; regenerated on demand (cheap relative to a render).
LatentField actor_field(const SceneModel& scene, int obj, long period) {
  auto rng = make_rng(scene.config.seed, 0xAC7F00u + static_cast<unsigned>(obj),
                      static_cast<std::uint64_t>(period) & 0xffffffffu);
  return make_field(rng, scene.config.k_full, scene.config.latent_sigma,
                    scene.config.latent_wavelength);
}

}  // namespace

Eigen::VectorXf surfel_latent(const SceneModel& scene,
                              const TrajectorySpec& traj, int obj, int idx,
                              double t) {
  const auto& o = scene.objects.at(static_cast<std::size_t>(obj));
  if (o.type != SceneObject::Type::kActor) return o.latents.col(idx);
  const long p = latent_period_index(scene.config.actors[o.spec_index], traj, t);
  return (actor_centroid(scene, obj, p) + actor_field(scene, obj, p)(o.points[idx]))
      .normalized()
      .cast<float>();
}

FrameRender render(const SceneModel& scene, const TrajectorySpec& traj,
                   double t, const Intrinsics& K) {
  const int W = K.width;
  const int H = K.height;
  if (W <= 0 || H <= 0) throw Error(ErrorCode::kConfig, "render size");
  FrameRender r;
  r.time = t;
  r.pose = traj.pose_at(t);
  r.disparity = DisparityMap(W, H, 0.0);
  r.valid = Grid<unsigned char>(W, H, 0);
  r.object = Grid<int>(W, H, -1);
  r.surfel = Grid<int>(W, H, -1);
  r.regime = Grid<Regime>(W, H, Regime::kStatic);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  Grid<double> zbuf(W, H, kInf);
  Grid<double> fill_dist(W, H, kInf);
  Grid<double> fill_z(W, H, kInf);
  Grid<int> fill_obj(W, H, -1), fill_idx(W, H, -1);

  const double splat = 0.75 * scene.config.surfel_spacing;
  std::vector<Pose> body_to_cam(scene.objects.size());
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const auto& o = scene.objects[oi];
    const Pose M = object_motion(scene, traj, static_cast<int>(oi), t);
    const Pose T = compose(r.pose, M);
    body_to_cam[oi] = T;
    for (std::size_t si = 0; si < o.points.size(); ++si) {
      const Vec3 P = T * o.points[si];
      if (P.z() <= kNearPlane) continue;
      const double pu = K.fx * P.x() / P.z() + K.cx;
      const double pv = K.fy * P.y() / P.z() + K.cy;
      const double rad = splat * K.fx / P.z();
      const double reach = std::max(rad, kFillRadius);
      const int u0 = std::max(0, static_cast<int>(std::floor(pu - reach)));
      const int u1 = std::min(W - 1, static_cast<int>(std::ceil(pu + reach)));
      const int v0 = std::max(0, static_cast<int>(std::floor(pv - reach)));
      const int v1 = std::min(H - 1, static_cast<int>(std::ceil(pv + reach)));
      for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
          const double d = std::hypot(u - pu, v - pv);
          if (d <= rad) {
            if (P.z() < zbuf(u, v)) {
              zbuf(u, v) = P.z();
              r.object(u, v) = static_cast<int>(oi);
              r.surfel(u, v) = static_cast<int>(si);
            }
          } else if (d <= kFillRadius) {
            if (d < fill_dist(u, v) ||
                (d == fill_dist(u, v) && P.z() < fill_z(u, v))) {
              fill_dist(u, v) = d;
              fill_z(u, v) = P.z();
              fill_obj(u, v) = static_cast<int>(oi);
              fill_idx(u, v) = static_cast<int>(si);
            }
          }
        }
      }
    }
  }

  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double z = zbuf(u, v);
      if (!std::isfinite(z) && fill_obj(u, v) >= 0) {
        z = fill_z(u, v);
        r.object(u, v) = fill_obj(u, v);
        r.surfel(u, v) = fill_idx(u, v);
      }
      if (!std::isfinite(z)) continue;
      r.valid(u, v) = 1;
      r.disparity(u, v) = 1.0 / z;
      switch (scene.objects[r.object(u, v)].type) {
        case SceneObject::Type::kStatic: r.regime(u, v) = Regime::kStatic; break;
        case SceneObject::Type::kQuasi: r.regime(u, v) = Regime::kQuasi; break;
        case SceneObject::Type::kActor: r.regime(u, v) = Regime::kActor; break;
      }
    }
  }

  const int k = scene.config.k_full;
  r.embedding = EmbeddingMap(k, W, H);
  std::vector<std::pair<long, LatentField>> actor_fields(scene.objects.size());
  std::vector<Eigen::VectorXd> actor_means(scene.objects.size());
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const auto& o = scene.objects[oi];
    if (o.type != SceneObject::Type::kActor) continue;
    const long p = latent_period_index(scene.config.actors[o.spec_index], traj, t);
    actor_fields[oi] = {p, actor_field(scene, static_cast<int>(oi), p)};
    actor_means[oi] = actor_centroid(scene, static_cast<int>(oi), p);
  }
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const int oi = r.object(u, v);
      if (oi < 0) continue;
      const auto& o = scene.objects[oi];
      // The field is sampled at the back-projected pixel centre (body frame)
      // rather than at the splatted surfel, so views agree up to the splat
      // depth error.
      const Vec3 body = inverse(body_to_cam[oi]) * unproject(K, {double(u), double(v)},
                                                             r.disparity(u, v));
      auto dst = r.embedding.vec(u, v);
      if (o.type == SceneObject::Type::kActor) {
        dst = (actor_means[oi] + actor_fields[oi].second(body)).normalized().cast<float>();
      } else {
        dst = (o.centroid + o.field(body)).normalized().cast<float>();
      }
    }
  }
  r.embedding.set_normalized(true);
  return r;
}

GtFlow gt_flow(const SceneModel& scene, const TrajectorySpec& traj,
               const FrameRender& r1, double t2, const Intrinsics& K,
               bool rigid_only) {
  const int W = r1.disparity.width();
  const int H = r1.disparity.height();
  GtFlow out{FlowField(W, H, Vec2::Zero()), Grid<unsigned char>(W, H, 0),
             Grid<double>(W, H, 0.0)};

  // Homogeneous 4x4 chain: camera1 -> world -> body -> world(t2) -> camera2.
  const Mat4 cam1_to_world = r1.pose.matrix().inverse();
  const Mat4 world_to_cam2 = traj.pose_at(t2).matrix();
  std::vector<Mat4> chain(scene.objects.size());
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    Mat4 motion = Mat4::Identity();
    if (!rigid_only) {
      const Mat4 m1 = object_motion(scene, traj, static_cast<int>(oi), r1.time).matrix();
      const Mat4 m2 = object_motion(scene, traj, static_cast<int>(oi), t2).matrix();
      motion = m2 * m1.inverse();
    }
    chain[oi] = world_to_cam2 * motion * cam1_to_world;
  }

  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!r1.valid(u, v)) continue;
      const double z = 1.0 / r1.disparity(u, v);
      const Vec4 P((u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z, 1.0);
      const Vec4 Q = chain[r1.object(u, v)] * P;
      if (Q.z() <= kMinDepth) continue;
      out.flow(u, v) = Vec2(K.fx * Q.x() / Q.z() + K.cx - u,
                            K.fy * Q.y() / Q.z() + K.cy - v);
      out.valid(u, v) = 1;
      out.target_depth(u, v) = Q.z();
    }
  }
  return out;
}

bool target_visible(const FrameRender& r2, int object, const Vec2& target,
                    double depth, double rel_tol) {
  const int W = r2.disparity.width(), H = r2.disparity.height();
  if (!(target.x() >= 0.0 && target.y() >= 0.0 && target.x() <= W - 1.0 &&
        target.y() <= H - 1.0)) {
    return false;
  }
  const int u0 = static_cast<int>(std::floor(target.x()));
  const int v0 = static_cast<int>(std::floor(target.y()));
  const int u1 = std::min(u0 + 1, W - 1), v1 = std::min(v0 + 1, H - 1);
  for (int v : {v0, v1}) {
    for (int u : {u0, u1}) {
      if (!r2.valid(u, v) || r2.object(u, v) != object) return false;
      if (std::abs(1.0 / r2.disparity(u, v) - depth) > rel_tol * depth) return false;
    }
  }
  return true;
}

double regime_fraction(const FrameRender& r, Regime regime) {
  std::size_t n = 0, total = 0;
  for (std::size_t i = 0; i < r.valid.size(); ++i) {
    if (!r.valid[i]) continue;
    ++total;
    if (r.regime[i] == regime) ++n;
  }
  return total ? static_cast<double>(n) / total : 0.0;
}

}  // namespace semba::sim
