#include "semba/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "semba/errors.hpp"

namespace semba {

using nlohmann::json;

namespace {

// Reads fields from a JSON object and rejects keys that were never asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(key_path(k), "unknown key");
    }
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }

  template <typename T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key_path(k), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(key_path(k), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
            fail(key_path(k), "expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (s == "-inf") {
            out = -std::numeric_limits<T>::infinity();
            return;
          }
          fail(key_path(k), "expected a number");
        }
        if (!v.is_number()) fail(key_path(k), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key_path(k), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(key_path(k), e.what());
    }
  }

  void get_vec3(const std::string& k, Vec3& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_array() || v.size() != 3) fail(key_path(k), "expected [x, y, z]");
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) fail(key_path(k), "expected [x, y, z]");
      out[i] = v[i].get<double>();
    }
  }

  const json& object(const std::string& k) {
    seen_.insert(k);
    const json& v = j_.at(k);
    if (!v.is_object()) fail(key_path(k), "expected an object");
    return v;
  }

  const json& array(const std::string& k) {
    seen_.insert(k);
    const json& v = j_.at(k);
    if (!v.is_array()) fail(key_path(k), "expected an array");
    return v;
  }

  std::string key_path(const std::string& k) const {
    return path_.empty() ? k : path_ + "." + k;
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw Error(ErrorCode::kConfig, (where.empty() ? "<root>" : where) + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, what + ": " + e.what());
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kConfig, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json number(double v) {
  if (std::isinf(v) && v < 0) return "-inf";
  return v;
}

void read_noise(const json& j, const std::string& path, ProviderNoise& n) {
  Fields f(j, path);
  f.get("flow_sigma", n.flow_sigma);
  f.get("depth_relative_sigma", n.depth_relative_sigma);
  f.get("depth_scale_bias", n.depth_scale_bias);
  f.get("embed_sigma", n.embed_sigma);
  std::string dc = to_string(n.dynamic_corruption);
  f.get("dynamic_corruption", dc);
  n.dynamic_corruption = parse_dynamic_corruption(dc);
  f.get("dynamic_confidence", n.dynamic_confidence);
  f.get("occlusion_confidence", n.occlusion_confidence);
  f.get("seed", n.seed);
  if (!n.valid()) Fields::fail(path, "invalid noise block");
}

json noise_json(const ProviderNoise& n) {
  return {{"flow_sigma", n.flow_sigma},
          {"depth_relative_sigma", n.depth_relative_sigma},
          {"depth_scale_bias", n.depth_scale_bias},
          {"embed_sigma", n.embed_sigma},
          {"dynamic_corruption", to_string(n.dynamic_corruption)},
          {"dynamic_confidence", n.dynamic_confidence},
          {"occlusion_confidence", n.occlusion_confidence},
          {"seed", n.seed}};
}

}  // namespace

const char* to_string(ProviderKind k) {
  return k == ProviderKind::kOracle ? "oracle" : "files";
}

Intrinsics Scenario::true_intrinsics() const {
  Intrinsics K = heuristic_intrinsics(width, height);
  if (fx) K.fx = K.fy = *fx;
  return K;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (!graph.valid()) bad("graph: invalid settings");
  if (!solver.valid()) bad("solver: invalid settings");
  if (!regime.valid()) bad("regime: thresholds must satisfy 0 < theta_m < theta_s < 1, alpha_dyn <= 0");
  if (pca.dim <= 0 || pca.buffer_keyframes <= 0 || pca.max_vectors == 0) bad("pca: invalid settings");
  if (pipeline.semantic_radius < 0 || pipeline.incremental_iters < 0 ||
      pipeline.incremental_outer < 1 || pipeline.map_stride < 1) {
    bad("pipeline: invalid settings");
  }
  if (nonkeyframe.max_iters < 0 || nonkeyframe.max_rms <= 0.0) bad("nonkeyframe: invalid settings");
  if (!(intrinsics_error > -1.0)) bad("intrinsics_error must exceed -1");
  if (provider == ProviderKind::kOracle && scenario.empty()) bad("oracle provider needs a scenario");
  if (provider == ProviderKind::kFiles && data_dir.empty()) bad("files provider needs data_dir");
  if (noise && !noise->valid()) bad("noise: invalid settings");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base) {
  const json j = parse_text(text, "run config");
  RunConfig c;
  {
    Fields f(j, "");
    auto resolve = [&](const std::string& s) {
      std::filesystem::path p(s);
      return (p.is_relative() && !base.empty()) ? base / p : p;
    };
    std::string s;
    if (f.has("scenario")) {
      f.get("scenario", s);
      c.scenario = resolve(s);
    }
    std::string provider = "oracle";
    f.get("provider", provider);
    if (provider == "oracle") c.provider = ProviderKind::kOracle;
    else if (provider == "files") c.provider = ProviderKind::kFiles;
    else Fields::fail("provider", "expected 'oracle' or 'files'");
    if (f.has("data_dir")) {
      f.get("data_dir", s);
      c.data_dir = resolve(s);
    }
    if (f.has("output_dir")) {
      f.get("output_dir", s);
      c.output_dir = s;
    }
    if (f.has("seed")) {
      std::uint64_t seed = 0;
      f.get("seed", seed);
      c.seed = seed;
    }
    if (f.has("noise")) {
      ProviderNoise n;
      read_noise(f.object("noise"), "noise", n);
      c.noise = n;
    }
    f.get("intrinsics_error", c.intrinsics_error);
    if (f.has("graph")) {
      Fields g(f.object("graph"), "graph");
      g.get("motion_threshold", c.graph.motion_threshold);
      g.get("tau_recency", c.graph.tau_recency);
      g.get("eta_sim", c.graph.eta_sim);
      g.get("window_size", c.graph.window_size);
      g.get("temporal_neighbors", c.graph.temporal_neighbors);
    }
    if (f.has("solver")) {
      Fields g(f.object("solver"), "solver");
      auto& s2 = c.solver;
      g.get("gamma_photo", s2.gamma_photo);
      g.get("gamma_embed", s2.gamma_embed);
      g.get("alpha_disp", s2.alpha_disp);
      g.get("lambda_embed", s2.lambda_embed);
      g.get("max_iters", s2.max_iters);
      g.get("outer_iters", s2.outer_iters);
      g.get("max_retries", s2.max_retries);
      g.get("damping_init", s2.damping_init);
      g.get("damping_up", s2.damping_up);
      g.get("damping_down", s2.damping_down);
      g.get("damping_min", s2.damping_min);
      g.get("rel_tolerance", s2.rel_tolerance);
      g.get("use_kernel", s2.use_kernel);
      g.get("kernel_on_embed", s2.kernel_on_embed);
      g.get("optimize_intrinsics", s2.optimize_intrinsics);
      g.get("intrinsics_burn_in", s2.intrinsics_burn_in);
      g.get("flow_scale", s2.flow_scale);
      g.get("barron_scale", s2.barron_scale);
      g.get("min_disparity", s2.min_disparity);
      g.get("fd_check", s2.fd_check);
      g.get("fd_step", s2.fd_step);
    }
    if (f.has("regime")) {
      Fields g(f.object("regime"), "regime");
      g.get("theta_s", c.regime.theta_s);
      g.get("theta_m", c.regime.theta_m);
      g.get("alpha_dyn", c.regime.alpha_dyn);
    }
    if (f.has("nonkeyframe")) {
      Fields g(f.object("nonkeyframe"), "nonkeyframe");
      g.get("max_iters", c.nonkeyframe.max_iters);
      g.get("max_retries", c.nonkeyframe.max_retries);
      g.get("damping_init", c.nonkeyframe.damping_init);
      g.get("max_rms", c.nonkeyframe.max_rms);
      g.get("barron_scale", c.nonkeyframe.barron_scale);
    }
    if (f.has("pca")) {
      Fields g(f.object("pca"), "pca");
      g.get("enabled", c.pca.enabled);
      g.get("dim", c.pca.dim);
      g.get("buffer_keyframes", c.pca.buffer_keyframes);
      g.get("max_vectors", c.pca.max_vectors);
    }
    if (f.has("pipeline")) {
      Fields g(f.object("pipeline"), "pipeline");
      auto& p = c.pipeline;
      g.get("semantic_prior", p.semantic_prior);
      g.get("semantic_radius", p.semantic_radius);
      g.get("covisibility", p.covisibility);
      g.get("incremental_iters", p.incremental_iters);
      g.get("incremental_outer", p.incremental_outer);
      g.get("final_global", p.final_global);
      g.get("nonkeyframes", p.nonkeyframes);
      g.get("map_stride", p.map_stride);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(slurp(path), path.parent_path());
}

Scenario parse_scenario(const std::string& text) {
  const json j = parse_text(text, "scenario");
  Scenario s;
  Fields f(j, "");
  f.get("seed", s.scene.seed);
  f.get("width", s.width);
  f.get("height", s.height);
  if (f.has("fx")) {
    double fx = 0.0;
    f.get("fx", fx);
    s.fx = fx;
  }
  if (f.has("scene")) {
    Fields g(f.object("scene"), "scene");
    g.get("k_full", s.scene.k_full);
    g.get("room_half_width", s.scene.room_half_width);
    g.get("room_height", s.scene.room_height);
    g.get("surfel_spacing", s.scene.surfel_spacing);
    g.get("static_boxes", s.scene.static_boxes);
    g.get("latent_sigma", s.scene.latent_sigma);
    g.get("latent_wavelength", s.scene.latent_wavelength);
  }
  if (f.has("trajectory")) {
    Fields g(f.object("trajectory"), "trajectory");
    auto& t = s.trajectory;
    std::string kind = sim::to_string(t.kind);
    g.get("kind", kind);
    t.kind = sim::parse_trajectory_kind(kind);
    g.get("duration", t.duration);
    g.get("frame_rate", t.frame_rate);
    g.get_vec3("target", t.target);
    g.get("radius", t.radius);
    g.get("height", t.height);
    g.get("start_angle", t.start_angle);
    g.get("arc", t.arc);
    g.get_vec3("start", t.start);
    g.get_vec3("end", t.end);
    g.get("loop_radius", t.loop_radius);
    if (!(t.duration > 0.0) || !(t.frame_rate > 0.0)) {
      Fields::fail("trajectory", "duration and frame_rate must be positive");
    }
  }
  if (f.has("actors")) {
    const json& arr = f.array("actors");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Fields g(arr[i], "actors[" + std::to_string(i) + "]");
      sim::ActorSpec a;
      std::string kind = "follow";
      g.get("kind", kind);
      if (kind == "follow") a.kind = sim::ActorKind::kFollow;
      else if (kind == "linear") a.kind = sim::ActorKind::kLinear;
      else Fields::fail(g.key_path("kind"), "expected 'follow' or 'linear'");
      g.get_vec3("half_extents", a.half_extents);
      g.get("distance", a.distance);
      g.get_vec3("offset", a.offset);
      g.get("sway_amplitude", a.sway_amplitude);
      g.get("sway_frequency", a.sway_frequency);
      g.get_vec3("sway_axis", a.sway_axis);
      if (!(a.sway_axis.norm() > 0.0)) Fields::fail(g.key_path("sway_axis"), "must be non-zero");
      g.get_vec3("position", a.position);
      g.get_vec3("velocity", a.velocity);
      g.get("latent_period", a.latent_period);
      s.scene.actors.push_back(a);
    }
  }
  if (f.has("quasi_static")) {
    const json& arr = f.array("quasi_static");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Fields g(arr[i], "quasi_static[" + std::to_string(i) + "]");
      sim::QuasiStaticSpec q;
      g.get_vec3("center", q.center);
      g.get_vec3("half_extents", q.half_extents);
      g.get_vec3("displacement", q.displacement);
      g.get("yaw", q.yaw);
      g.get("event_time", q.event_time);
      if (q.event_time < 0.0 || q.event_time > s.trajectory.duration) {
        Fields::fail(g.key_path("event_time"), "outside the trajectory span");
      }
      s.scene.quasi_static.push_back(q);
    }
  }
  if (f.has("noise")) read_noise(f.object("noise"), "noise", s.noise);
  if (s.width <= 1 || s.height <= 1) Fields::fail("width", "image must be at least 2x2");
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(slurp(path));
}

Scenario effective_scenario(const Scenario& s, const RunConfig& cfg) {
  Scenario out = s;
  if (cfg.noise) out.noise = *cfg.noise;
  if (cfg.seed) {
    out.scene.seed = *cfg.seed;
    out.noise.seed = *cfg.seed;
  }
  return out;
}

std::string to_json(const RunConfig& c) {
  json j;
  j["scenario"] = c.scenario.string();
  j["provider"] = to_string(c.provider);
  j["data_dir"] = c.data_dir.string();
  j["output_dir"] = c.output_dir.string();
  if (c.seed) j["seed"] = *c.seed;
  if (c.noise) j["noise"] = noise_json(*c.noise);
  j["intrinsics_error"] = c.intrinsics_error;
  j["graph"] = {{"motion_threshold", c.graph.motion_threshold},
                {"tau_recency", c.graph.tau_recency},
                {"eta_sim", c.graph.eta_sim},
                {"window_size", c.graph.window_size},
                {"temporal_neighbors", c.graph.temporal_neighbors}};
  const auto& s = c.solver;
  j["solver"] = {{"gamma_photo", s.gamma_photo},       {"gamma_embed", s.gamma_embed},
                 {"alpha_disp", s.alpha_disp},         {"lambda_embed", s.lambda_embed},
                 {"max_iters", s.max_iters},           {"outer_iters", s.outer_iters},
                 {"max_retries", s.max_retries},       {"damping_init", s.damping_init},
                 {"damping_up", s.damping_up},         {"damping_down", s.damping_down},
                 {"damping_min", s.damping_min},       {"rel_tolerance", s.rel_tolerance},
                 {"use_kernel", s.use_kernel},         {"kernel_on_embed", s.kernel_on_embed},
                 {"optimize_intrinsics", s.optimize_intrinsics},
                 {"intrinsics_burn_in", s.intrinsics_burn_in},
                 {"flow_scale", s.flow_scale},         {"barron_scale", s.barron_scale},
                 {"min_disparity", s.min_disparity},   {"fd_check", s.fd_check},
                 {"fd_step", s.fd_step}};
  j["regime"] = {{"theta_s", c.regime.theta_s},
                 {"theta_m", c.regime.theta_m},
                 {"alpha_dyn", number(c.regime.alpha_dyn)}};
  j["nonkeyframe"] = {{"max_iters", c.nonkeyframe.max_iters},
                      {"max_retries", c.nonkeyframe.max_retries},
                      {"damping_init", c.nonkeyframe.damping_init},
                      {"max_rms", c.nonkeyframe.max_rms},
                      {"barron_scale", c.nonkeyframe.barron_scale}};
  j["pca"] = {{"enabled", c.pca.enabled},
              {"dim", c.pca.dim},
              {"buffer_keyframes", c.pca.buffer_keyframes},
              {"max_vectors", c.pca.max_vectors}};
  const auto& p = c.pipeline;
  j["pipeline"] = {{"semantic_prior", p.semantic_prior},
                   {"semantic_radius", p.semantic_radius},
                   {"covisibility", p.covisibility},
                   {"incremental_iters", p.incremental_iters},
                   {"incremental_outer", p.incremental_outer},
                   {"final_global", p.final_global},
                   {"nonkeyframes", p.nonkeyframes},
                   {"map_stride", p.map_stride}};
  return j.dump(2) + "\n";
}

std::string to_json(const Scenario& s) {
  json j;
  j["seed"] = s.scene.seed;
  j["width"] = s.width;
  j["height"] = s.height;
  if (s.fx) j["fx"] = *s.fx;
  const auto& sc = s.scene;
  j["scene"] = {{"k_full", sc.k_full},
                {"room_half_width", sc.room_half_width},
                {"room_height", sc.room_height},
                {"surfel_spacing", sc.surfel_spacing},
                {"static_boxes", sc.static_boxes},
                {"latent_sigma", sc.latent_sigma},
                {"latent_wavelength", sc.latent_wavelength}};
  const auto& t = s.trajectory;
  j["trajectory"] = {{"kind", sim::to_string(t.kind)}, {"duration", t.duration},
                     {"frame_rate", t.frame_rate},     {"target", vec3(t.target)},
                     {"radius", t.radius},             {"height", t.height},
                     {"start_angle", t.start_angle},   {"arc", t.arc},
                     {"start", vec3(t.start)},         {"end", vec3(t.end)},
                     {"loop_radius", t.loop_radius}};
  j["actors"] = json::array();
  for (const auto& a : sc.actors) {
    j["actors"].push_back({{"kind", a.kind == sim::ActorKind::kFollow ? "follow" : "linear"},
                           {"half_extents", vec3(a.half_extents)},
                           {"distance", a.distance},
                           {"offset", vec3(a.offset)},
                           {"sway_amplitude", a.sway_amplitude},
                           {"sway_frequency", a.sway_frequency},
                           {"sway_axis", vec3(a.sway_axis)},
                           {"position", vec3(a.position)},
                           {"velocity", vec3(a.velocity)},
                           {"latent_period", a.latent_period}});
  }
  j["quasi_static"] = json::array();
  for (const auto& q : sc.quasi_static) {
    j["quasi_static"].push_back({{"center", vec3(q.center)},
                                 {"half_extents", vec3(q.half_extents)},
                                 {"displacement", vec3(q.displacement)},
                                 {"yaw", q.yaw},
                                 {"event_time", q.event_time}});
  }
  j["noise"] = noise_json(s.noise);
  return j.dump(2) + "\n";
}

}  // namespace semba
