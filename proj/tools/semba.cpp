#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "semba/config.hpp"
#include "semba/errors.hpp"
#include "semba/eval.hpp"
#include "semba/pipeline.hpp"
#include "semba/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace semba;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void apply_seed(Scenario& s, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  s.scene.seed = *seed;
  s.noise.seed = *seed;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int flow_span = 4;
};

int cmd_simulate(const SimulateArgs& a) {
  Scenario sc = load_scenario(a.config);
  apply_seed(sc, a.seed);
  const auto world = make_world(sc);
  const int n = world->num_frames();
  const fs::path out = a.out;
  fs::create_directories(out);

  const Intrinsics K = world->true_intrinsics();
  nlohmann::ordered_json meta;
  meta["width"] = K.width;
  meta["height"] = K.height;
  meta["k_full"] = sc.scene.k_full;
  meta["intrinsics"] = {K.fx, K.fy, K.cx, K.cy};
  meta["seed"] = sc.scene.seed;
  std::vector<double> ts;
  for (int f = 0; f < n; ++f) ts.push_back(world->trajectory().time_of(f));
  meta["timestamps"] = ts;
  meta["flow_span"] = a.flow_span;
  {
    std::ofstream os(out / "meta.json");
    os << meta.dump(2) << '\n';
  }
  {
    std::ofstream os(out / "scenario.json");
    os << to_json(sc);
  }
  eval::write_tum(ground_truth(*world), out / "groundtruth.tum");

  std::size_t files = 0;
  for (int f = 0; f < n; ++f) {
    io::write_embedding(out / frame_file(f, "semb"), world->embedding(f));
    io::write_disparity(out / frame_file(f, "sdsp"), world->depth(f).disparity);
    const auto& labels = world->dynamic_mask(f);
    Grid<unsigned char> mask(labels.width(), labels.height(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = static_cast<unsigned char>(labels[i]);
    io::write_mask(out / frame_file(f, "smsk"), mask);
    files += 3;
    if (f + 1 < n) {
      io::write_flow(out / frame_file(f, "sflw"), world->flow(f, f + 1));
      ++files;
    }
    for (int g = std::max(0, f - a.flow_span); g <= std::min(n - 1, f + a.flow_span); ++g) {
      if (g == f || g == f + 1) continue;
      io::write_flow(out / pair_flow_file(f, g), world->flow(f, g));
      ++files;
    }
  }
  std::printf("frames=%d\ntensor_files=%zu\nout=%s\n", n, files, out.string().c_str());
  return 0;
}

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string kernel;
  std::optional<double> gamma_embed;
};

RunConfig effective_run_config(const RunArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.seed) cfg.seed = a.seed;
  if (!a.kernel.empty()) cfg.solver.use_kernel = a.kernel == "on";
  if (a.gamma_embed) cfg.solver.gamma_embed = *a.gamma_embed;
  cfg.validate();
  return cfg;
}

int cmd_run(const RunArgs& a) {
  const RunConfig cfg = effective_run_config(a);
  std::optional<Scenario> sc;
  ProviderSet providers;
  std::optional<eval::Trajectory> gt;
  if (cfg.provider == ProviderKind::kOracle) {
    sc = effective_scenario(load_scenario(cfg.scenario), cfg);
    const auto world = make_world(*sc);
    providers = make_oracle_providers(world, cfg.intrinsics_error);
    gt = ground_truth(*world);
  } else {
    providers = make_file_providers(cfg.data_dir, cfg.intrinsics_error);
    const fs::path gt_path = cfg.data_dir / "groundtruth.tum";
    if (fs::exists(gt_path)) gt = eval::read_tum(gt_path);
  }
  const PipelineResult r = run_pipeline(cfg, providers);
  const eval::Report rep =
      write_run_outputs(r, cfg, sc, gt ? &*gt : nullptr, cfg.output_dir);
  eval::emit_report(rep, std::cout);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path,
             const std::string& align, const std::string& out) {
  const auto mode = eval::parse_align_mode(align);
  const auto est = eval::read_tum(est_path);
  const auto gt = eval::read_tum(gt_path);
  const auto res = eval::ate(est, gt, mode);
  eval::Report rep;
  rep.add("align", std::string(eval::to_string(mode)));
  rep.add("pairs", res.pairs);
  rep.add("ate_rmse", res.rmse);
  rep.add("scale", res.alignment.scale);
  rep.add("degenerate", res.degenerate);
  if (!res.warning.empty()) rep.add("warning", res.warning);
  eval::emit_report(rep, std::cout);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream a(fs::path(out) / "eval.txt");
    eval::emit_report(rep, a);
    std::ofstream b(fs::path(out) / "eval.csv");
    eval::emit_report(rep, b, eval::ReportFormat::kCsv);
  }
  return 0;
}

int cmd_ground(const std::string& map_path, const std::string& codec_path,
               const std::string& query_path, const std::string& out, int top) {
  const auto points = io::read_map(map_path);
  const auto codec = io::read_codec(codec_path);
  const auto query = io::read_query(query_path);
  const auto res = eval::ground_query(points, codec, query);

  std::vector<std::size_t> order(res.ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return res.scores[a] > res.scores[b]; });

  eval::Report rep;
  rep.add("points", res.ids.size());
  if (!order.empty()) {
    rep.add("best_id", static_cast<long long>(res.ids[order[0]]));
    rep.add("best_score", res.scores[order[0]]);
  }
  eval::emit_report(rep, std::cout);
  for (int k = 0; k < top && k < static_cast<int>(order.size()); ++k) {
    std::printf("%u %.9g\n", res.ids[order[k]], res.scores[order[k]]);
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "scores.csv");
    os << "id,score\n";
    char buf[64];
    for (std::size_t i = 0; i < res.ids.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%u,%.9g\n", res.ids[i], res.scores[i]);
      os << buf;
    }
    std::ofstream r(fs::path(out) / "ground.txt");
    eval::emit_report(rep, r);
  }
  return 0;
}

int cmd_ablate(const RunArgs& a, const std::string& sweep_path) {
  const RunConfig cfg = effective_run_config(a);
  if (cfg.provider != ProviderKind::kOracle) {
    throw Error(ErrorCode::kConfig, "ablate needs the oracle provider");
  }
  AblationSpec spec = sweep_path.empty() ? AblationSpec{} : parse_ablation_spec(slurp(sweep_path));
  if (a.seed) spec.seeds = {*a.seed};
  const Scenario sc = load_scenario(cfg.scenario);
  const auto rows = run_ablation(cfg, sc, spec);
  write_ablation_table(rows, std::cout);
  fs::create_directories(cfg.output_dir);
  std::ofstream os(cfg.output_dir / "ablation.csv");
  write_ablation_table(rows, os);
  std::ofstream echo(cfg.output_dir / "config.json");
  echo << to_json(cfg);
  return 0;
}

int cmd_pca_fit(const std::string& data, int dim, std::size_t max_vectors,
                const std::string& out) {
  const ProviderSet p = make_file_providers(data);
  std::vector<EmbeddingMap> maps;
  for (int f = 0; f < p.sequence.num_frames(); ++f) {
    maps.push_back(p.embedding->query(f));
    normalize_map(maps.back());
  }
  std::vector<const EmbeddingMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  const Eigen::MatrixXd samples = collect_pca_samples(ptrs, max_vectors);
  const PcaCodec codec = pca_fit(samples, dim);

  double err = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::VectorXd x = samples.row(i).transpose();
    err += (codec.decode(codec.encode(x)) - x).squaredNorm();
  }
  err /= static_cast<double>(samples.rows());

  fs::create_directories(out);
  io::write_codec(fs::path(out) / "codec.spca", codec);
  eval::Report rep;
  rep.add("samples", static_cast<long long>(samples.rows()));
  rep.add("k_full", codec.input_dim());
  rep.add("dim", codec.output_dim());
  rep.add("reconstruction_mse", err);
  eval::emit_report(rep, std::cout);
  std::ofstream os(fs::path(out) / "pca.txt");
  eval::emit_report(rep, os);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semba: dense semantic bundle adjustment on synthetic scenes"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Render a scenario to tensor files");
  simulate->add_option("--config", sim.config, "Scenario file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Replaces the scene and noise seeds");
  simulate->add_option("--flow-span", sim.flow_span, "Write pair flows up to this frame gap")
      ->check(CLI::NonNegativeNumber);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline");
  auto add_run_flags = [](CLI::App* c, RunArgs& a) {
    c->add_option("--config", a.config, "Run config file")->required()->check(CLI::ExistingFile);
    c->add_option("--out", a.out, "Output directory (overrides output_dir)");
    c->add_option("--seed", a.seed, "Replaces the scenario seeds");
    c->add_option("--kernel", a.kernel, "Adaptive robust kernel")->check(CLI::IsMember({"on", "off"}));
    c->add_option("--gamma-embed", a.gamma_embed, "Embedding term weight");
  };
  add_run_flags(run_cmd, run);

  std::string est, gt, align = "sim3", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "ATE of an estimated TUM trajectory");
  eval_cmd->add_option("est", est, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("gt", gt, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--align", align, "Alignment group")->check(CLI::IsMember({"se3", "sim3"}));
  eval_cmd->add_option("--out", eval_out, "Directory for the report files");

  std::string map_path, codec_path, query_path, ground_out;
  int top = 10;
  auto* ground = app.add_subcommand("ground", "Score map points against a query vector");
  ground->add_option("map", map_path, "map.smap")->required()->check(CLI::ExistingFile);
  ground->add_option("codec", codec_path, "codec.spca")->required()->check(CLI::ExistingFile);
  ground->add_option("query", query_path, "Query vector file")->required()->check(CLI::ExistingFile);
  ground->add_option("--out", ground_out, "Directory for scores.csv");
  ground->add_option("--top", top, "Number of best points to print")->check(CLI::NonNegativeNumber);

  RunArgs abl;
  std::string sweep;
  auto* ablate = app.add_subcommand("ablate", "Kernel on/off x gamma_embed grid");
  add_run_flags(ablate, abl);
  ablate->add_option("--sweep", sweep, "Sweep spec (JSON)")->check(CLI::ExistingFile);

  std::string pca_data, pca_out;
  int pca_dim = 32;
  std::size_t pca_max = 65536;
  auto* pca = app.add_subcommand("pca-fit", "Fit a PCA codec on simulated embeddings");
  pca->add_option("--data", pca_data, "Directory written by simulate")->required()->check(CLI::ExistingDirectory);
  pca->add_option("--dim", pca_dim, "Code dimension")->check(CLI::PositiveNumber);
  pca->add_option("--max-vectors", pca_max, "Sample budget")->check(CLI::PositiveNumber);
  pca->add_option("--out", pca_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*run_cmd) return cmd_run(run);
    if (*eval_cmd) return cmd_eval(est, gt, align, eval_out);
    if (*ground) return cmd_ground(map_path, codec_path, query_path, ground_out, top);
    if (*ablate) return cmd_ablate(abl, sweep);
    if (*pca) return cmd_pca_fit(pca_data, pca_dim, pca_max, pca_out);
  } catch (const Error& e) {
    std::cerr << "semba: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "semba: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
