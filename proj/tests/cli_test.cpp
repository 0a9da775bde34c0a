#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "semba/config.hpp"
#include "semba/pipeline.hpp"
#include "semba/tensor_io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace semba;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "semba_tests" / "cli";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// Runs the CLI with stdout captured in `stdout_text`; returns the exit status.
int cli(const std::string& args, std::string* stdout_text = nullptr) {
  const fs::path log = kRoot / "stdout.txt";
  const std::string cmd = std::string("\"") + SEMBA_CLI + "\" " + args + " > \"" + log.string() + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (stdout_text) *stdout_text = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string value_of(const std::string& report, const std::string& key) {
  std::istringstream is(report);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    auto s = load_scenario(semba::testing::scenario_path("static_orbit.json"));
    s.trajectory.duration = 1.5;
    s.trajectory.arc *= 1.5 / 4.0;
    write(kRoot / "scenario.json", to_json(s));
    write(kRoot / "run.json", R"({"scenario": "scenario.json", "output_dir": "out"})");
  }
  static std::string path(const std::string& rel) { return (kRoot / rel).string(); }
};

}  // namespace

TEST_F(Cli, Version) {
  std::string out;
  EXPECT_EQ(cli("--version", &out), 0);
  EXPECT_NE(out.find(kVersion), std::string::npos);
}

TEST_F(Cli, SimulateIsDeterministic) {
  std::string out;
  ASSERT_EQ(cli("simulate --config " + path("scenario.json") + " --out " + path("sim_a"), &out), 0);
  ASSERT_EQ(cli("simulate --config " + path("scenario.json") + " --out " + path("sim_b")), 0);
  const int frames = std::stoi(value_of(out, "frames"));
  const auto world = make_world(load_scenario(path("scenario.json")));
  EXPECT_EQ(frames, world->num_frames());
  std::size_t files = 0, differing = 0, per_frame = 0;
  for (const auto& e : fs::directory_iterator(path("sim_a"))) {
    const auto name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0) ++per_frame;
    if (name.find(".s") != std::string::npos) ++files;
    if (slurp(e.path()) != slurp(fs::path(path("sim_b")) / name)) ++differing;
  }
  EXPECT_EQ(differing, 0u);
  EXPECT_EQ(std::to_string(files), value_of(out, "tensor_files"));
  // disparity, embedding, mask per frame plus a forward flow for all but the last
  EXPECT_EQ(per_frame, std::size_t(4 * frames - 1));

  // spot-check a disparity file against the in-memory render
  const auto d = io::read_disparity(fs::path(path("sim_a")) / frame_file(7, "sdsp"));
  const auto& truth = world->depth(7).disparity;
  double worst = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(d[i] - truth[i]));
  EXPECT_LE(worst, 1e-6);
}

TEST_F(Cli, RunEvalGroundAndPca) {
  std::string out;
  ASSERT_EQ(cli("run --config " + path("run.json") + " --out " + path("run_a"), &out), 0);
  for (const char* f : {"trajectory.tum", "keyframes.tum", "energy.csv", "graph.txt", "map.smap",
                        "codec.spca", "config.json", "report.txt", "report.csv"}) {
    EXPECT_TRUE(fs::exists(fs::path(path("run_a")) / f)) << f;
  }
  const auto report = slurp(fs::path(path("run_a")) / "report.txt");
  EXPECT_LE(std::stod(value_of(report, "ate_sim3")), 1e-3);
  EXPECT_EQ(value_of(report, "kernel"), "true");

  ASSERT_EQ(cli("run --config " + path("run.json") + " --out " + path("run_b") + " --kernel off --gamma-embed 0"), 0);
  const auto cfg = parse_run_config(slurp(fs::path(path("run_b")) / "config.json"));
  EXPECT_FALSE(cfg.solver.use_kernel);
  EXPECT_EQ(cfg.solver.gamma_embed, 0.0);

  ASSERT_EQ(cli("run --config " + path("run.json") + " --out " + path("run_c")), 0);
  EXPECT_EQ(slurp(fs::path(path("run_a")) / "trajectory.tum"), slurp(fs::path(path("run_c")) / "trajectory.tum"));

  ASSERT_EQ(cli("simulate --config " + path("scenario.json") + " --out " + path("sim_eval")), 0);
  ASSERT_EQ(cli("eval " + path("run_a/trajectory.tum") + " " + path("sim_eval/groundtruth.tum") + " --align sim3", &out), 0);
  EXPECT_EQ(value_of(out, "align"), "sim3");
  EXPECT_LE(std::stod(value_of(out, "ate_rmse")), 1e-3);

  std::string q;
  for (int i = 0; i < 64; ++i) q += i == 3 ? "1 " : "0 ";
  write(kRoot / "query.txt", q + "\n");
  ASSERT_EQ(cli("ground " + path("run_a/map.smap") + " " + path("run_a/codec.spca") + " " + path("query.txt") +
                    " --out " + path("ground") + " --top 3",
                &out),
            0);
  EXPECT_EQ(value_of(out, "points"), std::to_string(io::read_map(fs::path(path("run_a")) / "map.smap").size()));
  EXPECT_TRUE(fs::exists(fs::path(path("ground")) / "scores.csv"));
  write(kRoot / "short_query.txt", "1 0 0\n");
  EXPECT_NE(cli("ground " + path("run_a/map.smap") + " " + path("run_a/codec.spca") + " " + path("short_query.txt")), 0);

  ASSERT_EQ(cli("pca-fit --data " + path("sim_eval") + " --dim 8 --out " + path("pca"), &out), 0);
  const auto codec = io::read_codec(fs::path(path("pca")) / "codec.spca");
  EXPECT_EQ(codec.output_dim(), 8);
  EXPECT_EQ(codec.input_dim(), 64);
}

TEST_F(Cli, FilesProviderRun) {
  ASSERT_EQ(cli("simulate --config " + path("scenario.json") + " --out " + path("sim_files")), 0);
  write(kRoot / "files.json", R"({"provider": "files", "data_dir": "sim_files", "output_dir": "files_out"})");
  // output_dir is relative to the working directory, so pass --out
  ASSERT_EQ(cli("run --config " + path("files.json") + " --out " + path("files_out")), 0);
  EXPECT_TRUE(fs::exists(kRoot / "files_out" / "trajectory.tum"));
  std::string out;
  ASSERT_EQ(cli("eval " + path("files_out/trajectory.tum") + " " + path("sim_files/groundtruth.tum"), &out), 0);
  EXPECT_LE(std::stod(value_of(out, "ate_rmse")), 1e-2);
}

TEST_F(Cli, MalformedConfigFailsBeforeWriting) {
  write(kRoot / "bad.json", R"({"scenario": "scenario.json", "output_dir": "bad_out", "solver": {"gama": 1}})");
  EXPECT_EQ(cli("run --config " + path("bad.json")), 1);
  EXPECT_FALSE(fs::exists(kRoot / "bad_out"));
  write(kRoot / "bad_scenario.json", R"({"trajectory": {"kind": "spiral"}})");
  EXPECT_EQ(cli("simulate --config " + path("bad_scenario.json") + " --out " + path("bad_sim")), 1);
  EXPECT_FALSE(fs::exists(kRoot / "bad_sim"));
  EXPECT_NE(cli("run"), 0);
  EXPECT_NE(cli("run --config " + path("run.json") + " --kernel maybe"), 0);
  EXPECT_NE(cli("eval " + path("missing.tum") + " " + path("missing.tum")), 0);
}

TEST_F(Cli, AblateSingleCell) {
  write(kRoot / "sweep.json", R"({"kernel": ["on", "off"], "gamma_embed": [0.1], "seeds": [3]})");
  std::string out;
  ASSERT_EQ(cli("ablate --config " + path("run.json") + " --sweep " + path("sweep.json") + " --out " + path("abl"), &out), 0);
  const auto table = slurp(fs::path(path("abl")) / "ablation.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_EQ(out, table);
}
