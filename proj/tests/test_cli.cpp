#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rvo/evaluation.hpp"
#include "rvo/geometry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rvo_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int code = -1;
  std::string err;
};

Result run(const std::string& args, const fs::path& dir) {
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(RVO_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file() ? 1 : 0;
  if (files.size() != count_b) return false;
  for (const auto& f : files) {
    if (slurp(a / f) != slurp(b / f)) return false;
  }
  return true;
}

void write_config(const fs::path& path) {
  json model{{"num_points", 64},      {"point_widths", {8, 8, 8, 8}}, {"image_widths", {8, 8, 8, 8}},
             {"group_k", 8},          {"deform_k", 4},                {"heads", 2},
             {"embed_width", 8},      {"conf_hidden", 8},             {"head_hidden", 8},
             {"image_height", 64},    {"image_width", 64}};
  std::ofstream(path) << json{{"model", model}, {"train", {{"batch_size", 2}}}}.dump(2);
}

}  // namespace

TEST_CASE("generate is byte-identical for the same seed and records clusters") {
  const auto dir = scratch("generate");
  for (const char* name : {"a", "b"}) {
    const auto r = run("generate --frames 50 --seed 7 --dynamic-clusters 2 --out " + (dir / name).string(), dir);
    REQUIRE(r.code == 0);
  }
  CHECK(same_tree(dir / "a", dir / "b"));
  const auto manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("dynamic_clusters") == 2);
  CHECK(manifest.at("frames") == 50);
}

TEST_CASE("a negative noise level exits with the config code and names the field") {
  const auto dir = scratch("noise");
  const auto r = run("generate --noise -1 --out " + (dir / "d").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("noise_sigma") != std::string::npos);
}

TEST_CASE("a missing checkpoint exits with the checkpoint code") {
  const auto dir = scratch("nockpt");
  const auto r = run("infer --checkpoint " + (dir / "absent.cbor").string() + " --out " + dir.string(), dir);
  CHECK(r.code == 4);
}

TEST_CASE("eval of a trajectory against itself reports zeros for 20..160 m") {
  const auto dir = scratch("eval");
  std::vector<rvo::geometry::Pose> rel(60, rvo::geometry::Pose{{0.01, 0, 0}, {3.0, 0, 0}});
  rvo::geometry::write_trajectory(dir / "t.txt", rvo::eval::assemble(rel).poses);
  const auto r = run("eval --est " + (dir / "t.txt").string() + " --gt " + (dir / "t.txt").string() +
                         " --out " + (dir / "out").string(),
                     dir);
  REQUIRE(r.code == 0);
  const auto m = json::parse(slurp(dir / "out" / "metrics.json"));
  REQUIRE(m.at("lengths").size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(m["lengths"][i]["length_m"] == 20.0 * (i + 1));
    CHECK(m["lengths"][i]["t_err"] == 0.0);
    CHECK(m["lengths"][i]["r_err_deg_per_m"] == 0.0);
  }
  CHECK(m.at("rpe").at("translation_rmse_m") == 0.0);
  CHECK(fs::exists(dir / "out" / "metrics.csv"));
}

TEST_CASE("an unparsable trajectory exits with the parse code and the line") {
  const auto dir = scratch("parse");
  std::ofstream(dir / "bad.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 x 0 1 0 0 0 0 1 0\n";
  const auto r = run("eval --est " + (dir / "bad.txt").string() + " --gt " + (dir / "bad.txt").string() +
                         " --out " + (dir / "out").string(),
                     dir);
  CHECK(r.code == 5);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("plotting a two-pose trajectory writes a PNG") {
  const auto dir = scratch("plot");
  std::vector<rvo::geometry::Pose> rel{{{0, 0, 0}, {1, 0, 0}}};
  rvo::geometry::write_trajectory(dir / "t.txt", rvo::eval::assemble(rel).poses);
  const auto r = run("plot --traj " + (dir / "t.txt").string() + " --out " + (dir / "out").string(), dir);
  REQUIRE(r.code == 0);
  const auto png = slurp(dir / "out" / "trajectory_xy.png");
  REQUIRE(png.size() > 8);
  CHECK(png.substr(1, 3) == "PNG");
}

TEST_CASE("train, infer and plot a tiny run end to end") {
  const auto dir = scratch("pipeline");
  REQUIRE(run("generate --frames 6 --seed 3 --dynamic-clusters 1 --out " + (dir / "data").string(), dir).code == 0);
  write_config(dir / "cfg.json");
  const auto train = run("train --config " + (dir / "cfg.json").string() + " --data " + (dir / "data").string() +
                             " --steps 3 --deterministic --seed 1 --out " + (dir / "run").string(),
                         dir);
  REQUIRE(train.code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.cbor"));
  CHECK(fs::exists(dir / "run" / "config.json"));
  std::istringstream log(slurp(dir / "run" / "train_log.csv"));
  std::string header, line;
  std::getline(log, header);
  CHECK(header == "step,total_loss,L1,L2,L3,L4,s_e,s_t,lr");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 3);

  const auto infer = run("infer --checkpoint " + (dir / "run" / "checkpoint.cbor").string() + " --data " +
                             (dir / "data").string() + " --out " + (dir / "infer").string(),
                         dir);
  REQUIRE(infer.code == 0);
  const auto dump = json::parse(slurp(dir / "infer" / "confidence.json"));
  REQUIRE(dump.at("pairs").size() == 5);
  const size_t expect[] = {32, 16, 8, 4};
  for (size_t l = 0; l < 4; ++l) CHECK(dump["pairs"][0]["levels"][l]["points"].size() == expect[l]);
  CHECK(rvo::geometry::read_trajectory(dir / "infer" / "est_poses.txt").size() == 6);

  const auto plot = run("plot --confidence " + (dir / "infer" / "confidence.json").string() + " --traj " +
                            (dir / "infer" / "est_poses.txt").string() + " --traj " +
                            (dir / "infer" / "gt_poses.txt").string() + " --out " + (dir / "plots").string(),
                        dir);
  CHECK(plot.code == 0);
  CHECK(fs::exists(dir / "plots" / "confidence_scatter.png"));

  const auto wrong = dir / "wrong.json";
  std::ofstream(wrong) << json{{"model", {{"num_points", 128}}}}.dump();
  const auto mismatch = run("infer --checkpoint " + (dir / "run" / "checkpoint.cbor").string() + " --config " +
                                wrong.string() + " --data " + (dir / "data").string() + " --out " +
                                (dir / "x").string(),
                            dir);
  CHECK(mismatch.code == 4);
}
