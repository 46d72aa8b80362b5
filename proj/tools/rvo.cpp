#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvo/config.hpp"
#include "rvo/data_io.hpp"
#include "rvo/errors.hpp"
#include "rvo/evaluation.hpp"
#include "rvo/plot.hpp"
#include "rvo/synthetic.hpp"
#include "rvo/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNonFinite = 3, kCheckpoint = 4, kParse = 5 };

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_flag("--deterministic", c.deterministic, "fixed seeds and serialized reductions");
  cmd->add_option("--out", c.out, "output directory");
}

fs::path data_root(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("RVO_DATA_ROOT")) return env;
  throw rvo::ConfigError("no dataset root: pass --data, set data_root or RVO_DATA_ROOT");
}

fs::path require_out(const Common& c) {
  if (c.out.empty()) throw rvo::ConfigError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw rvo::ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw rvo::ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::optional<int> frames;
  std::optional<int> dynamic_clusters;
  std::optional<double> noise;
  std::optional<int> image_width, image_height;
};

int cmd_generate(const GenerateArgs& a) {
  rvo::synth::SyntheticSceneConfig cfg;
  if (!a.common.config.empty()) cfg = rvo::synth::SyntheticSceneConfig::from_json(read_json(a.common.config));
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.frames) cfg.frames = *a.frames;
  if (a.dynamic_clusters) cfg.dynamic_clusters = *a.dynamic_clusters;
  if (a.noise) cfg.noise_sigma = *a.noise;
  if (a.image_width) cfg.image_width = *a.image_width;
  if (a.image_height) cfg.image_height = *a.image_height;
  cfg.validate();
  const fs::path out = a.common.out.empty() ? data_root("", "") : fs::path(a.common.out);
  fs::create_directories(out);
  rvo::synth::generate_synthetic(cfg, out);
  std::ofstream(out / "generate_config.json") << cfg.to_json().dump(2) << '\n';
  spdlog::info("wrote {} frames to {}", cfg.frames, out.string());
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::optional<int> steps;
  std::string resume;
};

int cmd_train(const TrainArgs& a) {
  rvo::RunConfig cfg;
  if (!a.common.config.empty()) cfg = rvo::RunConfig::load(a.common.config);
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.common.deterministic) cfg.deterministic = true;
  if (a.steps) cfg.train.steps = *a.steps;
  const fs::path root = data_root(a.data, cfg.data_root);
  cfg.data_root = root.string();
  cfg.validate();
  const fs::path out = require_out(a.common);
  const auto samples = rvo::data::load_sequence(root, cfg.train_split);
  spdlog::info("training on {} pairs from {}", samples.size(), root.string());
  rvo::train::Trainer trainer(cfg, samples);
  rvo::train::run_training(trainer, out, a.resume);
  spdlog::info("checkpoint written to {}", (out / "checkpoint.cbor").string());
  return kOk;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::string sequence;
  int batch = 8;
};

int cmd_infer(const InferArgs& a) {
  if (a.checkpoint.empty() || !fs::exists(a.checkpoint)) {
    throw rvo::CheckpointError("checkpoint '" + a.checkpoint + "' does not exist");
  }
  auto model = rvo::train::load_model(a.checkpoint);
  if (!a.common.config.empty()) {
    const auto requested = rvo::RunConfig::load(a.common.config);
    if (requested.to_json().at("model") != model->config.to_json().at("model")) {
      throw rvo::CheckpointError("checkpoint model config differs from " + a.common.config);
    }
  }
  const fs::path root = data_root(a.data, model->config.data_root);
  const std::string id =
      a.sequence.empty() ? rvo::data::split_sequences(root, a.split).at(0) : a.sequence;
  const auto samples = rvo::data::load_sequence_dir(root / "sequences" / id);
  const uint64_t seed = a.common.seed.value_or(model->config.seed);
  const auto pairs = rvo::train::prepare_pairs(samples, model->config.model.num_points, seed);
  const auto preds = rvo::train::predict(*model, pairs, a.batch);

  const fs::path out = require_out(a.common);
  std::vector<rvo::geometry::Pose> est, gt;
  json dump{{"sequence", id}, {"levels", model->config.model.num_levels}, {"pairs", json::array()}};
  for (size_t i = 0; i < preds.size(); ++i) {
    est.push_back(preds[i].levels.front());
    gt.push_back(pairs[i].gt);
    json levels = json::array();
    for (size_t l = 0; l < preds[i].levels.size(); ++l) {
      json points = json::array();
      const auto& c = preds[i].coords[l];
      for (Eigen::Index k = 0; k < c.rows(); ++k) {
        points.push_back({c(k, 0), c(k, 1), c(k, 2), preds[i].rrv[l][k], preds[i].confidence[l][k]});
      }
      const auto& p = preds[i].levels[l];
      levels.push_back({{"level", l + 1},
                        {"eula", {p.eula.x(), p.eula.y(), p.eula.z()}},
                        {"t", {p.t.x(), p.t.y(), p.t.z()}},
                        {"points", points}});
    }
    json entry{{"frame", pairs[i].index}, {"levels", levels}};
    if (!pairs[i].dynamic1.empty()) entry["dynamic"] = pairs[i].dynamic1;
    dump["pairs"].push_back(entry);
  }
  rvo::geometry::write_trajectory(out / "est_poses.txt", rvo::eval::assemble(est).poses);
  rvo::geometry::write_trajectory(out / "gt_poses.txt", rvo::eval::assemble(gt).poses);
  std::ofstream(out / "confidence.json") << dump.dump() << '\n';
  model->config.save(out / "config.json");
  spdlog::info("wrote {} relative poses to {}", est.size(), out.string());
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string est;
  std::string gt;
  int delta = 1;
};

int cmd_eval(const EvalArgs& a) {
  const auto est = rvo::eval::Trajectory::from_poses(rvo::geometry::read_trajectory(fs::path(a.est)));
  const auto gt = rvo::eval::Trajectory::from_poses(rvo::geometry::read_trajectory(fs::path(a.gt)));
  auto report = rvo::eval::segment_errors(est, gt);
  report.rpe = rvo::eval::rpe(est, gt, a.delta);
  const fs::path out = require_out(a.common);
  report.write_json(out / "metrics.json");
  report.write_csv(out / "metrics.csv");
  std::ofstream(out / "eval_args.json")
      << json{{"est", a.est}, {"gt", a.gt}, {"delta", a.delta}}.dump(2) << '\n';
  std::cout << report.to_json().dump(2) << '\n';
  return kOk;
}

// ---- plot -------------------------------------------------------------------

struct PlotArgs {
  Common common;
  std::vector<std::string> trajectories;
  std::string confidence;
  int pair = 0;
  int level = 1;
};

int cmd_plot(const PlotArgs& a) {
  const fs::path out = require_out(a.common);
  if (!a.trajectories.empty()) {
    std::vector<rvo::plot::Series> series;
    for (const auto& path : a.trajectories) {
      series.push_back({fs::path(path).stem().string(), rvo::geometry::read_trajectory(fs::path(path))});
    }
    rvo::plot::trajectory_xy(series, out / "trajectory_xy.png");
  }
  if (!a.confidence.empty()) {
    json dump;
    {
      std::ifstream in(a.confidence);
      if (!in) throw rvo::ConfigError("cannot open " + a.confidence);
      try {
        dump = json::parse(in);
      } catch (const json::parse_error& e) {
        throw rvo::ParseError(a.confidence + ": " + e.what(), 1);
      }
    }
    const auto& levels = dump.at("pairs").at(static_cast<size_t>(a.pair)).at("levels");
    const auto& points = levels.at(static_cast<size_t>(a.level - 1)).at("points");
    rvo::geometry::Points3d xyz(static_cast<Eigen::Index>(points.size()), 3);
    std::vector<double> conf;
    for (size_t i = 0; i < points.size(); ++i) {
      for (int d = 0; d < 3; ++d) xyz(static_cast<Eigen::Index>(i), d) = points[i][d].get<double>();
      conf.push_back(points[i][4].get<double>());
    }
    rvo::plot::confidence_scatter(xyz, conf, out / "confidence_scatter.png");
  }
  if (a.trajectories.empty() && a.confidence.empty()) {
    throw rvo::ConfigError("plot needs --traj or --confidence");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar-visual odometry toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate, gen.common);
  generate->add_option("--frames", gen.frames, "number of frames");
  generate->add_option("--dynamic-clusters", gen.dynamic_clusters, "number of moving clusters");
  generate->add_option("--noise", gen.noise, "point noise sigma in meters");
  generate->add_option("--image-width", gen.image_width, "rendered image width");
  generate->add_option("--image-height", gen.image_height, "rendered image height");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the network");
  add_common(train, tr.common);
  train->add_option("--data", tr.data, "dataset root (default: RVO_DATA_ROOT)");
  train->add_option("--steps", tr.steps, "stop after this many optimizer steps");
  train->add_option("--resume", tr.resume, "checkpoint to resume from");

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "predict relative poses and confidences");
  add_common(infer, inf.common);
  infer->add_option("--checkpoint", inf.checkpoint, "trained checkpoint")->required();
  infer->add_option("--data", inf.data, "dataset root (default: RVO_DATA_ROOT)");
  infer->add_option("--split", inf.split, "split whose first sequence is used");
  infer->add_option("--sequence", inf.sequence, "sequence id");
  infer->add_option("--batch", inf.batch, "inference batch size");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "segment and RPE metrics");
  add_common(evaluate, ev.common);
  evaluate->add_option("--est", ev.est, "estimated trajectory")->required();
  evaluate->add_option("--gt", ev.gt, "ground-truth trajectory")->required();
  evaluate->add_option("--delta", ev.delta, "RPE frame interval");

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "render trajectory and confidence images");
  add_common(plot, pl.common);
  plot->add_option("--traj", pl.trajectories, "trajectory files");
  plot->add_option("--confidence", pl.confidence, "confidence dump from infer");
  plot->add_option("--pair", pl.pair, "pair index within the dump");
  plot->add_option("--level", pl.level, "pyramid level (1 = finest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*train) return cmd_train(tr);
    if (*infer) return cmd_infer(inf);
    if (*evaluate) return cmd_eval(ev);
    if (*plot) return cmd_plot(pl);
  } catch (const rvo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const rvo::NonFiniteLoss& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kNonFinite;
  } catch (const rvo::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const rvo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
