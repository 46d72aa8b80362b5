#pragma once

// Training loop: Adam with global-norm gradient clipping, step-decayed
// learning rate, per-step CSV logging and self-contained checkpoints.

#include <array>
#include <cstdint>
#include <map>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rvo/config.hpp"
#include "rvo/data_io.hpp"
#include "rvo/network.hpp"

namespace rvo::train {

/// A dataset pair with both radar frames sampled to the model's point count.
struct PreparedPair {
  model::PairInput<float> input;
  geometry::Pose gt;
  std::vector<uint8_t> dynamic1;  // labels of the sampled first frame, empty if unknown
  std::string sequence;
  int index = 0;
  std::shared_ptr<const model::ImageFrame> image1;
  std::shared_ptr<const model::ImageFrame> image2;
};

std::vector<PreparedPair> prepare_pairs(const std::vector<data::SequenceSample>& samples,
                                        int num_points, uint64_t seed);

/// Per-channel mean and standard deviation over every distinct frame.
void image_statistics(const std::vector<data::SequenceSample>& samples, std::array<double, 3>& mean,
                      std::array<double, 3>& stddev);

/// Parameters, network and loss scalars built from one config.
struct Model {
  explicit Model(const RunConfig& config);

  RunConfig config;
  std::unique_ptr<nn::ParamStore<float>> store;
  std::unique_ptr<model::OdometryNet<float>> net;
  model::LossScalars<float> scalars;
};

struct StepRecord {
  int64_t step = 0;
  double total = 0.0;
  std::vector<double> levels;
  double s_e = 0.0;
  double s_t = 0.0;
  double lr = 0.0;
};

class Trainer {
 public:
  /// Builds the model from `config`; when train.normalize_images is set the
  /// image statistics are measured on `samples` and stored in the config.
  Trainer(RunConfig config, const std::vector<data::SequenceSample>& samples);

  StepRecord step();
  bool finished() const;
  double learning_rate() const;
  int64_t steps_done() const { return step_; }
  int epoch() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Throws CheckpointError when the file is missing, unreadable or built for
  /// a different model.
  void load_checkpoint(const std::filesystem::path& path);

  /// Where a diagnostics dump goes when the loss turns non-finite.
  void set_diagnostics_dir(std::filesystem::path dir) { diagnostics_dir_ = std::move(dir); }

  const RunConfig& config() const { return model_.config; }
  Model& model() { return model_; }
  const std::vector<PreparedPair>& pairs() const { return pairs_; }

 private:
  std::vector<size_t> epoch_order(int epoch) const;
  int64_t batches_per_epoch() const;

  Model model_;
  std::vector<PreparedPair> pairs_;
  std::map<std::string, std::vector<float>> adam_m_;
  std::map<std::string, std::vector<float>> adam_v_;
  int64_t step_ = 0;
  std::filesystem::path diagnostics_dir_ = ".";
};

/// Runs until the configured stop, writing out/train_log.csv,
/// out/checkpoint.cbor and out/config.json. Resumes from `resume` when given.
void run_training(Trainer& trainer, const std::filesystem::path& out,
                  const std::filesystem::path& resume = {});

/// Writes the training-log header and rows.
std::string log_header(int num_levels);
std::string log_row(const StepRecord& record);

/// Loads parameters from a checkpoint into a fresh model; the checkpoint's
/// config snapshot is used. Throws CheckpointError.
std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint);

struct PairPrediction {
  std::vector<geometry::Pose> levels;          // finest first
  std::vector<std::vector<float>> confidence;  // per level, PC1 order
  std::vector<geometry::Points<float>> coords;  // per level PC1 coordinates
  std::vector<std::vector<float>> rrv;
};

/// Evaluation-mode forward over `pairs` in chunks of `batch` without
/// recording a graph.
std::vector<PairPrediction> predict(const Model& model, const std::vector<PreparedPair>& pairs,
                                    int batch = 8);

}  // namespace rvo::train
