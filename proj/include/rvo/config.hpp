#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rvo {

/// Network hyperparameters. Widths are listed finest level first.
struct ModelConfig {
  int num_points = 256;
  int num_levels = 4;
  std::vector<int> point_widths{32, 64, 128, 256};
  std::vector<int> image_widths{32, 64, 128, 256};
  int group_k = 16;
  std::string final_pool = "max";  // "max" | "avg"
  int deform_k = 8;
  int heads = 4;
  std::string attn_over = "samples";  // "samples" | "aggregated"
  int cost_k1 = 8;
  int cost_k2 = 8;
  int embed_width = 64;
  int conf_hidden = 64;
  int head_hidden = 64;
  bool conf_uses_fused = false;
  int image_height = 288;
  int image_width = 512;
  std::array<double, 3> image_mean{0.5, 0.5, 0.5};
  std::array<double, 3> image_std{0.25, 0.25, 0.25};
  double bn_momentum = 0.1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.1;
  int decay_epochs = 10;
  /// When > 0 the decay period is counted in optimizer steps instead of epochs.
  int decay_steps = 0;
  int epochs = 40;
  int batch_size = 8;
  /// When > 0 training stops after this many steps regardless of epochs.
  int steps = 0;
  std::vector<double> lambda{1.0, 2.0, 4.0, 8.0};
  double s_e_init = -2.5;
  double s_t_init = 0.0;
  double grad_clip = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;
  bool normalize_images = true;

  void validate(int num_levels) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 0;
  bool deterministic = false;
  std::string data_root;
  std::string train_split = "train";
  std::string val_split = "val";

  void validate() const;

  /// Strict parse: unknown keys raise ConfigError. Missing keys keep defaults.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace rvo
