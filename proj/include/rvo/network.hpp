#pragma once

// Full odometry network: radar and image pyramids, per-level fusion, the
// initial pose at the coarsest level and residual warp refinement towards the
// finest level. Also the multi-level training loss.

#include <span>
#include <string>
#include <vector>

#include "rvo/association.hpp"
#include "rvo/autograd.hpp"
#include "rvo/confidence_pose.hpp"
#include "rvo/config.hpp"
#include "rvo/fusion.hpp"
#include "rvo/geometry.hpp"
#include "rvo/image_backbone.hpp"
#include "rvo/nn.hpp"
#include "rvo/pointcloud_ops.hpp"
#include "rvo/radar_pointnet.hpp"

namespace rvo::model {

/// Differentiable Euler/rotation conversion, one sample per row. Rotations are
/// flattened row-major (B x 9). rotation_to_euler has no gimbal-lock branch.
template <typename T> ag::Var<T> euler_to_rotation(const ag::Var<T>& eula);
template <typename T> ag::Var<T> rotation_to_euler(const ag::Var<T>& rotation);

/// One training or inference pair. Both radar frames are already sampled to
/// the configured point count.
template <typename T>
struct PairInput {
  pc::Matrix<T> radar1;  // N x 5
  pc::Matrix<T> radar2;
  const ImageFrame* image1 = nullptr;
  const ImageFrame* image2 = nullptr;
  geometry::Calibration calib;
};

template <typename T>
struct LevelPrediction {
  int level = 0;  // 1 is the finest
  int64_t points_per_sample = 0;
  ag::Var<T> eula;         // B x 3, maps PC2 into PC1
  ag::Var<T> translation;  // B x 3
  ag::Var<T> rotation;     // B x 9
  ag::Var<T> delta_eula;   // residual head output (the initial estimate at the coarsest level)
  ag::Var<T> delta_translation;
  ag::Var<T> confidence;  // (B*n) x 1
  ag::Var<T> embedding;   // (B*n) x embed
  std::vector<geometry::Points<T>> coords;  // PC1 per sample
  std::vector<std::vector<T>> rrv;          // PC1 per sample

  geometry::Pose pose(size_t sample) const;
};

template <typename T>
struct NetworkOutput {
  std::vector<LevelPrediction<T>> levels;  // finest first
};

template <typename T>
class OdometryNet {
 public:
  OdometryNet(nn::ParamStore<T>& store, const ModelConfig& config);

  NetworkOutput<T> forward(const std::vector<PairInput<T>>& batch, const nn::Mode& mode) const;
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  RadarPointNet<T> points_;
  ImageBackbone<T> images_;
  AttentionOver attention_;
  std::vector<FusionBlock<T>> fusion_;
  std::vector<CostVolumeBlock<T>> cost_;
  std::vector<ConfidenceBlock<T>> confidence_;
  std::vector<nn::LBR<T>> merge_;  // unused at the coarsest level
  std::vector<PoseRegressor<T>> pose_;
};

// ---- loss -------------------------------------------------------------------

/// Learnable weighting scalars, registered in the store as "loss.s_e" and
/// "loss.s_t".
template <typename T>
struct LossScalars {
  LossScalars() = default;
  LossScalars(nn::ParamStore<T>& store, double s_e_init, double s_t_init);

  ag::Var<T> s_e;
  ag::Var<T> s_t;
};

/// L = Le exp(-s_e) + s_e + Lt exp(-s_t) + s_t, where Le and Lt are the batch
/// means of the per-sample Euclidean errors.
template <typename T>
ag::Var<T> level_loss(const ag::Var<T>& eula, const ag::Var<T>& translation,
                      const ag::Var<T>& gt_eula, const ag::Var<T>& gt_translation,
                      const LossScalars<T>& scalars);

template <typename T>
struct LossBreakdown {
  ag::Var<T> total;
  std::vector<double> levels;  // finest first
};

/// Sum over levels of lambda[l] * L[l]; lambda is listed finest first.
template <typename T>
LossBreakdown<T> network_loss(const NetworkOutput<T>& output, const std::vector<geometry::Pose>& gt,
                              const LossScalars<T>& scalars, std::span<const double> lambda);

double level_loss(double l_e, double l_t, double s_e, double s_t);
double total_loss(std::span<const double> level_losses, std::span<const double> lambda);

}  // namespace rvo::model
