#pragma once

// Radar point-cloud feature pyramid. Each level samples half of the previous
// level's points by FPS, groups K neighbours around every sample and encodes
// spatial offset, radial velocity and intensity through separate LBR stacks
// before fusing them with the neighbours' features.

#include <string>
#include <vector>

#include "rvo/autograd.hpp"
#include "rvo/config.hpp"
#include "rvo/nn.hpp"
#include "rvo/pointcloud_ops.hpp"

namespace rvo::model {

enum class Pooling { kMax, kAverage };

Pooling parse_pooling(const std::string& name);

template <typename T>
struct AggregationBlock {
  AggregationBlock() = default;
  AggregationBlock(nn::ParamStore<T>& store, const std::string& name, int64_t in_features,
                   int64_t width);

  nn::LBR<T> spatial;
  nn::LBR<T> velocity;
  nn::LBR<T> intensity;
  nn::LBR<T> fusion;
  nn::LBR<T> final;
  int64_t in_features = 0;
  int64_t width = 0;
};

/// grouped: (M*K) x (3 + 2 + C) rows laid out as M groups of K neighbours.
/// Returns M x width.
template <typename T>
ag::Var<T> aggregate_features(const ag::Var<T>& grouped, int64_t k, const AggregationBlock<T>& block,
                              const nn::Mode& mode, Pooling final_pool = Pooling::kMax);

/// One pyramid level for a batch of point sets of equal size.
template <typename T>
struct PointLevel {
  int64_t points_per_sample = 0;
  std::vector<pc::Matrix<T>> raw5;                 // per sample, n x 5
  std::vector<std::vector<int32_t>> parent_index;  // rows of the previous level
  ag::Var<T> features;                             // (B*n) x C

  geometry::Points<T> coords(size_t sample) const { return raw5[sample].leftCols(3); }
  /// (B*n) x 3 constant tensor of all coordinates.
  ag::Var<T> coords_var() const;
  size_t batch() const { return raw5.size(); }
};

template <typename T>
struct PointPyramid {
  std::vector<PointLevel<T>> levels;  // levels[0] is the finest (N/2 points)
};

template <typename T>
class RadarPointNet {
 public:
  RadarPointNet(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& config);

  /// frames: one N x 5 matrix per sample, all with the same N divisible by
  /// 2^levels (BadSampleCount otherwise).
  PointPyramid<T> forward(const std::vector<pc::Matrix<T>>& frames, const nn::Mode& mode) const;

  const std::vector<AggregationBlock<T>>& blocks() const { return blocks_; }

 private:
  std::vector<AggregationBlock<T>> blocks_;
  int64_t group_k_;
  int num_levels_;
  Pooling final_pool_;
};

}  // namespace rvo::model
