#pragma once

// Velocity-guided point confidence and the pose regression heads.

#include <string>
#include <vector>

#include "rvo/autograd.hpp"
#include "rvo/nn.hpp"

namespace rvo::model {

/// Column 0: |rrv|. Column 1: distance of |rrv| from the frame's median |rrv|
/// (lower median for even counts). Returns n x 2.
template <typename T>
std::vector<T> velocity_feature(const std::vector<T>& rrv);

template <typename T>
struct ConfidenceBlock {
  ConfidenceBlock() = default;
  /// `in` counts every input column (features, velocity, optional prior).
  ConfidenceBlock(nn::ParamStore<T>& store, const std::string& name, int64_t in, int64_t hidden);

  nn::LBR<T> hidden;
  nn::Linear<T> out;  // zero initialized: every confidence starts at 0.5
  int64_t in_width = 0;
};

/// sigmoid(MLP(features ⊕ velocity ⊕ prior)). `prior` may be undefined.
template <typename T>
ag::Var<T> estimate_confidence(const ag::Var<T>& features, const ag::Var<T>& velocity,
                               const ag::Var<T>& prior, const ConfidenceBlock<T>& block,
                               const nn::Mode& mode);

template <typename T>
struct PoseHead {
  PoseHead() = default;
  /// zero_out starts the head at a zero output (residual heads).
  PoseHead(nn::ParamStore<T>& store, const std::string& name, int64_t in, int64_t hidden,
           bool zero_out = false);
  ag::Var<T> operator()(const ag::Var<T>& x) const;

  nn::Linear<T> hidden;
  nn::Linear<T> out;
};

template <typename T>
struct PoseRegressor {
  PoseRegressor() = default;
  PoseRegressor(nn::ParamStore<T>& store, const std::string& name, int64_t in, int64_t hidden,
                bool zero_out = false);

  PoseHead<T> eula;
  PoseHead<T> translation;
};

template <typename T>
struct PoseOutput {
  ag::Var<T> eula;         // B x 3
  ag::Var<T> translation;  // B x 3
  ag::Var<T> pooled;       // B x C
};

/// pooled = mean over each sample's n points of (C ⊙ E), then two separate
/// heads. embedding (B*n) x C, confidence (B*n) x 1.
template <typename T>
PoseOutput<T> regress_pose(const ag::Var<T>& embedding, const ag::Var<T>& confidence,
                           int64_t points_per_sample, const PoseRegressor<T>& regressor);

}  // namespace rvo::model
