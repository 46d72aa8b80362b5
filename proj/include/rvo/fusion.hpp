#pragma once

// Adaptive radar-camera fusion. Every radar point is projected into the
// level's image feature map; a query derived from its point feature predicts
// K deformable sampling offsets and softmax weights, the sampled image
// features are cross-attended by the query, and the result is concatenated
// with the point feature.

#include <string>
#include <vector>

#include "rvo/autograd.hpp"
#include "rvo/config.hpp"
#include "rvo/geometry.hpp"
#include "rvo/nn.hpp"

namespace rvo::model {

enum class AttentionOver {
  kSamples,     // query attends over its K deformable samples
  kAggregated,  // query attends over the single weight-aggregated feature
};

AttentionOver parse_attention(const std::string& name);

template <typename T>
struct FusionBlock {
  FusionBlock() = default;
  FusionBlock(nn::ParamStore<T>& store, const std::string& name, int64_t width, int64_t samples,
              int64_t heads);

  nn::Linear<T> query;    // W_P
  nn::Linear<T> offsets;  // query -> K x 2 pixel offsets, zero initialized
  nn::Linear<T> weights;  // query -> K logits
  nn::Linear<T> key;      // W_K
  nn::Linear<T> value;    // W_V
  nn::Linear<T> output;   // attention output projection
  nn::LBR<T> out;
  int64_t width = 0;
  int64_t samples = 0;
  int64_t heads = 1;
};

template <typename T>
struct FusionResult {
  ag::Var<T> fused;       // (B*n) x 2C: gated image half, then the point feature
  ag::Var<T> aggregated;  // (B*n) x C weight-aggregated image feature, zero where invalid
  ag::Var<T> weights;     // (B*n) x K softmax weights
  ag::Var<T> locations;   // (B*n*K) x 2 sampling locations in level pixels
  std::vector<uint8_t> valid;
};

/// coords: one n x 3 radar-frame matrix per sample; point_features (B*n) x C;
/// image_map (B, h, w, C) at stride 2^level; calib: one per sample.
template <typename T>
FusionResult<T> fuse_level(const std::vector<geometry::Points<T>>& coords,
                           const ag::Var<T>& point_features, const ag::Var<T>& image_map,
                           const std::vector<geometry::Calibration>& calib,
                           geometry::ImageSize image_size, int level, const FusionBlock<T>& block,
                           const nn::Mode& mode, AttentionOver attention = AttentionOver::kSamples);

}  // namespace rvo::model
