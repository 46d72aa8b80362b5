#pragma once

// Two-stage patch-to-patch cost volume.
//
// Stage 1 pairs every PC1 point with its K1 nearest PC2 points, embeds each
// pair (feat1, feat2, xyz2 - xyz1) and aggregates the pairs with per-channel
// softmax weights predicted from the same trunk. Stage 2 smooths the result
// over the K2 nearest PC1 neighbours with weights conditioned on the relative
// offset. The output is aligned with PC1's point order.

#include <string>
#include <vector>

#include "rvo/autograd.hpp"
#include "rvo/geometry.hpp"
#include "rvo/nn.hpp"

namespace rvo::model {

template <typename T>
struct CostVolumeBlock {
  CostVolumeBlock() = default;
  CostVolumeBlock(nn::ParamStore<T>& store, const std::string& name, int64_t feature_width,
                  int64_t embed_width, int64_t k1, int64_t k2);

  nn::LBR<T> pair_trunk;      // feat1 + feat2 + offset -> embed
  nn::LBR<T> pair_embed;      // embed -> embed
  nn::Linear<T> pair_weight;  // embed + offset -> embed logits
  nn::LBR<T> smooth_offset;   // offset -> embed
  nn::Linear<T> smooth_weight;  // embed + embed -> embed logits
  int64_t feature_width = 0;
  int64_t embed_width = 0;
  int64_t k1 = 8;
  int64_t k2 = 8;
};

template <typename T>
struct CostVolumeResult {
  ag::Var<T> embedding;            // (B*n1) x embed
  ag::Var<T> stage1;               // (B*n1) x embed, before intra-frame smoothing
  ag::Var<T> pair_offsets;         // (B*n1*k1) x 3, xyz2 - xyz1
  std::vector<int32_t> pair_index;  // global PC2 row of each pair
  int64_t k1 = 0;
};

/// pc1: per-sample n1 x 3 coordinates; pc2: (B*n2) x 3 tensor (possibly
/// warped and differentiable). Neighbour search uses pc2's current values.
template <typename T>
CostVolumeResult<T> cost_volume(const std::vector<geometry::Points<T>>& pc1,
                                const ag::Var<T>& features1, const ag::Var<T>& pc2,
                                const ag::Var<T>& features2, const CostVolumeBlock<T>& block,
                                const nn::Mode& mode);

}  // namespace rvo::model
