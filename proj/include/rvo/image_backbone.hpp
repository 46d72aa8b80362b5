#pragma once

#include <array>
#include <string>
#include <vector>

#include "rvo/autograd.hpp"
#include "rvo/config.hpp"
#include "rvo/nn.hpp"

namespace rvo::model {

/// RGB image with values in [0, 1], stored row-major H x W x 3.
struct ImageFrame {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
};

template <typename T>
struct ResidualBlock {
  ResidualBlock() = default;
  ResidualBlock(nn::ParamStore<T>& store, const std::string& name, int64_t width);
  ag::Var<T> operator()(const ag::Var<T>& x, const nn::Mode& mode) const;

  nn::ConvBN<T> first;
  nn::ConvBN<T> second;
};

template <typename T>
struct ImageLevel {
  nn::ConvBN<T> down;
  ResidualBlock<T> block1;
  ResidualBlock<T> block2;
};

/// Strided residual pyramid. Level l (1-based) has stride 2^l. The same
/// parameters serve every frame in the batch.
template <typename T>
class ImageBackbone {
 public:
  ImageBackbone(nn::ParamStore<T>& store, const std::string& name, const ModelConfig& config);

  /// images: NHWC (B, H, W, 3). Throws ShapeError unless H, W >= 32 and
  /// divisible by 2^levels.
  std::vector<ag::Var<T>> forward(const ag::Var<T>& images, const nn::Mode& mode) const;

  /// Packs frames into an NHWC tensor, normalizing with per-channel mean/std.
  static ag::Var<T> pack(const std::vector<const ImageFrame*>& frames,
                         const std::array<double, 3>& mean, const std::array<double, 3>& std);

 private:
  std::vector<ImageLevel<T>> levels_;
};

/// Bilinear lookup of full-resolution pixel coordinates on a level-l map
/// (coordinates divided by 2^level, clamped to the border).
template <typename T>
ag::Var<T> sample_features(const ag::Var<T>& feature_map, const ag::Var<T>& uv_pixels, int level,
                           const ag::Index& batch);

}  // namespace rvo::model
