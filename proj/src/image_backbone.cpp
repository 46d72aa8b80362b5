#include "rvo/image_backbone.hpp"

#include "rvo/errors.hpp"

namespace rvo::model {

template <typename T>
ResidualBlock<T>::ResidualBlock(nn::ParamStore<T>& store, const std::string& name, int64_t width)
    : first(store, name + ".conv1", width, width, 1), second(store, name + ".conv2", width, width, 1) {}

template <typename T>
ag::Var<T> ResidualBlock<T>::operator()(const ag::Var<T>& x, const nn::Mode& mode) const {
  const auto h = ag::relu(first(x, mode));
  return ag::relu(ag::add(x, second(h, mode)));
}

template <typename T>
ImageBackbone<T>::ImageBackbone(nn::ParamStore<T>& store, const std::string& name,
                                const ModelConfig& config) {
  int64_t in = 3;
  for (int l = 0; l < config.num_levels; ++l) {
    const std::string prefix = name + ".level" + std::to_string(l + 1);
    const int64_t width = config.image_widths[l];
    ImageLevel<T> level;
    level.down = nn::ConvBN<T>(store, prefix + ".down", in, width, 2);
    level.block1 = ResidualBlock<T>(store, prefix + ".res1", width);
    level.block2 = ResidualBlock<T>(store, prefix + ".res2", width);
    levels_.push_back(std::move(level));
    in = width;
  }
}

template <typename T>
std::vector<ag::Var<T>> ImageBackbone<T>::forward(const ag::Var<T>& images, const nn::Mode& mode) const {
  if (images.shape().size() != 4 || images.shape()[3] != 3) {
    throw ShapeError("ImageBackbone: expected (B, H, W, 3) input");
  }
  const int64_t h = images.shape()[1], w = images.shape()[2];
  const int64_t div = int64_t{1} << levels_.size();
  if (h < 32 || w < 32 || h % div != 0 || w % div != 0) {
    throw ShapeError("ImageBackbone: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be >= 32 and divisible by " + std::to_string(div));
  }
  std::vector<ag::Var<T>> maps;
  ag::Var<T> x = images;
  for (const auto& level : levels_) {
    x = ag::relu(level.down(x, mode));
    x = level.block1(x, mode);
    x = level.block2(x, mode);
    maps.push_back(x);
  }
  return maps;
}

template <typename T>
ag::Var<T> ImageBackbone<T>::pack(const std::vector<const ImageFrame*>& frames,
                                  const std::array<double, 3>& mean,
                                  const std::array<double, 3>& stddev) {
  if (frames.empty()) throw ShapeError("ImageBackbone::pack: no frames");
  const int h = frames[0]->height, w = frames[0]->width;
  std::vector<T> values;
  values.reserve(frames.size() * static_cast<size_t>(h * w * 3));
  for (const ImageFrame* f : frames) {
    if (f->height != h || f->width != w || f->pixels.size() != static_cast<size_t>(h * w * 3)) {
      throw ShapeError("ImageBackbone::pack: frames differ in size");
    }
    for (size_t i = 0; i < f->pixels.size(); ++i) {
      const int c = static_cast<int>(i % 3);
      values.push_back(static_cast<T>((f->pixels[i] - mean[c]) / stddev[c]));
    }
  }
  return ag::Var<T>::constant({static_cast<int64_t>(frames.size()), h, w, 3}, std::move(values));
}

template <typename T>
ag::Var<T> sample_features(const ag::Var<T>& feature_map, const ag::Var<T>& uv_pixels, int level,
                           const ag::Index& batch) {
  const T inv = T(1) / static_cast<T>(int64_t{1} << level);
  return ag::bilinear_sample(feature_map, ag::scale(uv_pixels, inv), batch);
}

template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template class ImageBackbone<float>;
template class ImageBackbone<double>;
template ag::Var<float> sample_features<float>(const ag::Var<float>&, const ag::Var<float>&, int,
                                              const ag::Index&);
template ag::Var<double> sample_features<double>(const ag::Var<double>&, const ag::Var<double>&,
                                                 int, const ag::Index&);

}  // namespace rvo::model
