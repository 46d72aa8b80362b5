#include "rvo/fusion.hpp"

#include "rvo/errors.hpp"

namespace rvo::model {

AttentionOver parse_attention(const std::string& name) {
  if (name == "samples") return AttentionOver::kSamples;
  if (name == "aggregated") return AttentionOver::kAggregated;
  throw ConfigError("unknown attention mode '" + name + "'");
}

template <typename T>
FusionBlock<T>::FusionBlock(nn::ParamStore<T>& store, const std::string& name, int64_t w,
                            int64_t k, int64_t h)
    : query(store, name + ".query", w, w),
      offsets(store, name + ".offsets", w, 2 * k, /*zero_init=*/true),
      weights(store, name + ".weights", w, k),
      key(store, name + ".key", w, w),
      value(store, name + ".value", w, w),
      output(store, name + ".attn_out", w, w),
      out(store, name + ".out", w, w),
      width(w),
      samples(k),
      heads(h) {}

template <typename T>
FusionResult<T> fuse_level(const std::vector<geometry::Points<T>>& coords,
                           const ag::Var<T>& point_features, const ag::Var<T>& image_map,
                           const std::vector<geometry::Calibration>& calib,
                           geometry::ImageSize image_size, int level, const FusionBlock<T>& block,
                           const nn::Mode& mode, AttentionOver attention) {
  const auto batch = static_cast<int64_t>(coords.size());
  if (batch == 0 || static_cast<int64_t>(calib.size()) != batch) {
    throw ShapeMismatch("fuse_level: need one calibration per sample");
  }
  const int64_t n = coords[0].rows();
  const int64_t c = block.width;
  const int64_t k = block.samples;
  if (point_features.rows() != batch * n || point_features.cols() != c) {
    throw ShapeMismatch("fuse_level: point features do not match " + std::to_string(batch) + "x" +
                        std::to_string(n) + "x" + std::to_string(c));
  }
  if (image_map.shape().size() != 4 || image_map.shape()[0] != batch || image_map.shape()[3] != c) {
    throw ShapeMismatch("fuse_level: image map must be (B, h, w, C) with matching width");
  }

  const T stride = static_cast<T>(int64_t{1} << level);
  std::vector<T> base(static_cast<size_t>(batch * n * 2));
  std::vector<T> mask(static_cast<size_t>(batch * n));
  FusionResult<T> result;
  result.valid.reserve(static_cast<size_t>(batch * n));
  for (int64_t b = 0; b < batch; ++b) {
    if (coords[b].rows() != n) throw ShapeMismatch("fuse_level: samples differ in point count");
    const geometry::Points3d pts = coords[b].template cast<double>();
    const auto proj = geometry::project_points(pts, calib[b], image_size);
    for (int64_t i = 0; i < n; ++i) {
      const bool ok = proj.valid[i] != 0;
      const int64_t r = b * n + i;
      // Invalid points sample at the principal point; their output is masked.
      const double u = ok ? proj.uv(i, 0) : calib[b].K(0, 2);
      const double v = ok ? proj.uv(i, 1) : calib[b].K(1, 2);
      base[r * 2] = static_cast<T>(u) / stride;
      base[r * 2 + 1] = static_cast<T>(v) / stride;
      mask[r] = ok ? T(1) : T(0);
      result.valid.push_back(ok ? 1 : 0);
    }
  }
  const auto base_var = ag::Var<T>::constant({batch * n, 2}, std::move(base));
  const auto mask_var = ag::Var<T>::constant({batch * n, 1}, std::move(mask));

  ag::Index sample_batch(static_cast<size_t>(batch * n * k));
  for (size_t i = 0; i < sample_batch.size(); ++i) {
    sample_batch[i] = static_cast<int32_t>(static_cast<int64_t>(i) / (n * k));
  }

  const auto q = block.query(point_features);
  const auto offsets = ag::reshape(block.offsets(q), {batch * n * k, 2});
  result.weights = ag::row_softmax(block.weights(q));
  result.locations = ag::add(ag::repeat_rows(base_var, k), offsets);
  const auto sampled = ag::bilinear_sample(image_map, result.locations, sample_batch);
  const auto aggregated =
      ag::group_sum(ag::mul_col(sampled, ag::reshape(result.weights, {batch * n * k, 1})), k);
  result.aggregated = ag::mul_col(aggregated, mask_var);

  ag::Var<T> attended;
  if (attention == AttentionOver::kSamples) {
    attended = ag::grouped_attention(q, block.key(sampled), block.value(sampled), k, block.heads);
  } else {
    attended = ag::grouped_attention(q, block.key(aggregated), block.value(aggregated), 1,
                                     block.heads);
  }
  // Masked before and after the output layer so invalid rows enter its batch
  // statistics as constant zeros.
  const auto image_to_point = ag::mul_col(ag::add(block.output(attended), aggregated), mask_var);
  const auto image_half = ag::mul_col(block.out(image_to_point, mode), mask_var);
  result.fused = ag::concat_cols<T>({image_half, point_features});
  return result;
}

template struct FusionBlock<float>;
template struct FusionBlock<double>;
template FusionResult<float> fuse_level<float>(const std::vector<geometry::Points<float>>&,
                                               const ag::Var<float>&, const ag::Var<float>&,
                                               const std::vector<geometry::Calibration>&,
                                               geometry::ImageSize, int, const FusionBlock<float>&,
                                               const nn::Mode&, AttentionOver);
template FusionResult<double> fuse_level<double>(const std::vector<geometry::Points<double>>&,
                                                 const ag::Var<double>&, const ag::Var<double>&,
                                                 const std::vector<geometry::Calibration>&,
                                                 geometry::ImageSize, int,
                                                 const FusionBlock<double>&, const nn::Mode&,
                                                 AttentionOver);

}  // namespace rvo::model
