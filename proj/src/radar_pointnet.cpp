#include "rvo/radar_pointnet.hpp"

#include <algorithm>

#include "rvo/errors.hpp"

namespace rvo::model {

Pooling parse_pooling(const std::string& name) {
  if (name == "max") return Pooling::kMax;
  if (name == "avg") return Pooling::kAverage;
  throw ConfigError("unknown pooling '" + name + "'");
}

template <typename T>
AggregationBlock<T>::AggregationBlock(nn::ParamStore<T>& store, const std::string& name,
                                      int64_t in_feats, int64_t out_width)
    : spatial(store, name + ".spatial", 3, out_width),
      velocity(store, name + ".velocity", 1, out_width),
      intensity(store, name + ".intensity", 1, out_width),
      fusion(store, name + ".fusion", 3 * out_width, out_width),
      final(store, name + ".final", in_feats + out_width + 5, out_width),
      in_features(in_feats),
      width(out_width) {}

template <typename T>
ag::Var<T> aggregate_features(const ag::Var<T>& grouped, int64_t k, const AggregationBlock<T>& block,
                              const nn::Mode& mode, Pooling final_pool) {
  if (grouped.cols() != 5 + block.in_features) {
    throw ShapeMismatch("aggregate_features: grouped width " + std::to_string(grouped.cols()) +
                        " but block expects " + std::to_string(5 + block.in_features));
  }
  const auto s = ag::slice_cols(grouped, 0, 3);
  const auto v = ag::slice_cols(grouped, 3, 4);
  const auto p = ag::slice_cols(grouped, 4, 5);
  const auto enc = ag::concat_cols<T>({block.spatial(s, mode), block.velocity(v, mode),
                                       block.intensity(p, mode)});
  const auto deep = block.fusion(enc, mode);
  const auto pooled = ag::repeat_rows(ag::group_mean(deep, k), k);
  std::vector<ag::Var<T>> parts;
  if (block.in_features > 0) parts.push_back(ag::slice_cols(grouped, 5, grouped.cols()));
  parts.push_back(pooled);
  parts.push_back(s);
  parts.push_back(v);
  parts.push_back(p);
  const auto per_neighbor = block.final(ag::concat_cols(parts), mode);
  return final_pool == Pooling::kMax ? ag::group_max(per_neighbor, k)
                                     : ag::group_mean(per_neighbor, k);
}

template <typename T>
ag::Var<T> PointLevel<T>::coords_var() const {
  std::vector<T> values;
  values.reserve(raw5.size() * static_cast<size_t>(points_per_sample) * 3);
  for (const auto& r : raw5) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      for (int d = 0; d < 3; ++d) values.push_back(r(i, d));
    }
  }
  return ag::Var<T>::constant({static_cast<int64_t>(raw5.size()) * points_per_sample, 3},
                              std::move(values));
}

template <typename T>
RadarPointNet<T>::RadarPointNet(nn::ParamStore<T>& store, const std::string& name,
                                const ModelConfig& config)
    : group_k_(config.group_k),
      num_levels_(config.num_levels),
      final_pool_(parse_pooling(config.final_pool)) {
  int64_t in = 0;
  for (int l = 0; l < config.num_levels; ++l) {
    const int64_t width = config.point_widths[l];
    blocks_.emplace_back(store, name + ".level" + std::to_string(l + 1), in, width);
    in = width;
  }
}

template <typename T>
PointPyramid<T> RadarPointNet<T>::forward(const std::vector<pc::Matrix<T>>& frames,
                                          const nn::Mode& mode) const {
  if (frames.empty()) throw EmptyCloud("RadarPointNet: empty batch");
  const int64_t n = frames[0].rows();
  const int64_t divisor = int64_t{1} << num_levels_;
  if (n < divisor || n % divisor != 0) {
    throw BadSampleCount("RadarPointNet: " + std::to_string(n) + " points is not a multiple of " +
                         std::to_string(divisor));
  }
  for (const auto& f : frames) {
    if (f.rows() != n || f.cols() != 5) {
      throw ShapeMismatch("RadarPointNet: every frame must be " + std::to_string(n) + " x 5");
    }
  }
  const auto batch = static_cast<int64_t>(frames.size());

  PointPyramid<T> pyramid;
  // The raw input acts as level 0 with no learned features.
  std::vector<pc::Matrix<T>> prev_raw = frames;
  ag::Var<T> prev_features;
  int64_t prev_n = n;
  for (int l = 0; l < num_levels_; ++l) {
    const int64_t m = prev_n / 2;
    const int64_t k = std::min<int64_t>(group_k_, prev_n);
    PointLevel<T> level;
    level.points_per_sample = m;
    std::vector<T> local(static_cast<size_t>(batch * m * k * 5));
    ag::Index gather;
    gather.reserve(static_cast<size_t>(batch * m * k));
    for (int64_t b = 0; b < batch; ++b) {
      const geometry::Points<T> prev_coords = prev_raw[b].leftCols(3);
      auto centers_idx = pc::farthest_point_sample(prev_coords, m);
      pc::Matrix<T> raw(m, 5);
      for (int64_t i = 0; i < m; ++i) raw.row(i) = prev_raw[b].row(centers_idx[i]);
      const geometry::Points<T> centers = raw.leftCols(3);
      const auto nb = pc::knn(centers, prev_coords, k);
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < k; ++j) {
          const int32_t s = nb.idx(i, j);
          T* row = local.data() + ((b * m + i) * k + j) * 5;
          for (int d = 0; d < 3; ++d) row[d] = prev_raw[b](s, d) - centers(i, d);
          row[3] = prev_raw[b](s, 3);
          row[4] = prev_raw[b](s, 4);
          gather.push_back(static_cast<int32_t>(b * prev_n + s));
        }
      }
      level.raw5.push_back(std::move(raw));
      level.parent_index.push_back(std::move(centers_idx));
    }
    auto grouped = ag::Var<T>::constant({batch * m * k, 5}, std::move(local));
    if (prev_features.defined()) {
      grouped = ag::concat_cols<T>({grouped, ag::gather_rows(prev_features, gather)});
    }
    level.features = aggregate_features(grouped, k, blocks_[l], mode, final_pool_);
    prev_raw = level.raw5;
    prev_features = level.features;
    prev_n = m;
    pyramid.levels.push_back(std::move(level));
  }
  return pyramid;
}

template struct AggregationBlock<float>;
template struct AggregationBlock<double>;
template struct PointLevel<float>;
template struct PointLevel<double>;
template class RadarPointNet<float>;
template class RadarPointNet<double>;
template ag::Var<float> aggregate_features<float>(const ag::Var<float>&, int64_t,
                                                  const AggregationBlock<float>&, const nn::Mode&,
                                                  Pooling);
template ag::Var<double> aggregate_features<double>(const ag::Var<double>&, int64_t,
                                                    const AggregationBlock<double>&,
                                                    const nn::Mode&, Pooling);

}  // namespace rvo::model
