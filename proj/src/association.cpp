#include "rvo/association.hpp"

#include <algorithm>

#include "rvo/errors.hpp"
#include "rvo/pointcloud_ops.hpp"

namespace rvo::model {

template <typename T>
CostVolumeBlock<T>::CostVolumeBlock(nn::ParamStore<T>& store, const std::string& name, int64_t fw,
                                    int64_t ew, int64_t kk1, int64_t kk2)
    : pair_trunk(store, name + ".pair_trunk", 2 * fw + 3, ew),
      pair_embed(store, name + ".pair_embed", ew, ew),
      pair_weight(store, name + ".pair_weight", ew + 3, ew),
      smooth_offset(store, name + ".smooth_offset", 3, ew),
      smooth_weight(store, name + ".smooth_weight", 2 * ew, ew),
      feature_width(fw),
      embed_width(ew),
      k1(kk1),
      k2(kk2) {}

template <typename T>
CostVolumeResult<T> cost_volume(const std::vector<geometry::Points<T>>& pc1,
                                const ag::Var<T>& features1, const ag::Var<T>& pc2,
                                const ag::Var<T>& features2, const CostVolumeBlock<T>& block,
                                const nn::Mode& mode) {
  const auto batch = static_cast<int64_t>(pc1.size());
  if (batch == 0 || pc1[0].rows() == 0 || pc2.rows() == 0) {
    throw EmptyCloud("cost_volume: both clouds must be non-empty");
  }
  const int64_t n1 = pc1[0].rows();
  if (pc2.rows() % batch != 0) throw ShapeMismatch("cost_volume: pc2 rows not divisible by batch");
  const int64_t n2 = pc2.rows() / batch;
  if (features1.cols() != features2.cols() || features1.cols() != block.feature_width) {
    throw ShapeMismatch("cost_volume: feature widths differ (" + std::to_string(features1.cols()) +
                        ", " + std::to_string(features2.cols()) + ", block " +
                        std::to_string(block.feature_width) + ")");
  }
  if (features1.rows() != batch * n1 || features2.rows() != batch * n2 || pc2.cols() != 3) {
    throw ShapeMismatch("cost_volume: feature rows do not match point counts");
  }
  const int64_t k1 = std::min(block.k1, n2);
  const int64_t k2 = std::min(block.k2, n1);

  std::vector<T> pc1_values;
  pc1_values.reserve(static_cast<size_t>(batch * n1 * 3));
  for (const auto& p : pc1) {
    if (p.rows() != n1) throw ShapeMismatch("cost_volume: samples differ in point count");
    for (Eigen::Index i = 0; i < n1; ++i) {
      for (int d = 0; d < 3; ++d) pc1_values.push_back(p(i, d));
    }
  }
  const auto pc1_var = ag::Var<T>::constant({batch * n1, 3}, std::move(pc1_values));

  ag::Index cross, self_rep1, intra, self_rep2;
  cross.reserve(static_cast<size_t>(batch * n1 * k1));
  intra.reserve(static_cast<size_t>(batch * n1 * k2));
  for (int64_t b = 0; b < batch; ++b) {
    geometry::Points<T> p2(n2, 3);
    for (int64_t i = 0; i < n2; ++i) {
      for (int d = 0; d < 3; ++d) p2(i, d) = pc2.value()[(b * n2 + i) * 3 + d];
    }
    const auto nb_cross = pc::knn(pc1[b], p2, k1);
    const auto nb_intra = pc::knn(pc1[b], pc1[b], k2);
    for (int64_t i = 0; i < n1; ++i) {
      for (int64_t j = 0; j < k1; ++j) {
        cross.push_back(static_cast<int32_t>(b * n2 + nb_cross.idx(i, j)));
        self_rep1.push_back(static_cast<int32_t>(b * n1 + i));
      }
      for (int64_t j = 0; j < k2; ++j) {
        intra.push_back(static_cast<int32_t>(b * n1 + nb_intra.idx(i, j)));
        self_rep2.push_back(static_cast<int32_t>(b * n1 + i));
      }
    }
  }

  CostVolumeResult<T> out;
  out.k1 = k1;
  out.pair_index = cross;
  out.pair_offsets = ag::sub(ag::gather_rows(pc2, cross), ag::gather_rows(pc1_var, self_rep1));
  const auto trunk = block.pair_trunk(
      ag::concat_cols<T>({ag::gather_rows(features1, self_rep1), ag::gather_rows(features2, cross),
                          out.pair_offsets}),
      mode);
  const auto embed = block.pair_embed(trunk, mode);
  const auto w1 = ag::group_softmax(block.pair_weight(ag::concat_cols<T>({trunk, out.pair_offsets})), k1);
  out.stage1 = ag::group_sum(ag::mul(w1, embed), k1);

  const auto offsets2 = ag::sub(ag::gather_rows(pc1_var, intra), ag::gather_rows(pc1_var, self_rep2));
  const auto neighbor_embed = ag::gather_rows(out.stage1, intra);
  const auto w2 = ag::group_softmax(
      block.smooth_weight(ag::concat_cols<T>({block.smooth_offset(offsets2, mode), neighbor_embed})),
      k2);
  out.embedding = ag::group_sum(ag::mul(w2, neighbor_embed), k2);
  return out;
}

template struct CostVolumeBlock<float>;
template struct CostVolumeBlock<double>;
template CostVolumeResult<float> cost_volume<float>(const std::vector<geometry::Points<float>>&,
                                                    const ag::Var<float>&, const ag::Var<float>&,
                                                    const ag::Var<float>&,
                                                    const CostVolumeBlock<float>&, const nn::Mode&);
template CostVolumeResult<double> cost_volume<double>(const std::vector<geometry::Points<double>>&,
                                                      const ag::Var<double>&,
                                                      const ag::Var<double>&,
                                                      const ag::Var<double>&,
                                                      const CostVolumeBlock<double>&,
                                                      const nn::Mode&);

}  // namespace rvo::model
