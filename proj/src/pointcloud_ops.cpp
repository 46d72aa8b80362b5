#include "rvo/pointcloud_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rvo/errors.hpp"

namespace rvo::pc {

namespace {

template <typename T>
T squared_distance(const geometry::Points<T>& a, Eigen::Index i, const geometry::Points<T>& b,
                   Eigen::Index j) {
  const T dx = a(i, 0) - b(j, 0), dy = a(i, 1) - b(j, 1), dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

template <typename T>
std::vector<int32_t> farthest_point_sample(const geometry::Points<T>& coords, int64_t m) {
  const int64_t n = coords.rows();
  if (m < 1 || m > n) {
    throw CountOutOfRange("farthest_point_sample: m = " + std::to_string(m) + " for " +
                          std::to_string(n) + " points");
  }
  std::vector<int32_t> selected;
  selected.reserve(static_cast<size_t>(m));
  std::vector<T> min_dist(static_cast<size_t>(n), std::numeric_limits<T>::infinity());
  int32_t current = 0;
  selected.push_back(current);
  for (int64_t s = 1; s < m; ++s) {
    int32_t best = -1;
    T best_dist = T(-1);
    for (int64_t i = 0; i < n; ++i) {
      const T d = squared_distance(coords, i, coords, current);
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = static_cast<int32_t>(i);
      }
    }
    current = best;
    selected.push_back(current);
  }
  return selected;
}

template <typename T>
NeighborIndex<T> knn(const geometry::Points<T>& query, const geometry::Points<T>& source, int64_t k) {
  const int64_t n = source.rows(), m = query.rows();
  if (k > n) {
    throw KTooLarge("knn: k = " + std::to_string(k) + " exceeds " + std::to_string(n) +
                    " source points");
  }
  if (k < 1) throw KTooLarge("knn: k must be positive");
  NeighborIndex<T> out;
  out.idx.resize(m, k);
  out.dist.resize(m, k);
  std::vector<std::pair<T, int32_t>> cand(static_cast<size_t>(n));
  for (int64_t q = 0; q < m; ++q) {
    for (int64_t j = 0; j < n; ++j) {
      cand[j] = {squared_distance(query, q, source, j), static_cast<int32_t>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int64_t j = 0; j < k; ++j) {
      out.idx(q, j) = cand[j].second;
      out.dist(q, j) = std::sqrt(cand[j].first);
    }
  }
  return out;
}

template <typename T>
Matrix<T> group(const FeatureSet<T>& source, const NeighborIndex<T>& neighbors,
                const geometry::Points<T>& centers) {
  const Eigen::Index m = neighbors.idx.rows(), k = neighbors.idx.cols();
  const Eigen::Index c = source.features.cols();
  if (centers.rows() != m) throw ShapeMismatch("group: one center per neighbor row required");
  if (source.features.rows() != source.size() && c > 0) {
    throw ShapeMismatch("group: feature rows differ from point count");
  }
  Matrix<T> out(m * k, 5 + c);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const int32_t s = neighbors.idx(i, j);
      if (s < 0 || s >= source.size()) {
        throw IndexOutOfRange("group: neighbor index " + std::to_string(s) + " outside source");
      }
      auto row = out.row(i * k + j);
      for (int d = 0; d < 3; ++d) row(d) = source.raw5(s, d) - centers(i, d);
      row(3) = source.raw5(s, 3);
      row(4) = source.raw5(s, 4);
      if (c > 0) row.tail(c) = source.features.row(s);
    }
  }
  return out;
}

template <typename T>
InterpolationWeights<T> interpolation_weights(const geometry::Points<T>& sparse,
                                              const geometry::Points<T>& dense, int64_t k) {
  auto nb = knn(dense, sparse, k);
  InterpolationWeights<T> out;
  out.idx = nb.idx;
  out.weights.resize(nb.dist.rows(), nb.dist.cols());
  for (Eigen::Index i = 0; i < nb.dist.rows(); ++i) {
    T total = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      out.weights(i, j) = T(1) / (nb.dist(i, j) + static_cast<T>(kInterpolationEps));
      total += out.weights(i, j);
    }
    out.weights.row(i) /= total;
  }
  return out;
}

template <typename T>
Matrix<T> knn_interpolate(const geometry::Points<T>& sparse_coords, const Matrix<T>& sparse_values,
                          const geometry::Points<T>& dense_coords, int64_t k) {
  if (sparse_values.rows() != sparse_coords.rows()) {
    throw ShapeMismatch("knn_interpolate: one value row per sparse point required");
  }
  const auto w = interpolation_weights(sparse_coords, dense_coords, k);
  Matrix<T> out = Matrix<T>::Zero(dense_coords.rows(), sparse_values.cols());
  // v0 + sum_j w_j (v_j - v0): the same convex combination, exact on constant fields.
  for (Eigen::Index i = 0; i < dense_coords.rows(); ++i) {
    const auto base = sparse_values.row(w.idx(i, 0));
    out.row(i) = base;
    for (Eigen::Index j = 1; j < k; ++j) {
      out.row(i) += w.weights(i, j) * (sparse_values.row(w.idx(i, j)) - base);
    }
  }
  return out;
}

std::vector<int32_t> cycle_indices(int64_t n_raw, int64_t n) {
  if (n_raw < 1) throw CountOutOfRange("cycle_indices: empty frame");
  std::vector<int32_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[i] = static_cast<int32_t>(i % n_raw);
  return idx;
}

#define RVO_INSTANTIATE(T)                                                                     \
  template std::vector<int32_t> farthest_point_sample<T>(const geometry::Points<T>&, int64_t); \
  template NeighborIndex<T> knn<T>(const geometry::Points<T>&, const geometry::Points<T>&,     \
                                   int64_t);                                                   \
  template Matrix<T> group<T>(const FeatureSet<T>&, const NeighborIndex<T>&,                   \
                              const geometry::Points<T>&);                                     \
  template InterpolationWeights<T> interpolation_weights<T>(                                   \
      const geometry::Points<T>&, const geometry::Points<T>&, int64_t);                        \
  template Matrix<T> knn_interpolate<T>(const geometry::Points<T>&, const Matrix<T>&,          \
                                        const geometry::Points<T>&, int64_t);

RVO_INSTANTIATE(float)
RVO_INSTANTIATE(double)

#undef RVO_INSTANTIATE

}  // namespace rvo::pc
