#pragma once

// Point-set kernels used at every pyramid level. All distances are Euclidean
// over the three spatial coordinates only; rrv and intensity never enter them.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "rvo/geometry.hpp"

namespace rvo::pc {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMatrix = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kInterpolationK = 3;
inline constexpr double kInterpolationEps = 1e-8;

/// Points with their raw 5-D attributes (x, y, z, rrv, intensity) and learned
/// per-point features.
template <typename T>
struct FeatureSet {
  Matrix<T> raw5;      // N x 5
  Matrix<T> features;  // N x C, C may be 0

  Eigen::Index size() const { return raw5.rows(); }
  geometry::Points<T> coords() const { return raw5.leftCols(3); }
};

template <typename T>
struct NeighborIndex {
  IndexMatrix idx;  // M x K
  Matrix<T> dist;   // M x K, ascending per row
};

/// Greedy farthest-point sampling seeded at index 0; ties go to the lowest index.
/// Throws CountOutOfRange unless 1 <= m <= N.
template <typename T>
std::vector<int32_t> farthest_point_sample(const geometry::Points<T>& coords, int64_t m);

/// Exact brute-force k nearest neighbours; ties broken by lower source index.
/// Throws KTooLarge when k > N.
template <typename T>
NeighborIndex<T> knn(const geometry::Points<T>& query, const geometry::Points<T>& source, int64_t k);

/// Grouped tensor of shape (M*K) x (3 + 2 + C): center-relative offset, the
/// neighbour's rrv and intensity, then its feature vector.
template <typename T>
Matrix<T> group(const FeatureSet<T>& source, const NeighborIndex<T>& neighbors,
                const geometry::Points<T>& centers);

/// Inverse-distance weights over the k nearest sparse points.
template <typename T>
struct InterpolationWeights {
  IndexMatrix idx;    // N x k
  Matrix<T> weights;  // N x k, rows sum to 1
};

template <typename T>
InterpolationWeights<T> interpolation_weights(const geometry::Points<T>& sparse,
                                              const geometry::Points<T>& dense,
                                              int64_t k = kInterpolationK);

template <typename T>
Matrix<T> knn_interpolate(const geometry::Points<T>& sparse_coords, const Matrix<T>& sparse_values,
                          const geometry::Points<T>& dense_coords, int64_t k = kInterpolationK);

/// Indices that take a frame of n_raw points to exactly n points by cycling
/// (0, 1, ..., n_raw-1, 0, 1, ...). Used when a frame is short.
std::vector<int32_t> cycle_indices(int64_t n_raw, int64_t n);

}  // namespace rvo::pc
