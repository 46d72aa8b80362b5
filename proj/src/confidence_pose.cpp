#include "rvo/confidence_pose.hpp"

#include <algorithm>
#include <cmath>

#include "rvo/errors.hpp"

namespace rvo::model {

template <typename T>
std::vector<T> velocity_feature(const std::vector<T>& rrv) {
  if (rrv.empty()) return {};
  std::vector<T> magnitude(rrv.size());
  std::transform(rrv.begin(), rrv.end(), magnitude.begin(), [](T v) { return std::abs(v); });
  std::vector<T> sorted = magnitude;
  const size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  const T median = sorted[mid];
  std::vector<T> out(rrv.size() * 2);
  for (size_t i = 0; i < rrv.size(); ++i) {
    out[2 * i] = magnitude[i];
    out[2 * i + 1] = std::abs(magnitude[i] - median);
  }
  return out;
}

template <typename T>
ConfidenceBlock<T>::ConfidenceBlock(nn::ParamStore<T>& store, const std::string& name, int64_t in,
                                    int64_t width)
    : hidden(store, name + ".hidden", in, width),
      out(store, name + ".out", width, 1, /*zero_init=*/true),
      in_width(in) {}

template <typename T>
ag::Var<T> estimate_confidence(const ag::Var<T>& features, const ag::Var<T>& velocity,
                               const ag::Var<T>& prior, const ConfidenceBlock<T>& block,
                               const nn::Mode& mode) {
  if (velocity.rows() != features.rows() || velocity.cols() != 2 ||
      (prior.defined() && prior.rows() != features.rows())) {
    throw ShapeMismatch("estimate_confidence: inputs must have one row per point");
  }
  std::vector<ag::Var<T>> parts{features, velocity};
  if (prior.defined()) parts.push_back(prior);
  const auto x = ag::concat_cols(parts);
  if (x.cols() != block.in_width) {
    throw ShapeMismatch("estimate_confidence: input width " + std::to_string(x.cols()) +
                        " but block expects " + std::to_string(block.in_width));
  }
  return ag::sigmoid(block.out(block.hidden(x, mode)));
}

template <typename T>
PoseHead<T>::PoseHead(nn::ParamStore<T>& store, const std::string& name, int64_t in, int64_t width,
                      bool zero_out)
    : hidden(store, name + ".hidden", in, width), out(store, name + ".out", width, 3, zero_out) {}

template <typename T>
ag::Var<T> PoseHead<T>::operator()(const ag::Var<T>& x) const {
  return out(ag::relu(hidden(x)));
}

template <typename T>
PoseRegressor<T>::PoseRegressor(nn::ParamStore<T>& store, const std::string& name, int64_t in,
                                int64_t width, bool zero_out)
    : eula(store, name + ".eula", in, width, zero_out),
      translation(store, name + ".t", in, width, zero_out) {}

template <typename T>
PoseOutput<T> regress_pose(const ag::Var<T>& embedding, const ag::Var<T>& confidence,
                           int64_t n, const PoseRegressor<T>& regressor) {
  if (confidence.rows() != embedding.rows() || confidence.cols() != 1 || n < 1 ||
      embedding.rows() % n != 0) {
    throw ShapeMismatch("regress_pose: confidence must be (rows x 1) aligned with the embedding");
  }
  PoseOutput<T> out;
  out.pooled = ag::group_mean(ag::mul_col(embedding, confidence), n);
  out.eula = regressor.eula(out.pooled);
  out.translation = regressor.translation(out.pooled);
  return out;
}

template std::vector<float> velocity_feature<float>(const std::vector<float>&);
template std::vector<double> velocity_feature<double>(const std::vector<double>&);
template struct ConfidenceBlock<float>;
template struct ConfidenceBlock<double>;
template struct PoseHead<float>;
template struct PoseHead<double>;
template struct PoseRegressor<float>;
template struct PoseRegressor<double>;
template ag::Var<float> estimate_confidence<float>(const ag::Var<float>&, const ag::Var<float>&,
                                                   const ag::Var<float>&,
                                                   const ConfidenceBlock<float>&, const nn::Mode&);
template ag::Var<double> estimate_confidence<double>(const ag::Var<double>&,
                                                     const ag::Var<double>&,
                                                     const ag::Var<double>&,
                                                     const ConfidenceBlock<double>&,
                                                     const nn::Mode&);
template PoseOutput<float> regress_pose<float>(const ag::Var<float>&, const ag::Var<float>&,
                                               int64_t, const PoseRegressor<float>&);
template PoseOutput<double> regress_pose<double>(const ag::Var<double>&, const ag::Var<double>&,
                                                 int64_t, const PoseRegressor<double>&);

}  // namespace rvo::model
