#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rvo/autograd.hpp"

namespace rvo::nn {

/// Forward-pass mode shared by every layer with batch statistics.
struct Mode {
  bool training = true;
  double bn_momentum = 0.1;

  ag::BatchNormState bn() const { return {training, bn_momentum, 1e-5}; }
};

enum class Init { kUniformFanIn, kZeros, kOnes };

/// Owns every trainable tensor and batch-norm buffer of a model, keyed by
/// dotted module path. Layers keep shared handles into the store, so the store
/// is neither copyable nor movable.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : rng_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  ag::Var<T> add(const std::string& name, ag::Shape shape, Init init, int64_t fan_in = 1);
  std::vector<T>& buffer(const std::string& name, size_t size, T fill);

  const std::map<std::string, ag::Var<T>>& params() const { return params_; }
  std::map<std::string, std::vector<T>>& buffers() { return buffers_; }
  const std::map<std::string, std::vector<T>>& buffers() const { return buffers_; }

  ag::Var<T> param(const std::string& name) const;
  int64_t parameter_count() const;
  void zero_grad();

 private:
  std::mt19937_64 rng_;
  std::map<std::string, ag::Var<T>> params_;
  std::map<std::string, std::vector<T>> buffers_;
};

template <typename T>
struct Linear {
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, bool zero_init = false);
  ag::Var<T> operator()(const ag::Var<T>& x) const;

  ag::Var<T> weight;
  ag::Var<T> bias;
};

template <typename T>
struct BatchNorm {
  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int64_t channels);
  ag::Var<T> operator()(const ag::Var<T>& x, const Mode& mode) const;

  ag::Var<T> gamma;
  ag::Var<T> beta;
  std::vector<T>* running_mean = nullptr;
  std::vector<T>* running_var = nullptr;
};

/// Linear -> BatchNorm -> ReLU.
template <typename T>
struct LBR {
  LBR() = default;
  LBR(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out);
  ag::Var<T> operator()(const ag::Var<T>& x, const Mode& mode) const;

  Linear<T> linear;
  BatchNorm<T> norm;
};

/// 3x3 convolution (no bias) followed by batch norm.
template <typename T>
struct ConvBN {
  ConvBN() = default;
  ConvBN(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, int stride);
  ag::Var<T> operator()(const ag::Var<T>& x, const Mode& mode) const;

  ag::Var<T> weight;
  BatchNorm<T> norm;
  int stride = 1;
};

}  // namespace rvo::nn
