#include "rvo/nn.hpp"

#include <cmath>

#include "rvo/errors.hpp"

namespace rvo::nn {

template <typename T>
ag::Var<T> ParamStore<T>::add(const std::string& name, ag::Shape shape, Init init, int64_t fan_in) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  std::vector<T> values(static_cast<size_t>(ag::numel(shape)));
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), T(1));
      break;
    case Init::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = static_cast<T>(dist(rng_));
      break;
    }
  }
  auto var = ag::Var<T>::parameter(std::move(shape), std::move(values));
  params_.emplace(name, var);
  return var;
}

template <typename T>
std::vector<T>& ParamStore<T>::buffer(const std::string& name, size_t size, T fill) {
  auto [it, inserted] = buffers_.emplace(name, std::vector<T>(size, fill));
  if (!inserted) throw ConfigError("duplicate buffer name: " + name);
  return it->second;
}

template <typename T>
ag::Var<T> ParamStore<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
int64_t ParamStore<T>::parameter_count() const {
  int64_t total = 0;
  for (const auto& [_, p] : params_) total += p.numel();
  return total;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, p] : params_) {
    auto copy = p;
    copy.zero_grad();
  }
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out,
                  bool zero_init) {
  const Init init = zero_init ? Init::kZeros : Init::kUniformFanIn;
  weight = store.add(name + ".weight", {in, out}, init, in);
  bias = store.add(name + ".bias", {out}, init, in);
}

template <typename T>
ag::Var<T> Linear<T>::operator()(const ag::Var<T>& x) const {
  return ag::linear(x, weight, bias);
}

template <typename T>
BatchNorm<T>::BatchNorm(ParamStore<T>& store, const std::string& name, int64_t channels) {
  gamma = store.add(name + ".gamma", {channels}, Init::kOnes);
  beta = store.add(name + ".beta", {channels}, Init::kZeros);
  running_mean = &store.buffer(name + ".running_mean", static_cast<size_t>(channels), T(0));
  running_var = &store.buffer(name + ".running_var", static_cast<size_t>(channels), T(1));
}

template <typename T>
ag::Var<T> BatchNorm<T>::operator()(const ag::Var<T>& x, const Mode& mode) const {
  return ag::batch_norm(x, gamma, beta, *running_mean, *running_var, mode.bn());
}

template <typename T>
LBR<T>::LBR(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out)
    : linear(store, name + ".linear", in, out), norm(store, name + ".bn", out) {}

template <typename T>
ag::Var<T> LBR<T>::operator()(const ag::Var<T>& x, const Mode& mode) const {
  return ag::relu(norm(linear(x), mode));
}

template <typename T>
ConvBN<T>::ConvBN(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, int s)
    : norm(store, name + ".bn", out), stride(s) {
  weight = store.add(name + ".weight", {9 * in, out}, Init::kUniformFanIn, 9 * in);
}

template <typename T>
ag::Var<T> ConvBN<T>::operator()(const ag::Var<T>& x, const Mode& mode) const {
  return norm(ag::conv3x3(x, weight, stride), mode);
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct LBR<float>;
template struct LBR<double>;
template struct ConvBN<float>;
template struct ConvBN<double>;

}  // namespace rvo::nn
