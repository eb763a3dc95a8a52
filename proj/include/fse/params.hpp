#pragma once

#include <map>
#include <string>
#include <vector>

#include "fse/autodiff.hpp"
#include "fse/rng.hpp"
#include "fse/tensor.hpp"

namespace fse {

// Named parameter storage shared by all model stages. std::map keeps
// iteration order stable for optimizers and checkpoints.
template <typename T>
using NamedTensorMapT = std::map<std::string, TensorT<T>>;
using NamedTensorMap = NamedTensorMapT<float>;

template <typename T>
using ParamMapT = std::map<std::string, VarT<T>>;

template <typename T>
const TensorT<T>& named_at(const NamedTensorMapT<T>& m, const std::string& name) {
  auto it = m.find(name);
  FSE_CHECK(it != m.end(), StateError, "missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
const VarT<T>& param_at(const ParamMapT<T>& m, const std::string& name) {
  auto it = m.find(name);
  FSE_CHECK(it != m.end(), StateError, "missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
ParamMapT<T> make_param_vars(const NamedTensorMapT<T>& values, bool requires_grad) {
  ParamMapT<T> out;
  for (const auto& [name, tensor] : values) out[name] = make_leaf(tensor, requires_grad);
  return out;
}

template <typename T>
NamedTensorMapT<T> param_values(const ParamMapT<T>& params) {
  NamedTensorMapT<T> out;
  for (const auto& [name, var] : params) out[name] = var->value;
  return out;
}

template <typename T>
void zero_grads(ParamMapT<T>& params) {
  for (auto& [name, var] : params) {
    (void)name;
    if (var->grad.numel() > 0) var->grad.fill(T(0));
  }
}

template <typename T>
std::int64_t param_count(const NamedTensorMapT<T>& m) {
  std::int64_t n = 0;
  for (const auto& [k, v] : m) {
    (void)k;
    n += v.numel();
  }
  return n;
}

// fan-in-scaled uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in))
template <typename T>
TensorT<T> uniform_fan_in(Rng& rng, Shape shape, std::int64_t fan_in) {
  const double bound = std::sqrt(6.0 / double(std::max<std::int64_t>(1, fan_in)));
  TensorT<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
std::int64_t conv_fan_in(const Shape& weight_shape) {
  // [Cout, Cin_per_group, kh, kw]
  return weight_shape[1] * weight_shape[2] * weight_shape[3];
}

}  // namespace fse
