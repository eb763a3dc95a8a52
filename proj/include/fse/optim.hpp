#pragma once

#include <cmath>

#include "fse/params.hpp"

namespace fse {

// lr = lr_min + 0.5*(lr_init - lr_min)*(1 + cos(pi*step/total)); steps past
// the horizon clamp to lr_min.
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr_init, double lr_min = 0.0) {
  FSE_CHECK(total >= 1, ConfigError, "cosine_lr: total must be >= 1");
  FSE_CHECK(step >= 0, ConfigError, "cosine_lr: negative step");
  if (step > total) return lr_min;
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(3.14159265358979323846 * double(step) / double(total)));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

template <typename T>
struct AdamWStateT {
  NamedTensorMapT<T> m, v;  // first/second moments, lazily created
  std::int64_t step = 0;
};

using AdamWState = AdamWStateT<float>;

namespace detail {

template <typename T>
void adamw_update_one(TensorT<T>& p, const TensorT<T>& g, TensorT<T>& m, TensorT<T>& v, std::int64_t t,
                      double lr, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    double pi = double(p[i]), gi = double(g[i]);
    pi -= lr * cfg.weight_decay * pi;  // decoupled decay first
    double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
    double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
    m[i] = T(mi);
    v[i] = T(vi);
    pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
    p[i] = T(pi);
  }
}

}  // namespace detail

// One decoupled-weight-decay Adam step over name-aligned maps.
template <typename T>
void adamw_step(NamedTensorMapT<T>& params, const NamedTensorMapT<T>& grads, AdamWStateT<T>& state,
                double lr, const AdamWConfig& cfg = {}) {
  for (const auto& [name, g] : grads)
    FSE_CHECK(params.count(name), StateError, "adamw_step: gradient for unknown parameter '" + name + "'");
  state.step += 1;
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    FSE_CHECK(git != grads.end(), StateError, "adamw_step: missing gradient for '" + name + "'");
    check_same_shape(p, git->second, ("adamw_step '" + name + "'").c_str());
    if (!state.m.count(name)) state.m[name] = TensorT<T>(p.shape());
    if (!state.v.count(name)) state.v[name] = TensorT<T>(p.shape());
    detail::adamw_update_one(p, git->second, state.m[name], state.v[name], state.step, lr, cfg);
  }
}

// Variant over live parameter vars; parameters that received no gradient
// this step (e.g. stages disabled by ablation) are left untouched.
template <typename T>
void adamw_step_vars(ParamMapT<T>& params, AdamWStateT<T>& state, double lr, const AdamWConfig& cfg = {}) {
  state.step += 1;
  for (auto& [name, var] : params) {
    if (var->grad.numel() != var->value.numel()) continue;
    if (!state.m.count(name)) state.m[name] = TensorT<T>(var->value.shape());
    if (!state.v.count(name)) state.v[name] = TensorT<T>(var->value.shape());
    detail::adamw_update_one(var->value, var->grad, state.m[name], state.v[name], state.step, lr, cfg);
  }
}

}  // namespace fse
