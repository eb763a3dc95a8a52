#pragma once

#include <string>

#include "fse/nn_ops.hpp"
#include "fse/params.hpp"

namespace fse {

// MaskGuideNet: E -> D -> E -> 1x1 head -> sigmoid on a 4-channel
// (image (+) initial mask) input, producing the refined shadow map M'.
struct MaskNetConfig {
  std::int64_t in_channels = 4;
  std::int64_t base_channels = 32;
  std::int64_t num_extract_blocks = 2;   // convs per E stage
  std::int64_t num_residual_blocks = 4;  // D stage

  void validate() const {
    FSE_CHECK(in_channels == 4, ConfigError, "MaskNetConfig: input is image (+) mask, 4 channels");
    FSE_CHECK(base_channels >= 8, ConfigError, "MaskNetConfig: base_channels must be >= 8");
    FSE_CHECK(num_extract_blocks >= 1 && num_residual_blocks >= 1, ConfigError,
              "MaskNetConfig: block counts must be >= 1");
  }
};

template <typename T>
NamedTensorMapT<T> maskguide_init(const MaskNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NamedTensorMapT<T> p;
  auto conv = [&](const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k) {
    Shape ws{cout, cin, k, k};
    p[name + ".weight"] = uniform_fan_in<T>(rng, ws, conv_fan_in<T>(ws));
    p[name + ".bias"] = TensorT<T>({cout});
  };
  const std::int64_t B = cfg.base_channels;
  for (std::int64_t i = 0; i < cfg.num_extract_blocks; ++i)
    conv("mask.e1." + std::to_string(i), B, i == 0 ? cfg.in_channels : B, 3);
  for (std::int64_t i = 0; i < cfg.num_residual_blocks; ++i) {
    conv("mask.d." + std::to_string(i) + ".conv1", B, B, 3);
    conv("mask.d." + std::to_string(i) + ".conv2", B, B, 3);
  }
  for (std::int64_t i = 0; i < cfg.num_extract_blocks; ++i)
    conv("mask.e2." + std::to_string(i), B, B, 3);
  conv("mask.head", 1, B, 1);
  return p;
}

template <typename T>
VarT<T> maskguide_forward(const ParamMapT<T>& p, const VarT<T>& img, const VarT<T>& init_mask,
                          const MaskNetConfig& cfg) {
  cfg.validate();
  FSE_CHECK(img->value.rank() == 4 && init_mask->value.rank() == 4, ShapeError, "maskguide: rank-4 inputs");
  FSE_CHECK(img->value.size(1) + init_mask->value.size(1) == cfg.in_channels, ShapeError,
            "maskguide: image (+) mask must form a 4-channel input, got " +
                std::to_string(img->value.size(1) + init_mask->value.size(1)));
  FSE_CHECK(img->value.all_finite() && init_mask->value.all_finite(), NumericError,
            "maskguide: non-finite input");

  const Conv2dSpec k3{1, 1, 1, 1};
  const Conv2dSpec k1{1, 0, 1, 1};
  auto cv = [&](const VarT<T>& x, const std::string& name, const Conv2dSpec& s) {
    return conv2d(x, param_at(p, name + ".weight"), param_at(p, name + ".bias"), s);
  };

  // channel order is load-bearing: image first (0-2), mask last (3)
  VarT<T> x = concat_channels(img, init_mask);
  for (std::int64_t i = 0; i < cfg.num_extract_blocks; ++i)
    x = leaky_relu(cv(x, "mask.e1." + std::to_string(i), k3));
  for (std::int64_t i = 0; i < cfg.num_residual_blocks; ++i) {
    std::string base = "mask.d." + std::to_string(i);
    VarT<T> y = cv(leaky_relu(cv(x, base + ".conv1", k3)), base + ".conv2", k3);
    x = add(x, y);
  }
  for (std::int64_t i = 0; i < cfg.num_extract_blocks; ++i)
    x = leaky_relu(cv(x, "mask.e2." + std::to_string(i), k3));
  return sigmoid(cv(x, "mask.head", k1));
}

template <typename T>
TensorT<T> maskguide_forward(const NamedTensorMapT<T>& params, const TensorT<T>& img,
                             const TensorT<T>& init_mask, const MaskNetConfig& cfg) {
  NoGradGuard ng;
  auto p = make_param_vars(params, false);
  return maskguide_forward(p, make_leaf(img), make_leaf(init_mask), cfg)->value;
}

}  // namespace fse
