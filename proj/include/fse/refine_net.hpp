#pragma once

#include <string>

#include "fse/nn_ops.hpp"
#include "fse/params.hpp"

namespace fse {

// RefineFaceNet: R = C + AHSWA(C) (x) IRC(C, M').
//
// AHSWA runs num_scales stages of windowed attention blocks at window sizes
// w, 2w, ... (full resolution throughout); blocks alternate regular and
// shifted partitioning. IRC applies three mask-conditioned modulation blocks.
struct RefineNetConfig {
  std::int64_t embed_dim = 48;
  std::int64_t window_size = 8;
  std::int64_t num_heads = 4;
  std::int64_t depth = 2;  // blocks per scale: regular, shifted, ...
  std::int64_t num_scales = 2;
  std::int64_t irc_blocks = 3;
  std::int64_t irc_hidden = 32;
  std::int64_t ffn_ratio = 2;

  void validate() const {
    FSE_CHECK(window_size >= 2, ConfigError, "RefineNetConfig: window_size must be >= 2");
    FSE_CHECK(depth >= 2 && depth % 2 == 0, ConfigError,
              "RefineNetConfig: depth must be even (regular/shifted alternation)");
    FSE_CHECK(irc_blocks == 3, ConfigError, "RefineNetConfig: exactly three modulation blocks");
    FSE_CHECK(num_scales >= 1, ConfigError, "RefineNetConfig: need at least one scale");
    FSE_CHECK(embed_dim % num_heads == 0, ConfigError, "RefineNetConfig: heads must divide embed_dim");
    FSE_CHECK(irc_hidden >= 4 && ffn_ratio >= 1, ConfigError, "RefineNetConfig: bad hidden sizes");
  }

  std::int64_t scale_window(std::int64_t scale) const {  // scale is 1-based
    return window_size << (scale - 1);
  }
};

template <typename T>
NamedTensorMapT<T> refine_init(const RefineNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NamedTensorMapT<T> p;
  const std::int64_t C = cfg.embed_dim, Hd = cfg.irc_hidden;
  auto conv = [&](const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k) {
    Shape ws{cout, cin, k, k};
    p[name + ".weight"] = uniform_fan_in<T>(rng, ws, conv_fan_in<T>(ws));
    p[name + ".bias"] = TensorT<T>({cout});
  };

  conv("refine.embed", C, 3, 3);
  for (std::int64_t s = 1; s <= cfg.num_scales; ++s) {
    const std::int64_t win = cfg.scale_window(s);
    for (std::int64_t b = 1; b <= cfg.depth; ++b) {
      std::string base = "refine.s" + std::to_string(s) + ".b" + std::to_string(b);
      p[base + ".qkv.weight"] = uniform_fan_in<T>(rng, Shape{3 * C, C}, C);
      p[base + ".qkv.bias"] = TensorT<T>({3 * C});
      p[base + ".proj.weight"] = uniform_fan_in<T>(rng, Shape{C, C}, C);
      p[base + ".proj.bias"] = TensorT<T>({C});
      p[base + ".bias_table"] = TensorT<T>({(2 * win - 1) * (2 * win - 1), cfg.num_heads});
      Shape dw{C, 1, 3, 3};
      p[base + ".dw.weight"] = uniform_fan_in<T>(rng, dw, 9);
      p[base + ".dw.bias"] = TensorT<T>({C});
      p[base + ".ffn.fc1.weight"] = uniform_fan_in<T>(rng, Shape{cfg.ffn_ratio * C, C, 1, 1}, C);
      p[base + ".ffn.fc1.bias"] = TensorT<T>({cfg.ffn_ratio * C});
      p[base + ".ffn.fc2.weight"] = uniform_fan_in<T>(rng, Shape{C, cfg.ffn_ratio * C, 1, 1}, cfg.ffn_ratio * C);
      p[base + ".ffn.fc2.bias"] = TensorT<T>({C});
    }
  }
  // zero head: the attention branch starts silent so R == C at init
  p["refine.head.weight"] = TensorT<T>({3, C, 1, 1});
  p["refine.head.bias"] = TensorT<T>({3});

  conv("refine.irc.embed", Hd, 3, 3);
  for (std::int64_t b = 1; b <= cfg.irc_blocks; ++b) {
    std::string base = "refine.irc.b" + std::to_string(b);
    conv(base + ".gamma.c1", Hd, 1, 1);
    // gamma head zero, beta head one, wgamma one: each block starts as identity
    p[base + ".gamma.c2.weight"] = TensorT<T>({Hd, Hd, 1, 1});
    p[base + ".gamma.c2.bias"] = TensorT<T>({Hd});
    conv(base + ".beta.c1", Hd, 1, 1);
    p[base + ".beta.c2.weight"] = TensorT<T>({Hd, Hd, 1, 1});
    p[base + ".beta.c2.bias"] = TensorT<T>::ones({Hd});
    p[base + ".wgamma"] = TensorT<T>::ones({Hd});
  }
  conv("refine.irc.proj", 3, Hd, 1);
  return p;
}

namespace detail {

// one attention block: pre-norm windowed MHSA, depthwise conv, pre-norm FFN,
// each with a residual connection
template <typename T>
VarT<T> attention_block(const ParamMapT<T>& p, const VarT<T>& x, const std::string& base,
                        const RefineNetConfig& cfg, std::int64_t win, bool shifted) {
  const std::int64_t H = x->value.size(2), W = x->value.size(3);
  const std::int64_t Hp = (H + win - 1) / win * win, Wp = (W + win - 1) / win * win;
  const std::int64_t shift = shifted ? win / 2 : 0;

  VarT<T> t = layer_norm_channel(x);
  if (Hp != H || Wp != W) t = reflect_pad2d(t, 0, Hp - H, 0, Wp - W);
  if (shift > 0) t = roll2d(t, -shift, -shift);
  t = window_mhsa(t, param_at(p, base + ".qkv.weight"), param_at(p, base + ".qkv.bias"),
                  param_at(p, base + ".proj.weight"), param_at(p, base + ".proj.bias"),
                  param_at(p, base + ".bias_table"), win, cfg.num_heads);
  if (shift > 0) t = roll2d(t, shift, shift);
  if (Hp != H || Wp != W) t = crop2d(t, 0, 0, H, W);
  VarT<T> y = add(x, t);

  Conv2dSpec dws{1, 1, 1, std::int64_t(cfg.embed_dim)};
  y = add(y, conv2d(y, param_at(p, base + ".dw.weight"), param_at(p, base + ".dw.bias"), dws));

  Conv2dSpec k1{1, 0, 1, 1};
  VarT<T> f = layer_norm_channel(y);
  f = conv2d(f, param_at(p, base + ".ffn.fc1.weight"), param_at(p, base + ".ffn.fc1.bias"), k1);
  f = gelu(f);
  f = conv2d(f, param_at(p, base + ".ffn.fc2.weight"), param_at(p, base + ".ffn.fc2.bias"), k1);
  return add(y, f);
}

}  // namespace detail

template <typename T>
VarT<T> ahswa_forward(const ParamMapT<T>& p, const VarT<T>& coarse, const RefineNetConfig& cfg) {
  cfg.validate();
  FSE_CHECK(coarse->value.rank() == 4 && coarse->value.size(1) == 3, ShapeError,
            "ahswa: input must be [N,3,H,W]");
  Conv2dSpec k3{1, 1, 1, 1}, k1{1, 0, 1, 1};
  VarT<T> x = conv2d(coarse, param_at(p, "refine.embed.weight"), param_at(p, "refine.embed.bias"), k3);
  for (std::int64_t s = 1; s <= cfg.num_scales; ++s) {
    const std::int64_t win = cfg.scale_window(s);
    for (std::int64_t b = 1; b <= cfg.depth; ++b) {
      std::string base = "refine.s" + std::to_string(s) + ".b" + std::to_string(b);
      x = detail::attention_block(p, x, base, cfg, win, b % 2 == 0);
    }
  }
  return conv2d(x, param_at(p, "refine.head.weight"), param_at(p, "refine.head.bias"), k1);
}

// IRC: features = (gamma_i(M') (x) W_gamma_i + beta_i(M')) (x) features,
// three times, on a 3x3-conv embedding of C; 1x1 projection back to 3 ch.
template <typename T>
VarT<T> irc_forward(const ParamMapT<T>& p, const VarT<T>& coarse, const VarT<T>& refined_mask,
                    const RefineNetConfig& cfg) {
  cfg.validate();
  FSE_CHECK(coarse->value.rank() == 4 && coarse->value.size(1) == 3, ShapeError, "irc: input must be [N,3,H,W]");
  FSE_CHECK(refined_mask->value.rank() == 4 && refined_mask->value.size(1) == 1, ShapeError,
            "irc: mask must be [N,1,H,W]");
  FSE_CHECK(coarse->value.size(2) == refined_mask->value.size(2) &&
                coarse->value.size(3) == refined_mask->value.size(3),
            ShapeError, "irc: image/mask spatial mismatch");

  Conv2dSpec k3{1, 1, 1, 1}, k1{1, 0, 1, 1};
  auto cv = [&](const VarT<T>& v, const std::string& name, const Conv2dSpec& s) {
    return conv2d(v, param_at(p, name + ".weight"), param_at(p, name + ".bias"), s);
  };
  VarT<T> f = leaky_relu(cv(coarse, "refine.irc.embed", k3));
  for (std::int64_t b = 1; b <= cfg.irc_blocks; ++b) {
    std::string base = "refine.irc.b" + std::to_string(b);
    VarT<T> gamma = cv(leaky_relu(cv(refined_mask, base + ".gamma.c1", k1)), base + ".gamma.c2", k1);
    VarT<T> beta = cv(leaky_relu(cv(refined_mask, base + ".beta.c1", k1)), base + ".beta.c2", k1);
    VarT<T> scale = add(scale_channels(gamma, param_at(p, base + ".wgamma")), beta);
    f = mul(scale, f);
  }
  return cv(f, "refine.irc.proj", k1);
}

template <typename T>
VarT<T> refine_forward(const ParamMapT<T>& p, const VarT<T>& coarse, const VarT<T>& refined_mask,
                       const RefineNetConfig& cfg) {
  VarT<T> attn = ahswa_forward(p, coarse, cfg);
  VarT<T> irc = irc_forward(p, coarse, refined_mask, cfg);
  return add(coarse, mul(attn, irc));
}

template <typename T>
TensorT<T> refine_forward(const NamedTensorMapT<T>& params, const TensorT<T>& coarse,
                          const TensorT<T>& refined_mask, const RefineNetConfig& cfg) {
  NoGradGuard ng;
  auto p = make_param_vars(params, false);
  return refine_forward(p, make_leaf(coarse), make_leaf(refined_mask), cfg)->value;
}

}  // namespace fse
