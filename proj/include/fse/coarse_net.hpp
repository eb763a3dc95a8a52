#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "fse/nn_ops.hpp"
#include "fse/params.hpp"

namespace fse {

// CoarseGenNet: stem -> four AggBlocks of dynamic dilated convolutions ->
// head, all at full resolution, plus a global residual from the input image.
struct CoarseNetConfig {
  std::int64_t in_channels = 4;  // RGB (+) M'
  std::int64_t base_channels = 48;
  std::int64_t num_agg_blocks = 4;
  std::vector<std::int64_t> dilation_rates = {1, 2, 4, 8};  // one per block
  std::int64_t num_experts = 4;
  double residual_scale = 1.0;

  void validate() const {
    FSE_CHECK(in_channels == 4, ConfigError, "CoarseNetConfig: input is image (+) M', 4 channels");
    FSE_CHECK(base_channels >= 8, ConfigError, "CoarseNetConfig: base_channels must be >= 8");
    FSE_CHECK(num_agg_blocks >= 1, ConfigError, "CoarseNetConfig: need at least one AggBlock");
    FSE_CHECK(std::int64_t(dilation_rates.size()) == num_agg_blocks, ConfigError,
              "CoarseNetConfig: one dilation rate per AggBlock");
    for (auto d : dilation_rates)
      FSE_CHECK(d >= 1, ConfigError, "CoarseNetConfig: dilation rates must be positive");
    FSE_CHECK(num_experts >= 1, ConfigError, "CoarseNetConfig: need at least one expert");
  }

  // each block runs branches with rates {1, d}; rate 1 collapses the set
  std::vector<std::int64_t> branch_rates(std::int64_t block) const {
    std::int64_t d = dilation_rates[std::size_t(block)];
    if (d == 1) return {1};
    return {1, d};
  }
};

template <typename T>
NamedTensorMapT<T> coarse_init(const CoarseNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NamedTensorMapT<T> p;
  const std::int64_t B = cfg.base_channels, K = cfg.num_experts;

  Shape stem_w{B, cfg.in_channels, 3, 3};
  p["coarse.stem.weight"] = uniform_fan_in<T>(rng, stem_w, conv_fan_in<T>(stem_w));
  p["coarse.stem.bias"] = TensorT<T>({B});

  for (std::int64_t i = 0; i < cfg.num_agg_blocks; ++i) {
    std::string blk = "coarse.agg" + std::to_string(i + 1);
    auto rates = cfg.branch_rates(i);
    for (auto r : rates) {
      std::string br = blk + ".branch" + std::to_string(r);
      for (std::int64_t k = 0; k < K; ++k) {
        Shape ws{B, B, 3, 3};
        // scaled down by K so the mixed kernel matches a single conv's scale
        TensorT<T> w = uniform_fan_in<T>(rng, ws, conv_fan_in<T>(ws) * K);
        p[br + ".expert" + std::to_string(k + 1) + ".weight"] = std::move(w);
      }
      p[br + ".bias"] = TensorT<T>({B});
    }
    p[blk + ".router.weight"] = uniform_fan_in<T>(rng, Shape{K, B}, B);
    p[blk + ".router.bias"] = TensorT<T>({K});
    Shape fuse_w{B, B * std::int64_t(rates.size()), 1, 1};
    p[blk + ".fuse.weight"] = uniform_fan_in<T>(rng, fuse_w, conv_fan_in<T>(fuse_w));
    p[blk + ".fuse.bias"] = TensorT<T>({B});
  }

  // zero head: the net starts as the identity C == I
  p["coarse.head.weight"] = TensorT<T>({3, B, 3, 3});
  p["coarse.head.bias"] = TensorT<T>({3});
  return p;
}

// Stacks the K expert kernels of one branch into [K, Cout, Cin, kh, kw],
// keeping gradient flow to the individual named tensors.
template <typename T>
VarT<T> stack_experts(const std::vector<VarT<T>>& experts) {
  FSE_CHECK(!experts.empty(), ConfigError, "stack_experts: empty expert list");
  const Shape es = experts[0]->value.shape();
  const std::int64_t k = std::int64_t(experts.size()), sz = experts[0]->value.numel();
  Shape out_shape{k};
  out_shape.insert(out_shape.end(), es.begin(), es.end());
  TensorT<T> out(out_shape);
  for (std::int64_t i = 0; i < k; ++i) {
    check_same_shape(experts[std::size_t(i)]->value, experts[0]->value, "stack_experts");
    std::copy_n(experts[std::size_t(i)]->value.data(), sz, out.data() + i * sz);
  }
  std::vector<VarT<T>> parents = experts;
  return make_node<T>(std::move(out), std::move(parents), [experts, sz](VariableT<T>& n) {
    for (std::size_t i = 0; i < experts.size(); ++i) {
      if (!experts[i]->requires_grad) continue;
      auto& g = experts[i]->ensure_grad();
      const T* src = n.grad.data() + std::int64_t(i) * sz;
      for (std::int64_t j = 0; j < sz; ++j) g[j] += src[j];
    }
  });
}

template <typename T>
VarT<T> agg_block_forward(const ParamMapT<T>& p, const VarT<T>& features, const CoarseNetConfig& cfg,
                          std::int64_t block) {
  const std::string blk = "coarse.agg" + std::to_string(block + 1);
  VarT<T> pooled = global_avg_pool(features);
  VarT<T> logits = linear(pooled, param_at(p, blk + ".router.weight"), param_at(p, blk + ".router.bias"));
  VarT<T> route = softmax_lastdim(logits);

  std::vector<VarT<T>> branch_outs;
  for (auto r : cfg.branch_rates(block)) {
    std::string br = blk + ".branch" + std::to_string(r);
    std::vector<VarT<T>> experts;
    for (std::int64_t k = 0; k < cfg.num_experts; ++k)
      experts.push_back(param_at(p, br + ".expert" + std::to_string(k + 1) + ".weight"));
    Conv2dSpec s{1, r, r, 1};  // padding == dilation keeps the size
    branch_outs.push_back(leaky_relu(dynamic_conv2d(features, stack_experts(experts), route,
                                                    param_at(p, br + ".bias"), s)));
  }
  VarT<T> cat = branch_outs[0];
  for (std::size_t i = 1; i < branch_outs.size(); ++i) cat = concat_channels(cat, branch_outs[i]);
  Conv2dSpec k1{1, 0, 1, 1};
  VarT<T> fused = conv2d(cat, param_at(p, blk + ".fuse.weight"), param_at(p, blk + ".fuse.bias"), k1);
  if (cfg.residual_scale != 1.0) fused = mul_scalar(fused, T(cfg.residual_scale));
  return add(features, fused);
}

template <typename T>
VarT<T> coarse_forward(const ParamMapT<T>& p, const VarT<T>& img, const VarT<T>& refined_mask,
                       const CoarseNetConfig& cfg) {
  cfg.validate();
  FSE_CHECK(img->value.rank() == 4 && img->value.size(1) == 3, ShapeError, "coarse: image must be [N,3,H,W]");
  FSE_CHECK(refined_mask->value.rank() == 4 && refined_mask->value.size(1) == 1, ShapeError,
            "coarse: mask must be [N,1,H,W]");
  FSE_CHECK(img->value.size(2) == refined_mask->value.size(2) && img->value.size(3) == refined_mask->value.size(3),
            ShapeError, "coarse: image/mask spatial mismatch");

  Conv2dSpec k3{1, 1, 1, 1};
  VarT<T> x = concat_channels(img, refined_mask);
  x = leaky_relu(conv2d(x, param_at(p, "coarse.stem.weight"), param_at(p, "coarse.stem.bias"), k3));
  for (std::int64_t i = 0; i < cfg.num_agg_blocks; ++i) x = agg_block_forward(p, x, cfg, i);
  VarT<T> head = conv2d(x, param_at(p, "coarse.head.weight"), param_at(p, "coarse.head.bias"), k3);
  return add(img, head);  // predicts a correction on top of the input
}

template <typename T>
TensorT<T> coarse_forward(const NamedTensorMapT<T>& params, const TensorT<T>& img,
                          const TensorT<T>& refined_mask, const CoarseNetConfig& cfg) {
  NoGradGuard ng;
  auto p = make_param_vars(params, false);
  return coarse_forward(p, make_leaf(img), make_leaf(refined_mask), cfg)->value;
}

}  // namespace fse
