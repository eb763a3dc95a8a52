#pragma once

#include "fse/coarse_net.hpp"
#include "fse/image.hpp"
#include "fse/mask_net.hpp"
#include "fse/refine_net.hpp"

namespace fse {

// Stage switchboard for ablation studies. Disabled stages degrade to the
// identities M' := M, C := I, R := C.
struct Ablation {
  bool mask = true;
  bool coarse = true;
  bool refine = true;

  void validate() const {
    FSE_CHECK(mask || coarse || refine, ConfigError, "ablation: at least one stage must be enabled");
  }
  bool operator==(const Ablation&) const = default;
};

struct FseConfig {
  MaskNetConfig mask;
  CoarseNetConfig coarse;
  RefineNetConfig refine;
  double tau = 0.05;  // initial-mask luminance threshold

  void validate() const {
    mask.validate();
    coarse.validate();
    refine.validate();
    FSE_CHECK(tau >= 0.0 && tau <= 1.0, ConfigError, "FseConfig: tau must be in [0,1]");
  }

  // full-size profile (trains at 256x256)
  static FseConfig paper_default() { return FseConfig{}; }

  // desk-scale test profile: 64x64 inputs, window 4, channels halved
  static FseConfig desk_profile() {
    FseConfig c;
    c.mask.base_channels = 16;
    c.coarse.base_channels = 24;
    c.refine.embed_dim = 24;
    c.refine.window_size = 4;
    c.refine.irc_hidden = 16;
    return c;
  }
};

template <typename T>
NamedTensorMapT<T> init_fse_params(const FseConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NamedTensorMapT<T> p = maskguide_init<T>(cfg.mask, derive_seed(seed, 1));
  NamedTensorMapT<T> c = coarse_init<T>(cfg.coarse, derive_seed(seed, 2));
  NamedTensorMapT<T> r = refine_init<T>(cfg.refine, derive_seed(seed, 3));
  p.insert(c.begin(), c.end());
  p.insert(r.begin(), r.end());
  return p;
}

template <typename T>
struct FseOutputsT {
  VarT<T> restored;      // R
  VarT<T> refined_mask;  // M'
  VarT<T> coarse;        // C
};

// Full cascade R = refine(coarse(mask(I (+) M))) with per-stage ablation.
template <typename T>
FseOutputsT<T> fse_forward(const ParamMapT<T>& params, const VarT<T>& img, const VarT<T>& init_mask,
                           const Ablation& ablation, const FseConfig& cfg) {
  ablation.validate();
  cfg.validate();
  FseOutputsT<T> out;
  out.refined_mask = ablation.mask ? maskguide_forward(params, img, init_mask, cfg.mask) : init_mask;
  out.coarse = ablation.coarse ? coarse_forward(params, img, out.refined_mask, cfg.coarse) : img;
  out.restored = ablation.refine ? refine_forward(params, out.coarse, out.refined_mask, cfg.refine)
                                 : out.coarse;
  return out;
}

template <typename T>
struct FseValueOutputsT {
  TensorT<T> restored, refined_mask, coarse;
};

template <typename T>
FseValueOutputsT<T> fse_forward(const NamedTensorMapT<T>& params, const TensorT<T>& img,
                                const TensorT<T>& init_mask, const Ablation& ablation, const FseConfig& cfg) {
  NoGradGuard ng;
  auto p = make_param_vars(params, false);
  auto o = fse_forward(p, make_leaf(img), make_leaf(init_mask), ablation, cfg);
  return {o.restored->value, o.refined_mask->value, o.coarse->value};
}

}  // namespace fse
