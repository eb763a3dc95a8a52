#pragma once

#include "fse/metrics.hpp"
#include "fse/perceptual.hpp"

namespace fse {

struct LossWeights {
  double lambda_ssim = 0.2;      // lambda_1
  double lambda_perc = 0.2;      // lambda_2
  double aux_mask_weight = 0.0;  // optional M' supervision, off by default

  void validate() const {
    FSE_CHECK(lambda_ssim >= 0 && lambda_perc >= 0 && aux_mask_weight >= 0, ConfigError,
              "LossWeights: weights must be >= 0");
  }
};

template <typename T>
struct CompositeLossT {
  VarT<T> total;      // mse + l1*(1 - ssim) + l2*perceptual
  VarT<T> mse;
  VarT<T> ssim_term;  // 1 - ssim
  VarT<T> perc_term;
};

// L = L_MSE + lambda1 * (1 - SSIM) + lambda2 * perceptual. Terms with zero
// weight are skipped entirely, so the total equals plain MSE bit for bit
// when both lambdas are zero.
template <typename T>
CompositeLossT<T> composite_loss_op(const VarT<T>& pred, const VarT<T>& target, const LossWeights& w,
                                    const PerceptualBackendT<T>* backend) {
  w.validate();
  check_same_shape(pred->value, target->value, "composite_loss");
  CompositeLossT<T> out;
  out.mse = mse_op(pred, target);
  out.total = out.mse;
  if (w.lambda_ssim > 0) {
    out.ssim_term = add_scalar(mul_scalar(ssim_op(pred, target), T(-1)), T(1));
    out.total = add(out.total, mul_scalar(out.ssim_term, T(w.lambda_ssim)));
  } else {
    out.ssim_term = constant(TensorT<T>::scalar(T(0)));
  }
  if (w.lambda_perc > 0) {
    FSE_CHECK(backend != nullptr, ConfigError,
              "composite_loss: lambda_perc > 0 needs a perceptual backend "
              "(pass one or use the built-in 'fallback')");
    out.perc_term = perceptual_distance_op(pred, target, *backend);
    out.total = add(out.total, mul_scalar(out.perc_term, T(w.lambda_perc)));
  } else {
    out.perc_term = constant(TensorT<T>::scalar(T(0)));
  }
  return out;
}

// -mean(t*log(p) + (1-t)*log(1-p)) with p in (0,1)
template <typename T>
VarT<T> binary_cross_entropy_op(const VarT<T>& pred, const VarT<T>& target, T floor = T(1e-7)) {
  check_same_shape(pred->value, target->value, "binary_cross_entropy");
  auto one_minus = [](const VarT<T>& v) { return add_scalar(mul_scalar(v, T(-1)), T(1)); };
  VarT<T> pos = mul(target, log_clamped(pred, floor));
  VarT<T> neg = mul(one_minus(target), log_clamped(one_minus(pred), floor));
  return mul_scalar(mean_all(add(pos, neg)), T(-1));
}

}  // namespace fse
