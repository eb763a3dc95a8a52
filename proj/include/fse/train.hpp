#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fse/checkpoint.hpp"
#include "fse/config.hpp"
#include "fse/dataset.hpp"
#include "fse/loss.hpp"
#include "fse/metrics.hpp"
#include "fse/model.hpp"
#include "fse/optim.hpp"
#include "fse/perceptual.hpp"

namespace fse {

template <typename T>
TensorT<T> stack_batch(const std::vector<TensorT<T>>& items) {
  FSE_CHECK(!items.empty(), ShapeError, "stack_batch: empty batch");
  for (const auto& t : items) {
    FSE_CHECK(t.rank() == 4 && t.size(0) == 1, ShapeError, "stack_batch: items must be [1,C,H,W]");
    check_same_shape(t, items[0], "stack_batch");
  }
  Shape s = items[0].shape();
  s[0] = std::int64_t(items.size());
  TensorT<T> out(s);
  const std::int64_t chunk = items[0].numel();
  for (std::size_t i = 0; i < items.size(); ++i)
    std::copy_n(items[i].data(), chunk, out.data() + std::int64_t(i) * chunk);
  return out;
}

// Sample order is a pure function of (seed, step): the shuffled epoch
// permutations are derived, not drawn from the live RNG, so resuming at any
// step replays the identical schedule.
class BatchSchedule {
 public:
  BatchSchedule(std::uint64_t seed, std::int64_t dataset_size, std::int64_t batch_size)
      : seed_(seed), n_(dataset_size), batch_(batch_size) {
    FSE_CHECK(n_ >= 1 && batch_ >= 1, ConfigError, "BatchSchedule: empty dataset or batch");
  }

  std::vector<std::int64_t> indices(std::int64_t step) {
    std::vector<std::int64_t> out;
    out.reserve(std::size_t(batch_));
    for (std::int64_t b = 0; b < batch_; ++b) {
      std::int64_t g = step * batch_ + b;
      std::int64_t epoch = g / n_, off = g % n_;
      if (epoch != cached_epoch_) {
        perm_.resize(std::size_t(n_));
        for (std::int64_t i = 0; i < n_; ++i) perm_[std::size_t(i)] = i;
        Rng rng(derive_seed(seed_, 0x7065726d, std::uint64_t(epoch)));
        for (std::int64_t i = n_ - 1; i > 0; --i)
          std::swap(perm_[std::size_t(i)], perm_[rng.uniform_index(std::uint64_t(i + 1))]);
        cached_epoch_ = epoch;
      }
      out.push_back(perm_[std::size_t(off)]);
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::int64_t n_, batch_;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::int64_t> perm_;
};

struct TrainRecord {
  std::int64_t step = 0;
  double lr = 0, total = 0, mse = 0, ssim_term = 0, perc_term = 0;
};

struct TrainResult {
  CheckpointBundle checkpoint;
  std::vector<TrainRecord> history;
};

struct TrainOptions {
  std::optional<std::string> out_dir;       // checkpoints + loss log
  const CheckpointBundle* resume = nullptr;
};

namespace detail {

inline void check_finite_term(std::int64_t step, const char* term, double v) {
  FSE_CHECK(std::isfinite(v), NumericError,
            "train aborted at step " + std::to_string(step) + ": loss term '" + term + "' is non-finite");
}

inline CheckpointBundle snapshot(const ParamMapT<float>& params, const AdamWState& opt,
                                 const FseConfig& mc, const TrainConfig& tc, std::int64_t step,
                                 const Rng& rng) {
  CheckpointBundle b;
  b.params = param_values(params);
  b.opt_m = opt.m;
  b.opt_v = opt.v;
  b.opt_step = opt.step;
  b.model_config = mc;
  b.train_config = tc;
  b.step = step;
  b.rng_state = rng.serialize();
  return b;
}

}  // namespace detail

inline TrainResult train(const std::vector<SamplePair>& dataset, const FseConfig& model_cfg,
                         const TrainConfig& tc, const TrainOptions& opt = {}) {
  FSE_CHECK(!dataset.empty(), ConfigError, "train: dataset is empty");
  model_cfg.validate();
  tc.validate();
  for (const auto& p : dataset) p.validate();

  ParamMapT<float> params;
  AdamWState opt_state;
  Rng rng;
  std::int64_t start_step = 0;
  if (opt.resume) {
    params = make_param_vars(opt.resume->params, true);
    opt_state.m = opt.resume->opt_m;
    opt_state.v = opt.resume->opt_v;
    opt_state.step = opt.resume->opt_step;
    rng.deserialize(opt.resume->rng_state);
    start_step = opt.resume->step;
  } else {
    params = make_param_vars(init_fse_params<float>(model_cfg, tc.seed), true);
    rng = Rng(derive_seed(tc.seed, 0x747261696e));
  }

  std::shared_ptr<PerceptualBackendT<float>> backend;
  if (tc.loss_weights.lambda_perc > 0) backend = make_perceptual_backend<float>(tc.perceptual_backend);
  const AdamWConfig acfg{tc.beta1, tc.beta2, tc.weight_decay, 1e-8};
  BatchSchedule schedule(tc.seed, std::int64_t(dataset.size()), tc.batch_size);

  std::ofstream log;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    log.open(*opt.out_dir + "/loss_log.txt", std::ios::app);
    FSE_CHECK(log.good(), IoError, "cannot open loss log under " + *opt.out_dir);
    log.precision(9);
  }

  TrainResult result;
  for (std::int64_t step = start_step; step < tc.total_steps; ++step) {
    AugmentSpec aspec;
    aspec.crop_size = tc.crop_size;
    aspec.enable_hflip = tc.enable_hflip;
    aspec.rotation_choices = tc.rotation_choices;

    std::vector<Tensor> shadows, targets;
    for (std::int64_t i : schedule.indices(step)) {
      aspec.seed = rng.next_u64();
      SamplePair aug = augment(dataset[std::size_t(i)], aspec);
      shadows.push_back(std::move(aug.shadow));
      targets.push_back(std::move(aug.target));
    }
    Tensor shadow = stack_batch(shadows);
    Tensor target = stack_batch(targets);
    Tensor init_m = initial_mask(shadow, target, float(model_cfg.tau));

    auto img = make_leaf(shadow);
    auto mask_in = make_leaf(init_m);
    auto tgt = make_leaf(target);
    FseOutputsT<float> outs = fse_forward(params, img, mask_in, tc.ablation, model_cfg);
    CompositeLossT<float> loss = composite_loss_op(outs.restored, tgt, tc.loss_weights, backend.get());

    VarT<float> total = loss.total;
    if (tc.loss_weights.aux_mask_weight > 0 && tc.ablation.mask) {
      VarT<float> aux = binary_cross_entropy_op(outs.refined_mask, mask_in);
      detail::check_finite_term(step, "aux_mask", double(aux->value[0]));
      total = add(total, mul_scalar(aux, float(tc.loss_weights.aux_mask_weight)));
    }

    TrainRecord rec;
    rec.step = step;
    rec.lr = tc.lr_at(step);
    rec.mse = double(loss.mse->value[0]);
    rec.ssim_term = double(loss.ssim_term->value[0]);
    rec.perc_term = double(loss.perc_term->value[0]);
    rec.total = double(total->value[0]);
    detail::check_finite_term(step, "mse", rec.mse);
    detail::check_finite_term(step, "ssim", rec.ssim_term);
    detail::check_finite_term(step, "perceptual", rec.perc_term);
    detail::check_finite_term(step, "total", rec.total);

    zero_grads(params);
    backward(total);
    adamw_step_vars(params, opt_state, rec.lr, acfg);

    result.history.push_back(rec);
    if (log.is_open()) {
      log << rec.step << ", " << rec.lr << ", " << rec.total << ", " << rec.mse << ", " << rec.ssim_term
          << ", " << rec.perc_term << "\n";
      log.flush();
    }
    if (opt.out_dir && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < tc.total_steps) {
      save_checkpoint(*opt.out_dir + "/checkpoint_" + std::to_string(step + 1) + ".fseckpt",
                      detail::snapshot(params, opt_state, model_cfg, tc, step + 1, rng));
    }
  }

  result.checkpoint = detail::snapshot(params, opt_state, model_cfg, tc, tc.total_steps, rng);
  if (opt.out_dir) save_checkpoint(*opt.out_dir + "/checkpoint_final.fseckpt", result.checkpoint);
  return result;
}

// Runs the cascade at the requested square resolution with a zero initial
// mask (inference mode), clamps to [0,1] and averages per-image metrics in
// dataset order.
inline MetricReport evaluate(const CheckpointBundle& ckpt, const std::vector<SamplePair>& dataset,
                             std::int64_t resolution, const std::string& backend_spec = "fallback",
                             const std::optional<std::string>& dump_dir = {}) {
  FSE_CHECK(!dataset.empty(), ConfigError, "evaluate: dataset is empty");
  FSE_CHECK(resolution >= kSsimWindow, ConfigError, "evaluate: resolution below the SSIM window");
  ckpt.model_config.validate();

  NoGradGuard ng;
  auto params = make_param_vars(ckpt.params, false);
  auto backend = make_perceptual_backend<double>(backend_spec);
  FSE_CHECK(backend != nullptr, ConfigError, "evaluate: a perceptual backend is required");
  if (dump_dir) std::filesystem::create_directories(*dump_dir);

  MetricReport report;
  report.lpips_proxy = backend->is_proxy();
  for (const auto& pair : dataset) {
    Tensor shadow = resize_bilinear(pair.shadow, resolution, resolution);
    Tensor target = resize_bilinear(pair.target, resolution, resolution);
    Tensor zero_mask({1, 1, resolution, resolution});
    auto outs = fse_forward(params, make_leaf(shadow), make_leaf(zero_mask), ckpt.train_config.ablation,
                            ckpt.model_config);
    Tensor restored = clamp01(outs.restored->value);

    report.mse += mse_metric(restored, target);
    report.psnr_db += psnr_metric(restored, target);
    report.ssim += ssim_metric(restored, target);
    report.lpips += perceptual_distance(restored.cast<double>(), target.cast<double>(), *backend);
    report.n_samples += 1;
    if (dump_dir) save_image(restored, *dump_dir + "/" + pair.id + ".png");
  }
  report.mse /= double(report.n_samples);
  report.psnr_db /= double(report.n_samples);
  report.ssim /= double(report.n_samples);
  report.lpips /= double(report.n_samples);
  return report;
}

}  // namespace fse
