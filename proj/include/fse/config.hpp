#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fse/dataset.hpp"
#include "fse/loss.hpp"
#include "fse/model.hpp"
#include "fse/optim.hpp"

namespace fse {

// Optimization protocol. total_steps has no sensible default and must be
// set explicitly.
struct TrainConfig {
  std::int64_t batch_size = 8;
  double lr_init = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  std::int64_t total_steps = -1;
  std::int64_t warm_steps = 0;  // linear warmup before the cosine phase
  std::int64_t crop_size = 256;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  Ablation ablation;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  bool enable_hflip = true;
  std::vector<int> rotation_choices = {0, 90, 180, 270};
  std::string perceptual_backend = "fallback";

  void validate() const {
    FSE_CHECK(batch_size >= 1, ConfigError, "TrainConfig: batch_size must be >= 1");
    FSE_CHECK(lr_init > 0, ConfigError, "TrainConfig: lr_init must be > 0");
    FSE_CHECK(total_steps >= 0, ConfigError, "TrainConfig: total_steps is required (>= 0)");
    FSE_CHECK(warm_steps >= 0 && warm_steps <= total_steps, ConfigError, "TrainConfig: bad warm_steps");
    FSE_CHECK(crop_size >= 1, ConfigError, "TrainConfig: crop_size must be >= 1");
    FSE_CHECK(checkpoint_every >= 0, ConfigError, "TrainConfig: checkpoint_every must be >= 0");
    loss_weights.validate();
    ablation.validate();
  }

  double lr_at(std::int64_t step) const {
    if (warm_steps > 0 && step < warm_steps) return lr_init * double(step + 1) / double(warm_steps);
    if (total_steps == warm_steps) return 0.0;
    return cosine_lr(step - warm_steps, total_steps - warm_steps, lr_init);
  }
};

// ---------------------------------------------------------------------------
// JSON round-tripping (strict: unknown keys are rejected by name)

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::set<std::string>& known,
                             const std::string& scope) {
  FSE_CHECK(j.is_object(), ConfigError, "config section '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    FSE_CHECK(known.count(key), ConfigError,
              "unknown config key '" + (scope.empty() ? key : scope + "." + key) + "'");
  }
}

template <typename V>
void maybe_get(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const Ablation& a) {
  std::vector<std::string> on;
  if (a.mask) on.push_back("mask");
  if (a.coarse) on.push_back("coarse");
  if (a.refine) on.push_back("refine");
  j = on;
}

inline void from_json(const nlohmann::json& j, Ablation& a) {
  a = Ablation{false, false, false};
  for (const auto& s : j.get<std::vector<std::string>>()) {
    if (s == "mask") a.mask = true;
    else if (s == "coarse") a.coarse = true;
    else if (s == "refine") a.refine = true;
    else throw ConfigError("unknown ablation stage '" + s + "' (want mask|coarse|refine)");
  }
  a.validate();
}

inline void to_json(nlohmann::json& j, const FseConfig& c) {
  j = nlohmann::json{{"tau", c.tau},
                     {"mask_base_channels", c.mask.base_channels},
                     {"mask_extract_blocks", c.mask.num_extract_blocks},
                     {"mask_residual_blocks", c.mask.num_residual_blocks},
                     {"coarse_base_channels", c.coarse.base_channels},
                     {"coarse_agg_blocks", c.coarse.num_agg_blocks},
                     {"dilation_rates", c.coarse.dilation_rates},
                     {"num_experts", c.coarse.num_experts},
                     {"residual_scale", c.coarse.residual_scale},
                     {"embed_dim", c.refine.embed_dim},
                     {"window_size", c.refine.window_size},
                     {"num_heads", c.refine.num_heads},
                     {"depth", c.refine.depth},
                     {"num_scales", c.refine.num_scales},
                     {"irc_hidden", c.refine.irc_hidden},
                     {"ffn_ratio", c.refine.ffn_ratio}};
}

inline void from_json(const nlohmann::json& j, FseConfig& c) {
  detail::check_known_keys(j, {"tau", "mask_base_channels", "mask_extract_blocks", "mask_residual_blocks",
                               "coarse_base_channels", "coarse_agg_blocks", "dilation_rates", "num_experts",
                               "residual_scale", "embed_dim", "window_size", "num_heads", "depth",
                               "num_scales", "irc_hidden", "ffn_ratio"},
                          "model");
  detail::maybe_get(j, "tau", c.tau);
  detail::maybe_get(j, "mask_base_channels", c.mask.base_channels);
  detail::maybe_get(j, "mask_extract_blocks", c.mask.num_extract_blocks);
  detail::maybe_get(j, "mask_residual_blocks", c.mask.num_residual_blocks);
  detail::maybe_get(j, "coarse_base_channels", c.coarse.base_channels);
  detail::maybe_get(j, "coarse_agg_blocks", c.coarse.num_agg_blocks);
  detail::maybe_get(j, "dilation_rates", c.coarse.dilation_rates);
  detail::maybe_get(j, "num_experts", c.coarse.num_experts);
  detail::maybe_get(j, "residual_scale", c.coarse.residual_scale);
  detail::maybe_get(j, "embed_dim", c.refine.embed_dim);
  detail::maybe_get(j, "window_size", c.refine.window_size);
  detail::maybe_get(j, "num_heads", c.refine.num_heads);
  detail::maybe_get(j, "depth", c.refine.depth);
  detail::maybe_get(j, "num_scales", c.refine.num_scales);
  detail::maybe_get(j, "irc_hidden", c.refine.irc_hidden);
  detail::maybe_get(j, "ffn_ratio", c.refine.ffn_ratio);
  if (j.contains("coarse_agg_blocks") && !j.contains("dilation_rates"))
    throw ConfigError("model.coarse_agg_blocks override requires matching dilation_rates");
  c.validate();
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"lr_init", c.lr_init},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"weight_decay", c.weight_decay},
                     {"total_steps", c.total_steps},
                     {"warm_steps", c.warm_steps},
                     {"crop_size", c.crop_size},
                     {"seed", c.seed},
                     {"lambda_ssim", c.loss_weights.lambda_ssim},
                     {"lambda_perc", c.loss_weights.lambda_perc},
                     {"aux_mask_weight", c.loss_weights.aux_mask_weight},
                     {"ablation", c.ablation},
                     {"checkpoint_every", c.checkpoint_every},
                     {"enable_hflip", c.enable_hflip},
                     {"rotations", c.rotation_choices},
                     {"perceptual_backend", c.perceptual_backend}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::check_known_keys(j, {"batch_size", "lr_init", "beta1", "beta2", "weight_decay", "total_steps",
                               "warm_steps", "crop_size", "seed", "lambda_ssim", "lambda_perc",
                               "aux_mask_weight", "ablation", "checkpoint_every", "enable_hflip",
                               "rotations", "perceptual_backend"},
                          "train");
  detail::maybe_get(j, "batch_size", c.batch_size);
  detail::maybe_get(j, "lr_init", c.lr_init);
  detail::maybe_get(j, "beta1", c.beta1);
  detail::maybe_get(j, "beta2", c.beta2);
  detail::maybe_get(j, "weight_decay", c.weight_decay);
  detail::maybe_get(j, "total_steps", c.total_steps);
  detail::maybe_get(j, "warm_steps", c.warm_steps);
  detail::maybe_get(j, "crop_size", c.crop_size);
  detail::maybe_get(j, "seed", c.seed);
  detail::maybe_get(j, "lambda_ssim", c.loss_weights.lambda_ssim);
  detail::maybe_get(j, "lambda_perc", c.loss_weights.lambda_perc);
  detail::maybe_get(j, "aux_mask_weight", c.loss_weights.aux_mask_weight);
  if (j.contains("ablation")) c.ablation = j.at("ablation").get<Ablation>();
  detail::maybe_get(j, "checkpoint_every", c.checkpoint_every);
  detail::maybe_get(j, "enable_hflip", c.enable_hflip);
  detail::maybe_get(j, "rotations", c.rotation_choices);
  detail::maybe_get(j, "perceptual_backend", c.perceptual_backend);
  c.validate();
}

// ---------------------------------------------------------------------------
// run config file: documented key set covering model, training, data and
// output locations

struct RunConfig {
  std::string profile = "paper";  // paper | desk
  FseConfig model;
  TrainConfig train;
  std::string data_root;
  std::optional<std::string> manifest;
  std::optional<std::string> val_root;
  std::string out_dir;

  static std::string default_out_root() {
    const char* env = std::getenv("FSE_OUTPUT_ROOT");
    return env && *env ? std::string(env) : std::string("fse-runs");
  }
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::check_known_keys(j, {"profile", "seed", "model", "train", "data", "out_dir"}, "");
  RunConfig rc;
  detail::maybe_get(j, "profile", rc.profile);
  if (rc.profile == "paper") rc.model = FseConfig::paper_default();
  else if (rc.profile == "desk") rc.model = FseConfig::desk_profile();
  else throw ConfigError("unknown profile '" + rc.profile + "' (want paper|desk)");
  if (rc.profile == "desk") rc.train.crop_size = 64;

  if (j.contains("model")) {
    // overrides apply on top of the profile
    nlohmann::json merged;
    to_json(merged, rc.model);
    for (const auto& [k, v] : j.at("model").items()) merged[k] = v;
    detail::check_known_keys(j.at("model"), {"tau", "mask_base_channels", "mask_extract_blocks",
                                             "mask_residual_blocks", "coarse_base_channels",
                                             "coarse_agg_blocks", "dilation_rates", "num_experts",
                                             "residual_scale", "embed_dim", "window_size", "num_heads",
                                             "depth", "num_scales", "irc_hidden", "ffn_ratio"},
                             "model");
    rc.model = merged.get<FseConfig>();
  }
  if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
  if (j.contains("seed")) rc.train.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_known_keys(d, {"root", "manifest", "val_root"}, "data");
    if (d.contains("root")) rc.data_root = d.at("root").get<std::string>();
    if (d.contains("manifest")) rc.manifest = d.at("manifest").get<std::string>();
    if (d.contains("val_root")) rc.val_root = d.at("val_root").get<std::string>();
  }
  rc.out_dir = j.value("out_dir", RunConfig::default_out_root() + "/run");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  FSE_CHECK(is.good(), IoError, "cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config error in " + path + ": " + e.what());
  }
}

}  // namespace fse
