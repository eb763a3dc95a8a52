#pragma once

#include <string>

#include "fse/config.hpp"
#include "fse/io_container.hpp"

namespace fse {

// Everything needed for exact resume: parameters, optimizer moments, config
// snapshot, step counter and serialized RNG state.
struct CheckpointBundle {
  NamedTensorMap params;
  NamedTensorMap opt_m, opt_v;
  std::int64_t opt_step = 0;
  FseConfig model_config;
  TrainConfig train_config;
  std::int64_t step = 0;
  std::string rng_state;
};

inline void save_checkpoint(const std::string& path, const CheckpointBundle& b) {
  NamedTensorMap tensors = b.params;
  for (const auto& [name, t] : b.opt_m) tensors["opt.m." + name] = t;
  for (const auto& [name, t] : b.opt_v) tensors["opt.v." + name] = t;
  nlohmann::json meta;
  meta["kind"] = "checkpoint";
  meta["model"] = b.model_config;
  meta["train"] = b.train_config;
  meta["step"] = b.step;
  meta["opt_step"] = b.opt_step;
  meta["rng_state"] = b.rng_state;
  save_container(path, tensors, meta);
}

inline CheckpointBundle load_checkpoint(const std::string& path) {
  nlohmann::json meta;
  NamedTensorMap tensors = load_container(path, &meta);
  FSE_CHECK(meta.value("kind", "") == "checkpoint", FormatError, path + ": not a checkpoint container");
  CheckpointBundle b;
  try {
    b.model_config = meta.at("model").get<FseConfig>();
    b.train_config = meta.at("train").get<TrainConfig>();
    b.step = meta.at("step").get<std::int64_t>();
    b.opt_step = meta.at("opt_step").get<std::int64_t>();
    b.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint meta: " + e.what());
  }
  for (auto& [name, t] : tensors) {
    if (name.rfind("opt.m.", 0) == 0) b.opt_m[name.substr(6)] = std::move(t);
    else if (name.rfind("opt.v.", 0) == 0) b.opt_v[name.substr(6)] = std::move(t);
    else b.params[name] = std::move(t);
  }
  return b;
}

}  // namespace fse
