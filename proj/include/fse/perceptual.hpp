#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fse/io_container.hpp"
#include "fse/metrics.hpp"
#include "fse/nn_ops.hpp"
#include "fse/params.hpp"

namespace fse {

// Pluggable feature extractor for the perceptual term. A backend maps an
// image to a list of feature maps; the distance is the sum over layers of
// the mean squared difference of channel-unit-normalized features.
template <typename T>
class PerceptualBackendT {
 public:
  virtual ~PerceptualBackendT() = default;
  virtual std::vector<VarT<T>> features(const VarT<T>& img) const = 0;
  // true when the features are not a pretrained perceptual model and the
  // reported numbers must be labeled as proxy values
  virtual bool is_proxy() const = 0;
  virtual std::string name() const = 0;
};

// Seed of the built-in random-feature fallback. Fixed so every build of the
// library produces the same proxy numbers.
inline constexpr std::uint64_t kFallbackPerceptualSeed = 0x46534550;

// Built-in fallback: a frozen 3-layer random convolutional stack
// (3->8->16->24 channels, stride 2, leaky rectifier). Deterministic, but a
// proxy: reports using it carry the lpips_proxy flag.
template <typename T>
class FallbackPerceptualBackendT final : public PerceptualBackendT<T> {
 public:
  FallbackPerceptualBackendT() {
    Rng rng(kFallbackPerceptualSeed);
    const std::int64_t chans[4] = {3, 8, 16, 24};
    for (int l = 0; l < 3; ++l) {
      Shape ws{chans[l + 1], chans[l], 3, 3};
      weights_.push_back(make_leaf(uniform_fan_in<T>(rng, ws, conv_fan_in<T>(ws)), false));
      biases_.push_back(make_leaf(uniform_fan_in<T>(rng, Shape{chans[l + 1]}, chans[l] * 9), false));
    }
  }

  std::vector<VarT<T>> features(const VarT<T>& img) const override {
    FSE_CHECK(img->value.rank() == 4 && img->value.size(1) == 3, ShapeError,
              "perceptual fallback: input must be [N,3,H,W]");
    std::vector<VarT<T>> feats;
    VarT<T> x = img;
    Conv2dSpec s{2, 1, 1, 1};
    for (int l = 0; l < 3; ++l) {
      x = leaky_relu(conv2d(x, weights_[std::size_t(l)], biases_[std::size_t(l)], s));
      feats.push_back(x);
    }
    return feats;
  }

  bool is_proxy() const override { return true; }
  std::string name() const override { return "fallback"; }

 private:
  std::vector<VarT<T>> weights_, biases_;
};

// Backend loaded from a tensor container holding a frozen conv stack:
// tensors `perc.l<i>.weight|bias`, meta `{"kind":"perceptual",
// "strides":[...]}`. This is the hook for user-supplied pretrained features.
template <typename T>
class FilePerceptualBackendT final : public PerceptualBackendT<T> {
 public:
  explicit FilePerceptualBackendT(const std::string& path) : name_(path) {
    nlohmann::json meta;
    NamedTensorMap tensors = load_container(path, &meta);
    FSE_CHECK(meta.value("kind", "") == "perceptual", FormatError,
              path + ": not a perceptual backend container");
    strides_ = meta.value("strides", std::vector<std::int64_t>{});
    for (std::size_t l = 1;; ++l) {
      std::string base = "perc.l" + std::to_string(l);
      auto wit = tensors.find(base + ".weight");
      if (wit == tensors.end()) break;
      weights_.push_back(make_leaf(wit->second.template cast<T>(), false));
      biases_.push_back(make_leaf(named_at(tensors, base + ".bias").template cast<T>(), false));
    }
    FSE_CHECK(!weights_.empty(), FormatError, path + ": no perc.l<i>.weight tensors");
    if (strides_.empty()) strides_.assign(weights_.size(), 2);
    FSE_CHECK(strides_.size() == weights_.size(), FormatError, path + ": strides/layer count mismatch");
  }

  std::vector<VarT<T>> features(const VarT<T>& img) const override {
    std::vector<VarT<T>> feats;
    VarT<T> x = img;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const std::int64_t k = weights_[l]->value.size(2);
      Conv2dSpec s{strides_[l], (k - 1) / 2, 1, 1};
      x = leaky_relu(conv2d(x, weights_[l], biases_[l], s));
      feats.push_back(x);
    }
    return feats;
  }

  bool is_proxy() const override { return true; }  // file stacks are proxies unless stated otherwise
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::vector<VarT<T>> weights_, biases_;
  std::vector<std::int64_t> strides_;
};

// `--perceptual-backend <path|fallback>`
template <typename T>
std::shared_ptr<PerceptualBackendT<T>> make_perceptual_backend(const std::string& spec) {
  if (spec.empty() || spec == "fallback") return std::make_shared<FallbackPerceptualBackendT<T>>();
  if (spec == "none") return nullptr;
  return std::make_shared<FilePerceptualBackendT<T>>(spec);
}

// Sum over layers of mean squared difference of unit-normalized features.
template <typename T>
VarT<T> perceptual_distance_op(const VarT<T>& pred, const VarT<T>& target,
                               const PerceptualBackendT<T>& backend) {
  check_same_shape(pred->value, target->value, "perceptual_distance");
  auto fp = backend.features(pred);
  auto ft = backend.features(target);
  FSE_CHECK(fp.size() == ft.size() && !fp.empty(), StateError, "perceptual backend returned no features");
  VarT<T> total;
  for (std::size_t l = 0; l < fp.size(); ++l) {
    VarT<T> d = sub(channel_l2_normalize(fp[l]), channel_l2_normalize(ft[l]));
    VarT<T> term = mean_all(mul(d, d));
    total = total ? add(total, term) : term;
  }
  return total;
}

template <typename T>
double perceptual_distance(const TensorT<T>& pred, const TensorT<T>& target,
                           const PerceptualBackendT<T>& backend) {
  NoGradGuard ng;
  return double(perceptual_distance_op(make_leaf(pred), make_leaf(target), backend)->value[0]);
}

}  // namespace fse
