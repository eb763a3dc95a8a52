#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fse/image.hpp"
#include "fse/image_io.hpp"
#include "fse/rng.hpp"
#include "fse/tensor.hpp"

namespace fse {

// One aligned (shadow, shadow-free, optional mask) record.
template <typename T>
struct SamplePairT {
  TensorT<T> shadow;
  TensorT<T> target;
  std::optional<TensorT<T>> mask;
  std::string id;

  void validate() const {
    check_image_shape(shadow, "SamplePair.shadow");
    check_same_shape(shadow, target, ("SamplePair '" + id + "'").c_str());
    if (mask) {
      FSE_CHECK(mask->rank() == 4 && mask->size(1) == 1, ShapeError,
                "SamplePair '" + id + "': mask must be [1,1,H,W]");
      FSE_CHECK(mask->size(2) == shadow.size(2) && mask->size(3) == shadow.size(3), ShapeError,
                "SamplePair '" + id + "': mask spatial size differs from shadow");
    }
  }
};

using SamplePair = SamplePairT<float>;

struct AugmentSpec {
  std::int64_t crop_size = 256;
  bool enable_hflip = true;
  std::vector<int> rotation_choices = {0, 90, 180, 270};  // right angles only
  std::uint64_t seed = 0;
};

// Applies one random crop/flip/rotation, identically to shadow, target and
// mask. Deterministic in (pair, spec).
template <typename T>
SamplePairT<T> augment(const SamplePairT<T>& pair, const AugmentSpec& spec) {
  pair.validate();
  const std::int64_t H = pair.shadow.size(2), W = pair.shadow.size(3);
  FSE_CHECK(spec.crop_size >= 1 && spec.crop_size <= std::min(H, W), ConfigError,
            "augment: crop_size " + std::to_string(spec.crop_size) + " exceeds image " + std::to_string(H) +
                "x" + std::to_string(W));
  FSE_CHECK(!spec.rotation_choices.empty(), ConfigError, "augment: empty rotation set");
  for (int r : spec.rotation_choices)
    FSE_CHECK(r % 90 == 0, ConfigError, "augment: rotations must be right angles");

  Rng rng(spec.seed);
  const std::int64_t oy = std::int64_t(rng.uniform_index(std::uint64_t(H - spec.crop_size + 1)));
  const std::int64_t ox = std::int64_t(rng.uniform_index(std::uint64_t(W - spec.crop_size + 1)));
  const bool flip = spec.enable_hflip && rng.bernoulli(0.5);
  const int rot = spec.rotation_choices[rng.uniform_index(spec.rotation_choices.size())] / 90;

  auto apply = [&](const TensorT<T>& t) {
    TensorT<T> out = crop(t, oy, ox, spec.crop_size, spec.crop_size);
    if (flip) out = hflip(out);
    if (rot != 0) out = rot90(out, rot);
    return out;
  };
  SamplePairT<T> out;
  out.id = pair.id;
  out.shadow = apply(pair.shadow);
  out.target = apply(pair.target);
  if (pair.mask) out.mask = apply(*pair.mask);
  return out;
}

namespace detail {

inline std::map<std::string, std::string> scan_images(const std::filesystem::path& dir) {
  std::map<std::string, std::string> by_id;
  if (!std::filesystem::exists(dir)) return by_id;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    by_id[e.path().stem().string()] = e.path().string();
  }
  return by_id;
}

}  // namespace detail

// Loads `<root>/shadow/<id>` + `<root>/target/<id>` (+ optional mask/),
// sorted by id. A manifest file (one id per line) restricts the split.
template <typename T>
std::vector<SamplePairT<T>> load_paired_dataset(const std::string& root,
                                                const std::optional<std::string>& manifest = std::nullopt) {
  namespace fs = std::filesystem;
  const fs::path rootp(root);
  FSE_CHECK(fs::exists(rootp), IoError, "dataset root does not exist: " + root);
  auto shadows = detail::scan_images(rootp / "shadow");
  auto targets = detail::scan_images(rootp / "target");
  auto masks = detail::scan_images(rootp / "mask");

  std::vector<std::string> ids;
  if (manifest) {
    std::ifstream mf(*manifest);
    FSE_CHECK(mf.good(), IoError, "cannot open manifest: " + *manifest);
    std::string line;
    while (std::getline(mf, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) ids.push_back(line);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (const auto& id : ids) {
      FSE_CHECK(shadows.count(id), PairingError, "manifest id '" + id + "' has no shadow image");
      FSE_CHECK(targets.count(id), PairingError, "manifest id '" + id + "' has no target image");
    }
  } else {
    for (const auto& [id, path] : shadows) {
      FSE_CHECK(targets.count(id), PairingError, "shadow image without target: " + path);
      ids.push_back(id);
    }
    for (const auto& [id, path] : targets)
      FSE_CHECK(shadows.count(id), PairingError, "target image without shadow: " + path);
  }

  std::vector<SamplePairT<T>> pairs;
  pairs.reserve(ids.size());
  for (const auto& id : ids) {
    SamplePairT<T> p;
    p.id = id;
    p.shadow = load_image<T>(shadows.at(id));
    p.target = load_image<T>(targets.at(id));
    FSE_CHECK(p.shadow.same_shape(p.target), ShapeError,
              "pair '" + id + "': shadow " + shape_str(p.shadow.shape()) + " vs target " +
                  shape_str(p.target.shape()));
    if (masks.count(id)) {
      TensorT<T> m = load_image<T>(masks.at(id));
      if (m.size(1) == 3) m = rgb_to_luminance(m);
      FSE_CHECK(m.size(2) == p.shadow.size(2) && m.size(3) == p.shadow.size(3), ShapeError,
                "pair '" + id + "': mask spatial size mismatch");
      p.mask = std::move(m);
    }
    p.validate();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace fse
