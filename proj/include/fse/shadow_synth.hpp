#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "fse/dataset.hpp"
#include "fse/image.hpp"
#include "fse/rng.hpp"
#include "fse/tensor.hpp"

namespace fse {

enum class ShadowShape { kEllipse, kPolygon, kBand, kOccluder };
enum class Hardness { kHard, kSoft };
enum class OccluderKind { kHair, kHat, kHand, kBlinds };

inline const char* to_string(ShadowShape s) {
  switch (s) {
    case ShadowShape::kEllipse: return "ellipse";
    case ShadowShape::kPolygon: return "polygon";
    case ShadowShape::kBand: return "band";
    default: return "occluder_template";
  }
}
inline const char* to_string(Hardness h) { return h == Hardness::kHard ? "hard" : "soft"; }
inline const char* to_string(OccluderKind k) {
  switch (k) {
    case OccluderKind::kHair: return "hair";
    case OccluderKind::kHat: return "hat";
    case OccluderKind::kHand: return "hand";
    default: return "blind_slats";
  }
}

// Parameters of one synthetic shadow. Geometry details beyond the center are
// derived deterministically from `seed` at render time.
struct ShadowSpec {
  ShadowShape shape = ShadowShape::kEllipse;
  OccluderKind occluder = OccluderKind::kHair;  // used when shape == kOccluder
  double opacity = 0.3;                         // [0.15, 0.45]
  double flow = 0.2;                            // [0.10, 0.30]
  Hardness hardness = Hardness::kSoft;
  double feather_radius = 30.0;  // hard: [5,15], soft: [25,50]
  double pos_x = 0.5, pos_y = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    FSE_CHECK(opacity >= 0.15 && opacity <= 0.45, ConfigError, "ShadowSpec: opacity out of [0.15, 0.45]");
    FSE_CHECK(flow >= 0.10 && flow <= 0.30, ConfigError, "ShadowSpec: flow out of [0.10, 0.30]");
    if (hardness == Hardness::kHard)
      FSE_CHECK(feather_radius >= 5.0 && feather_radius <= 15.0, ConfigError,
                "ShadowSpec: hard feather out of [5, 15]");
    else
      FSE_CHECK(feather_radius >= 25.0 && feather_radius <= 50.0, ConfigError,
                "ShadowSpec: soft feather out of [25, 50]");
  }
};

inline void to_json(nlohmann::json& j, const ShadowSpec& s) {
  j = nlohmann::json{{"shape", to_string(s.shape)},   {"occluder", to_string(s.occluder)},
                     {"opacity", s.opacity},          {"flow", s.flow},
                     {"hardness", to_string(s.hardness)}, {"feather_radius", s.feather_radius},
                     {"pos_x", s.pos_x},              {"pos_y", s.pos_y},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, ShadowSpec& s) {
  auto shape = j.at("shape").get<std::string>();
  if (shape == "ellipse") s.shape = ShadowShape::kEllipse;
  else if (shape == "polygon") s.shape = ShadowShape::kPolygon;
  else if (shape == "band") s.shape = ShadowShape::kBand;
  else if (shape == "occluder_template") s.shape = ShadowShape::kOccluder;
  else throw FormatError("ShadowSpec: unknown shape '" + shape + "'");
  auto occ = j.at("occluder").get<std::string>();
  if (occ == "hair") s.occluder = OccluderKind::kHair;
  else if (occ == "hat") s.occluder = OccluderKind::kHat;
  else if (occ == "hand") s.occluder = OccluderKind::kHand;
  else if (occ == "blind_slats") s.occluder = OccluderKind::kBlinds;
  else throw FormatError("ShadowSpec: unknown occluder '" + occ + "'");
  s.opacity = j.at("opacity").get<double>();
  s.flow = j.at("flow").get<double>();
  s.hardness = j.at("hardness").get<std::string>() == "hard" ? Hardness::kHard : Hardness::kSoft;
  s.feather_radius = j.at("feather_radius").get<double>();
  s.pos_x = j.at("pos_x").get<double>();
  s.pos_y = j.at("pos_y").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
}

template <typename T>
struct OccluderTemplateT {
  std::string name;
  TensorT<T> silhouette;  // [1,1,H,W], values in {0,1}
};

inline ShadowSpec sample_spec(std::uint64_t rng_seed, std::int64_t H, std::int64_t W) {
  FSE_CHECK(H >= 32 && W >= 32, ConfigError, "sample_spec: size must be at least 32x32");
  Rng rng(rng_seed);
  ShadowSpec s;
  s.shape = ShadowShape(rng.uniform_index(4));
  s.occluder = OccluderKind(rng.uniform_index(4));
  s.opacity = rng.uniform(0.15, 0.45);
  s.flow = rng.uniform(0.10, 0.30);
  s.hardness = rng.bernoulli(0.5) ? Hardness::kHard : Hardness::kSoft;
  s.feather_radius = s.hardness == Hardness::kHard ? rng.uniform(5.0, 15.0) : rng.uniform(25.0, 50.0);
  s.pos_x = rng.uniform();
  s.pos_y = rng.uniform();
  s.seed = rng_seed;
  return s;
}

namespace detail {

template <typename T>
void fill_ellipse(TensorT<T>& st, double cx, double cy, double rx, double ry, double angle) {
  const std::int64_t H = st.size(2), W = st.size(3);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      double dx = double(x) - cx, dy = double(y) - cy;
      double u = (dx * ca + dy * sa) / rx, v = (-dx * sa + dy * ca) / ry;
      if (u * u + v * v <= 1.0) st[y * W + x] = T(1);
    }
}

template <typename T>
void fill_polygon(TensorT<T>& st, const std::vector<double>& px, const std::vector<double>& py) {
  const std::int64_t H = st.size(2), W = st.size(3);
  const std::size_t k = px.size();
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      // even-odd ray casting
      bool inside = false;
      for (std::size_t i = 0, j = k - 1; i < k; j = i++) {
        bool crosses = (py[i] > double(y)) != (py[j] > double(y));
        if (crosses) {
          double xint = px[j] + (px[i] - px[j]) * (double(y) - py[j]) / (py[i] - py[j]);
          if (double(x) < xint) inside = !inside;
        }
      }
      if (inside) st[y * W + x] = T(1);
    }
}

template <typename T>
void fill_band(TensorT<T>& st, double cx, double cy, double angle, double half_width) {
  const std::int64_t H = st.size(2), W = st.size(3);
  const double nx = -std::sin(angle), ny = std::cos(angle);  // normal of the band direction
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      if (std::abs((double(x) - cx) * nx + (double(y) - cy) * ny) <= half_width) st[y * W + x] = T(1);
}

}  // namespace detail

// Procedural silhouettes standing in for the named occlusion categories;
// no external assets are shipped.
template <typename T>
OccluderTemplateT<T> make_occluder_template(OccluderKind kind, std::int64_t H, std::int64_t W,
                                            double cx, double cy, Rng& rng) {
  OccluderTemplateT<T> tpl;
  tpl.name = to_string(kind);
  tpl.silhouette = TensorT<T>({1, 1, H, W});
  auto& st = tpl.silhouette;
  const double m = double(std::min(H, W));
  switch (kind) {
    case OccluderKind::kHair: {  // wavy band
      double amp = rng.uniform(0.03, 0.10) * m;
      double freq = rng.uniform(1.5, 4.0);
      double phase = rng.uniform(0.0, 6.283185307179586);
      double half = rng.uniform(0.08, 0.18) * m;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          double center = cy + amp * std::sin(freq * 6.283185307179586 * double(x) / double(W) + phase);
          if (std::abs(double(y) - center) <= half) st[y * W + x] = T(1);
        }
      break;
    }
    case OccluderKind::kHat: {  // half disk (brim side down)
      double r = rng.uniform(0.2, 0.4) * m;
      const std::int64_t HH = H, WW = W;
      for (std::int64_t y = 0; y < HH; ++y)
        for (std::int64_t x = 0; x < WW; ++x) {
          double dx = double(x) - cx, dy = double(y) - cy;
          if (dy <= 0.0 && dx * dx + dy * dy <= r * r) st[y * WW + x] = T(1);
        }
      break;
    }
    case OccluderKind::kHand: {  // five-lobe blob: palm plus finger ellipses
      double pr = rng.uniform(0.12, 0.2) * m;
      detail::fill_ellipse(st, cx, cy, pr, pr * 1.2, 0.0);
      double base = rng.uniform(0.0, 6.283185307179586);
      for (int f = 0; f < 5; ++f) {
        double ang = base + (double(f) - 2.0) * 0.35;
        double fl = rng.uniform(0.10, 0.18) * m;
        double fx = cx + std::cos(ang) * (pr + fl * 0.8);
        double fy = cy + std::sin(ang) * (pr + fl * 0.8);
        detail::fill_ellipse(st, fx, fy, fl, fl * 0.35, ang);
      }
      break;
    }
    case OccluderKind::kBlinds: {  // parallel slats across the frame
      double angle = rng.uniform(-0.4, 0.4);
      double period = rng.uniform(0.12, 0.25) * m;
      double duty = rng.uniform(0.35, 0.6);
      const double nx = -std::sin(angle), ny = std::cos(angle);
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          double d = (double(x) - cx) * nx + (double(y) - cy) * ny;
          double frac = d / period - std::floor(d / period);
          if (frac < duty) st[y * W + x] = T(1);
        }
      break;
    }
  }
  return tpl;
}

// Separable Gaussian blur with kernel truncated at ceil(3*sigma); zeros stay
// exactly zero outside the kernel support.
template <typename T>
TensorT<T> gaussian_blur(const TensorT<T>& img, double sigma) {
  if (sigma <= 0.0) return img;
  FSE_CHECK(img.rank() == 4, ShapeError, "gaussian_blur: rank-4 only");
  const std::int64_t R = std::int64_t(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t(2 * R + 1));
  double sum = 0;
  for (std::int64_t i = -R; i <= R; ++i) {
    k[std::size_t(i + R)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    sum += k[std::size_t(i + R)];
  }
  for (auto& v : k) v /= sum;

  const std::int64_t NC = img.size(0) * img.size(1), H = img.size(2), W = img.size(3);
  TensorT<T> tmp(img.shape()), out(img.shape());
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const T* src = img.data() + nc * H * W;
    T* t = tmp.data() + nc * H * W;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        double acc = 0;
        for (std::int64_t i = std::max<std::int64_t>(-R, -x); i <= std::min<std::int64_t>(R, W - 1 - x); ++i)
          acc += k[std::size_t(i + R)] * double(src[y * W + x + i]);
        t[y * W + x] = T(acc);
      }
    T* o = out.data() + nc * H * W;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        double acc = 0;
        for (std::int64_t i = std::max<std::int64_t>(-R, -y); i <= std::min<std::int64_t>(R, H - 1 - y); ++i)
          acc += k[std::size_t(i + R)] * double(t[(y + i) * W + x]);
        o[y * W + x] = T(acc);
      }
  }
  return out;
}

// Soft alpha map: stencil -> Gaussian feather (sigma = feather/3) -> peak
// scaled to opacity * min(1, flow/0.30 + 0.5).
template <typename T>
TensorT<T> render_shadow_alpha(const ShadowSpec& spec, std::int64_t H, std::int64_t W) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x67656f6d));  // geometry stream
  TensorT<T> stencil({1, 1, H, W});
  const double cx = spec.pos_x * double(W - 1), cy = spec.pos_y * double(H - 1);
  const double m = double(std::min(H, W));
  switch (spec.shape) {
    case ShadowShape::kEllipse: {
      double rx = rng.uniform(0.15, 0.35) * m, ry = rng.uniform(0.15, 0.35) * m;
      double ang = rng.uniform(0.0, 3.141592653589793);
      detail::fill_ellipse(stencil, cx, cy, rx, ry, ang);
      break;
    }
    case ShadowShape::kPolygon: {
      int k = int(rng.uniform_int(5, 8));
      std::vector<double> angs(static_cast<std::size_t>(k)), px(static_cast<std::size_t>(k)), py(static_cast<std::size_t>(k));
      for (auto& a : angs) a = rng.uniform(0.0, 6.283185307179586);
      std::sort(angs.begin(), angs.end());
      for (int i = 0; i < k; ++i) {
        double r = rng.uniform(0.12, 0.32) * m;
        px[std::size_t(i)] = cx + std::cos(angs[std::size_t(i)]) * r;
        py[std::size_t(i)] = cy + std::sin(angs[std::size_t(i)]) * r;
      }
      detail::fill_polygon(stencil, px, py);
      break;
    }
    case ShadowShape::kBand: {
      double ang = rng.uniform(0.0, 3.141592653589793);
      double half = rng.uniform(0.06, 0.2) * m;
      detail::fill_band(stencil, cx, cy, ang, half);
      break;
    }
    case ShadowShape::kOccluder:
      stencil = make_occluder_template<T>(spec.occluder, H, W, cx, cy, rng).silhouette;
      break;
  }

  TensorT<T> alpha = gaussian_blur(stencil, spec.feather_radius / 3.0);
  double mx = double(alpha.max_value());
  if (mx <= 0.0) return TensorT<T>({1, 1, H, W});
  const double peak = spec.opacity * std::min(1.0, spec.flow / 0.30 + 0.5);
  const T scale = T(peak / mx);
  for (std::int64_t i = 0; i < alpha.numel(); ++i) alpha[i] *= scale;
  return alpha;
}

// Multiplicative darkening: out = clean * (1 - alpha) per channel.
template <typename T>
TensorT<T> composite_shadow(const TensorT<T>& clean, const TensorT<T>& alpha) {
  FSE_CHECK(clean.rank() == 4 && clean.size(0) == 1 && clean.size(1) == 3, ShapeError,
            "composite_shadow: clean must be [1,3,H,W]");
  FSE_CHECK(alpha.rank() == 4 && alpha.size(1) == 1 && alpha.size(2) == clean.size(2) &&
                alpha.size(3) == clean.size(3),
            ShapeError, "composite_shadow: alpha spatial size mismatch");
  const std::int64_t HW = clean.size(2) * clean.size(3);
  TensorT<T> out = clean;
  for (std::int64_t c = 0; c < 3; ++c) {
    T* p = out.data() + c * HW;
    for (std::int64_t i = 0; i < HW; ++i) p[i] *= (T(1) - alpha[i]);
  }
  return out;
}

namespace detail {

// max-composited low-opacity spot field; attenuation never exceeds 0.1
template <typename T>
TensorT<T> micro_shadow_field(std::int64_t H, std::int64_t W, double density, std::uint64_t seed) {
  TensorT<T> field({1, 1, H, W});
  if (density <= 0.0) return field;
  Rng rng(seed);
  const double mean_area = 8.0;
  const std::int64_t n_spots = std::max<std::int64_t>(1, std::llround(density * double(H * W) / mean_area));
  for (std::int64_t s = 0; s < n_spots; ++s) {
    std::int64_t cyi = rng.uniform_int(0, H - 1);
    std::int64_t cxi = rng.uniform_int(0, W - 1);
    std::int64_t r = rng.uniform_int(1, 3);
    double op = rng.uniform(0.02, 0.1);
    for (std::int64_t y = std::max<std::int64_t>(0, cyi - r); y <= std::min(H - 1, cyi + r); ++y)
      for (std::int64_t x = std::max<std::int64_t>(0, cxi - r); x <= std::min(W - 1, cxi + r); ++x) {
        double d2 = double((y - cyi) * (y - cyi) + (x - cxi) * (x - cxi)) / double(r * r);
        if (d2 <= 1.0) {
          T a = T(op * (1.0 - d2));
          field[y * W + x] = std::max(field[y * W + x], a);
        }
      }
  }
  return field;
}

}  // namespace detail

template <typename T>
TensorT<T> add_micro_shadows(const TensorT<T>& img, double density, std::uint64_t seed) {
  check_image_shape(img, "add_micro_shadows");
  FSE_CHECK(density >= 0.0 && density <= 0.05, ConfigError, "add_micro_shadows: density out of [0, 0.05]");
  if (density == 0.0) return img;
  const std::int64_t H = img.size(2), W = img.size(3), HW = H * W;
  TensorT<T> field = detail::micro_shadow_field<T>(H, W, density, seed);
  TensorT<T> out = img;
  for (std::int64_t n = 0; n < img.size(0); ++n)
    for (std::int64_t c = 0; c < img.size(1); ++c) {
      T* p = out.data() + (n * img.size(1) + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) p[i] *= (T(1) - field[i]);
    }
  return out;
}

// Smooth colorful field standing in for a shadow-free photo; lets the whole
// synth -> train -> eval loop run without external data.
template <typename T>
TensorT<T> procedural_clean_image(std::uint64_t seed, std::int64_t H, std::int64_t W) {
  Rng rng(seed);
  TensorT<T> img({1, 3, H, W});
  for (std::int64_t c = 0; c < 3; ++c) {
    double base = rng.uniform(0.35, 0.75);
    double fy[3], fx[3], ph[3], amp[3];
    for (int k = 0; k < 3; ++k) {
      fy[k] = rng.uniform(0.3, 1.8);
      fx[k] = rng.uniform(0.3, 1.8);
      ph[k] = rng.uniform(0.0, 6.283185307179586);
      amp[k] = rng.uniform(0.04, 0.12);
    }
    T* p = img.data() + c * H * W;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        double v = base;
        for (int k = 0; k < 3; ++k)
          v += amp[k] * std::sin(6.283185307179586 * (fy[k] * double(y) / double(H) +
                                                      fx[k] * double(x) / double(W)) + ph[k]);
        p[y * W + x] = T(std::min(0.98, std::max(0.02, v)));
      }
  }
  return img;
}

// Full synthetic pair. Micro-shadows are restricted to the alpha support so
// pixels outside the shadow stay bit-identical to the clean image.
template <typename T>
SamplePairT<T> synthesize_pair(const TensorT<T>& clean, const ShadowSpec& spec) {
  FSE_CHECK(clean.rank() == 4 && clean.size(0) == 1 && clean.size(1) == 3, ShapeError,
            "synthesize_pair: clean must be [1,3,H,W]");
  const std::int64_t H = clean.size(2), W = clean.size(3), HW = H * W;
  TensorT<T> alpha = render_shadow_alpha<T>(spec, H, W);
  TensorT<T> shadow = composite_shadow(clean, alpha);

  Rng rng(derive_seed(spec.seed, 0x6d696372));  // micro-shadow stream
  double density = rng.uniform(0.0, 0.03);
  TensorT<T> field = detail::micro_shadow_field<T>(H, W, density, rng.next_u64());
  for (std::int64_t i = 0; i < HW; ++i)
    if (!(alpha[i] > T(0))) field[i] = T(0);
  for (std::int64_t c = 0; c < 3; ++c) {
    T* p = shadow.data() + c * HW;
    for (std::int64_t i = 0; i < HW; ++i) p[i] *= (T(1) - field[i]);
  }

  SamplePairT<T> pair;
  pair.shadow = std::move(shadow);
  pair.target = clean;
  TensorT<T> mask({1, 1, H, W});
  for (std::int64_t i = 0; i < HW; ++i) mask[i] = alpha[i] > T(0.05) ? T(1) : T(0);
  pair.mask = std::move(mask);
  return pair;
}

}  // namespace fse
