#pragma once

#include <algorithm>
#include <cmath>

#include "fse/tensor.hpp"

namespace fse {

// Rec.601 luma weights
template <typename T>
TensorT<T> rgb_to_luminance(const TensorT<T>& t) {
  FSE_CHECK(t.rank() == 4, ShapeError, "rgb_to_luminance: rank-4 only");
  FSE_CHECK(t.size(1) == 3, ShapeError, "rgb_to_luminance: expected 3 channels, got " + shape_str(t.shape()));
  const std::int64_t N = t.size(0), H = t.size(2), W = t.size(3), HW = H * W;
  TensorT<T> out({N, 1, H, W});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* r = t.data() + n * 3 * HW;
    const T* g = r + HW;
    const T* b = g + HW;
    T* y = out.data() + n * HW;
    for (std::int64_t i = 0; i < HW; ++i)
      y[i] = T(0.299) * r[i] + T(0.587) * g[i] + T(0.114) * b[i];
  }
  return out;
}

template <typename T>
TensorT<T> luminance_or_self(const TensorT<T>& t) {
  return t.size(1) == 3 ? rgb_to_luminance(t) : t;
}

// Binary mask: 1 where the luminance difference exceeds tau.
template <typename T>
TensorT<T> initial_mask(const TensorT<T>& input_img, const TensorT<T>& target_img, T tau) {
  check_same_shape(input_img, target_img, "initial_mask");
  FSE_CHECK(tau >= T(0), ConfigError, "initial_mask: tau must be >= 0");
  TensorT<T> yi = luminance_or_self(input_img);
  TensorT<T> yt = luminance_or_self(target_img);
  TensorT<T> mask(yi.shape());
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = std::abs(yt[i] - yi[i]) > tau ? T(1) : T(0);
  return mask;
}

template <typename T>
TensorT<T> hflip(const TensorT<T>& t) {
  FSE_CHECK(t.rank() == 4, ShapeError, "hflip: rank-4 only");
  const std::int64_t NC = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  TensorT<T> out(t.shape());
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t y = 0; y < H; ++y) {
      const T* src = t.data() + (nc * H + y) * W;
      T* dst = out.data() + (nc * H + y) * W;
      for (std::int64_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
    }
  return out;
}

// Counter-clockwise right-angle rotation, applied k times.
template <typename T>
TensorT<T> rot90(const TensorT<T>& t, int k) {
  FSE_CHECK(t.rank() == 4, ShapeError, "rot90: rank-4 only");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return t;
  const std::int64_t NC = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  Shape os = t.shape();
  if (k % 2 == 1) std::swap(os[2], os[3]);
  TensorT<T> out(os);
  const std::int64_t Ho = os[2], Wo = os[3];
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t x = 0; x < Wo; ++x) {
        std::int64_t sy, sx;
        switch (k) {
          case 1: sy = x; sx = W - 1 - y; break;
          case 2: sy = H - 1 - y; sx = W - 1 - x; break;
          default: sy = H - 1 - x; sx = y; break;
        }
        out[(nc * Ho + y) * Wo + x] = t[(nc * H + sy) * W + sx];
      }
  return out;
}

template <typename T>
TensorT<T> crop(const TensorT<T>& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  FSE_CHECK(t.rank() == 4, ShapeError, "crop: rank-4 only");
  const std::int64_t NC = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  FSE_CHECK(y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W, ShapeError, "crop: window out of bounds");
  TensorT<T> out({t.size(0), t.size(1), h, w});
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(t.data() + (nc * H + y0 + y) * W + x0, w, out.data() + (nc * h + y) * w);
  return out;
}

// Bilinear resize with half-pixel centers; used to bring pairs to the
// requested inference resolution.
template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& t, std::int64_t Ho, std::int64_t Wo) {
  FSE_CHECK(t.rank() == 4, ShapeError, "resize_bilinear: rank-4 only");
  FSE_CHECK(Ho >= 1 && Wo >= 1, ConfigError, "resize_bilinear: bad target size");
  const std::int64_t NC = t.size(0) * t.size(1), H = t.size(2), W = t.size(3);
  if (Ho == H && Wo == W) return t;
  TensorT<T> out({t.size(0), t.size(1), Ho, Wo});
  const double sy = double(H) / double(Ho), sx = double(W) / double(Wo);
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const T* src = t.data() + nc * H * W;
    T* dst = out.data() + nc * Ho * Wo;
    for (std::int64_t y = 0; y < Ho; ++y) {
      double fy = (double(y) + 0.5) * sy - 0.5;
      std::int64_t y0 = std::int64_t(std::floor(fy));
      double wy = fy - double(y0);
      std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, H - 1);
      std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, H - 1);
      for (std::int64_t x = 0; x < Wo; ++x) {
        double fx = (double(x) + 0.5) * sx - 0.5;
        std::int64_t x0 = std::int64_t(std::floor(fx));
        double wx = fx - double(x0);
        std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, W - 1);
        std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, W - 1);
        double v = (1 - wy) * ((1 - wx) * double(src[y0c * W + x0c]) + wx * double(src[y0c * W + x1c])) +
                   wy * ((1 - wx) * double(src[y1c * W + x0c]) + wx * double(src[y1c * W + x1c]));
        dst[y * Wo + x] = T(v);
      }
    }
  }
  return out;
}

}  // namespace fse
