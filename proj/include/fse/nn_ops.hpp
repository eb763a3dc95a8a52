#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <vector>

#include "fse/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fse {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

// ---------------------------------------------------------------------------
// convolution

struct Conv2dSpec {
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad,
                                 std::int64_t dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

namespace detail {

// col layout: [Cg*kh*kw, Ho*Wo] for one (sample, group)
template <typename T>
void im2col(const T* x, std::int64_t H, std::int64_t W, std::int64_t Cg, std::int64_t kh, std::int64_t kw,
            std::int64_t Ho, std::int64_t Wo, const Conv2dSpec& s, T* col) {
  for (std::int64_t c = 0; c < Cg; ++c) {
    const T* xc = x + c * H * W;
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        T* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          std::int64_t iy = oy * s.stride - s.pad + ky * s.dilation;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::memset(dst, 0, std::size_t(Wo) * sizeof(T));
            continue;
          }
          const T* src = xc + iy * W;
          if (s.stride == 1) {
            std::int64_t off = kx * s.dilation - s.pad;  // ix = ox + off
            std::int64_t lo = std::max<std::int64_t>(0, -off);
            std::int64_t hi = std::min<std::int64_t>(Wo, W - off);
            if (lo > 0) std::memset(dst, 0, std::size_t(std::min(lo, Wo)) * sizeof(T));
            if (hi > lo) std::memcpy(dst + lo, src + lo + off, std::size_t(hi - lo) * sizeof(T));
            if (hi < Wo) std::memset(dst + std::max(hi, std::int64_t(0)), 0,
                                     std::size_t(Wo - std::max(hi, std::int64_t(0))) * sizeof(T));
          } else {
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
              std::int64_t ix = ox * s.stride - s.pad + kx * s.dilation;
              dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t H, std::int64_t W, std::int64_t Cg, std::int64_t kh, std::int64_t kw,
                std::int64_t Ho, std::int64_t Wo, const Conv2dSpec& s, T* x) {
  for (std::int64_t c = 0; c < Cg; ++c) {
    T* xc = x + c * H * W;
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        const T* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          std::int64_t iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + oy * Wo;
          T* dst = xc + iy * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            std::int64_t ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Plain forward convolution on values. x:[N,Cin,H,W], w:[Cout,Cin/g,kh,kw],
// b:[Cout] or null.
template <typename T>
TensorT<T> conv2d_value(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b, const Conv2dSpec& s) {
  FSE_CHECK(x.rank() == 4 && w.rank() == 4, ShapeError, "conv2d: want rank-4 input and weight");
  const std::int64_t N = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
  const std::int64_t Cout = w.size(0), Cg = w.size(1), kh = w.size(2), kw = w.size(3);
  FSE_CHECK(Cin % s.groups == 0 && Cout % s.groups == 0, ShapeError, "conv2d: groups must divide channels");
  FSE_CHECK(Cg == Cin / s.groups, ShapeError,
            "conv2d: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  if (b) FSE_CHECK(b->rank() == 1 && b->size(0) == Cout, ShapeError, "conv2d: bias must be [Cout]");
  const std::int64_t Ho = conv_out_dim(H, kh, s.stride, s.pad, s.dilation);
  const std::int64_t Wo = conv_out_dim(W, kw, s.stride, s.pad, s.dilation);
  FSE_CHECK(Ho >= 1 && Wo >= 1, ShapeError, "conv2d: output would be empty");
  const std::int64_t Cog = Cout / s.groups;

  TensorT<T> out({N, Cout, Ho, Wo});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<T> col(std::size_t(Cg * kh * kw * Ho * Wo));
    for (std::int64_t g = 0; g < s.groups; ++g) {
      detail::im2col(x.data() + (n * Cin + g * Cg) * H * W, H, W, Cg, kh, kw, Ho, Wo, s, col.data());
      CMapM<T> wm(w.data() + g * Cog * Cg * kh * kw, Cog, Cg * kh * kw);
      CMapM<T> cm(col.data(), Cg * kh * kw, Ho * Wo);
      MapM<T> om(out.data() + (n * Cout + g * Cog) * Ho * Wo, Cog, Ho * Wo);
      om.noalias() = wm * cm;
    }
    if (b)
      for (std::int64_t co = 0; co < Cout; ++co) {
        T* p = out.data() + (n * Cout + co) * Ho * Wo;
        T bv = (*b)[co];
        for (std::int64_t i = 0; i < Ho * Wo; ++i) p[i] += bv;
      }
  }
  return out;
}

// Autodiff wrapper. Pass a null bias var for bias-free convolutions.
template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, const Conv2dSpec& s) {
  TensorT<T> out = conv2d_value(x->value, w->value, b ? &b->value : nullptr, s);
  std::vector<VarT<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(out), std::move(parents), [x, w, b, s](VariableT<T>& node) {
    const std::int64_t N = x->value.size(0), Cin = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
    const std::int64_t Cout = w->value.size(0), Cg = w->value.size(1), kh = w->value.size(2), kw = w->value.size(3);
    const std::int64_t Ho = node.value.size(2), Wo = node.value.size(3);
    const std::int64_t Cog = Cout / s.groups;
    const TensorT<T>& gout = node.grad;

    std::vector<TensorT<T>> dw_partial;
    if (w->requires_grad) dw_partial.assign(std::size_t(N), TensorT<T>(w->value.shape()));
    if (x->requires_grad) x->ensure_grad();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t n = 0; n < N; ++n) {
      std::vector<T> col(std::size_t(Cg * kh * kw * Ho * Wo));
      std::vector<T> colg;
      for (std::int64_t g = 0; g < s.groups; ++g) {
        CMapM<T> gm(gout.data() + (n * Cout + g * Cog) * Ho * Wo, Cog, Ho * Wo);
        if (w->requires_grad) {
          detail::im2col(x->value.data() + (n * Cin + g * Cg) * H * W, H, W, Cg, kh, kw, Ho, Wo, s, col.data());
          CMapM<T> cm(col.data(), Cg * kh * kw, Ho * Wo);
          MapM<T> dwm(dw_partial[std::size_t(n)].data() + g * Cog * Cg * kh * kw, Cog, Cg * kh * kw);
          dwm.noalias() = gm * cm.transpose();
        }
        if (x->requires_grad) {
          colg.resize(std::size_t(Cg * kh * kw * Ho * Wo));
          CMapM<T> wm(w->value.data() + g * Cog * Cg * kh * kw, Cog, Cg * kh * kw);
          MapM<T> cgm(colg.data(), Cg * kh * kw, Ho * Wo);
          cgm.noalias() = wm.transpose() * gm;
          detail::col2im_add(colg.data(), H, W, Cg, kh, kw, Ho, Wo, s,
                             x->grad.data() + (n * Cin + g * Cg) * H * W);
        }
      }
    }
    if (w->requires_grad) {
      auto& gw = w->ensure_grad();
      for (std::int64_t n = 0; n < N; ++n) accumulate(gw, dw_partial[std::size_t(n)]);
    }
    if (b && b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
          const T* p = gout.data() + (n * Cout + co) * Ho * Wo;
          double acc = 0;
          for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += double(p[i]);
          gb[co] += T(acc);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// dynamic convolution: per-sample convex mixture of K expert kernels

// experts: [K, Cout, Cin, kh, kw]; router_weights: [N, K], rows on the simplex
template <typename T>
VarT<T> dynamic_conv2d(const VarT<T>& x, const VarT<T>& experts, const VarT<T>& router,
                       const VarT<T>& bias, const Conv2dSpec& s) {
  FSE_CHECK(s.groups == 1, ConfigError, "dynamic_conv2d: groups unsupported");
  FSE_CHECK(experts->value.rank() == 5, ShapeError, "dynamic_conv2d: experts must be rank-5 [K,Cout,Cin,kh,kw]");
  const std::int64_t N = x->value.size(0), Cin = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
  const std::int64_t K = experts->value.size(0), Cout = experts->value.size(1);
  const std::int64_t kh = experts->value.size(3), kw = experts->value.size(4);
  FSE_CHECK(experts->value.size(2) == Cin, ShapeError, "dynamic_conv2d: expert channel mismatch");
  FSE_CHECK(router->value.rank() == 2 && router->value.size(0) == N && router->value.size(1) == K, ShapeError,
            "dynamic_conv2d: router weights must be [N,K]");
  for (std::int64_t n = 0; n < N; ++n) {
    double row = 0;
    for (std::int64_t k = 0; k < K; ++k) row += double(router->value[n * K + k]);
    FSE_CHECK(std::abs(row - 1.0) <= 1e-6, NumericError, "dynamic_conv2d: router weights off the simplex");
  }
  const std::int64_t Ho = conv_out_dim(H, kh, s.stride, s.pad, s.dilation);
  const std::int64_t Wo = conv_out_dim(W, kw, s.stride, s.pad, s.dilation);
  const std::int64_t ksz = Cout * Cin * kh * kw;

  TensorT<T> out({N, Cout, Ho, Wo});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<T> kern(std::size_t(ksz), T(0));
    for (std::int64_t k = 0; k < K; ++k) {
      T rw = router->value[n * K + k];
      const T* e = experts->value.data() + k * ksz;
      for (std::int64_t i = 0; i < ksz; ++i) kern[std::size_t(i)] += rw * e[i];
    }
    std::vector<T> col(std::size_t(Cin * kh * kw * Ho * Wo));
    detail::im2col(x->value.data() + n * Cin * H * W, H, W, Cin, kh, kw, Ho, Wo, s, col.data());
    CMapM<T> km(kern.data(), Cout, Cin * kh * kw);
    CMapM<T> cm(col.data(), Cin * kh * kw, Ho * Wo);
    MapM<T> om(out.data() + n * Cout * Ho * Wo, Cout, Ho * Wo);
    om.noalias() = km * cm;
    if (bias)
      for (std::int64_t co = 0; co < Cout; ++co) {
        T* p = out.data() + (n * Cout + co) * Ho * Wo;
        for (std::int64_t i = 0; i < Ho * Wo; ++i) p[i] += bias->value[co];
      }
  }

  std::vector<VarT<T>> parents = {x, experts, router};
  if (bias) parents.push_back(bias);
  return make_node<T>(std::move(out), std::move(parents), [x, experts, router, bias, s, K, ksz](VariableT<T>& node) {
    const std::int64_t N = x->value.size(0), Cin = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
    const std::int64_t Cout = experts->value.size(1), kh = experts->value.size(3), kw = experts->value.size(4);
    const std::int64_t Ho = node.value.size(2), Wo = node.value.size(3);
    const TensorT<T>& gout = node.grad;

    std::vector<TensorT<T>> de_partial;
    if (experts->requires_grad) de_partial.assign(std::size_t(N), TensorT<T>(experts->value.shape()));
    if (x->requires_grad) x->ensure_grad();
    if (router->requires_grad) router->ensure_grad();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t n = 0; n < N; ++n) {
      std::vector<T> col(std::size_t(Cin * kh * kw * Ho * Wo));
      detail::im2col(x->value.data() + n * Cin * H * W, H, W, Cin, kh, kw, Ho, Wo, s, col.data());
      CMapM<T> cm(col.data(), Cin * kh * kw, Ho * Wo);
      CMapM<T> gm(gout.data() + n * Cout * Ho * Wo, Cout, Ho * Wo);

      // gradient of the mixed kernel for this sample
      std::vector<T> dkern(static_cast<std::size_t>(ksz));
      MapM<T> dkm(dkern.data(), Cout, Cin * kh * kw);
      dkm.noalias() = gm * cm.transpose();

      for (std::int64_t k = 0; k < K; ++k) {
        const T* e = experts->value.data() + k * ksz;
        if (router->requires_grad) {
          double acc = 0;
          for (std::int64_t i = 0; i < ksz; ++i) acc += double(dkern[std::size_t(i)]) * double(e[i]);
          router->grad[n * K + k] += T(acc);
        }
        if (experts->requires_grad) {
          T rw = router->value[n * K + k];
          T* dst = de_partial[std::size_t(n)].data() + k * ksz;
          for (std::int64_t i = 0; i < ksz; ++i) dst[i] += rw * dkern[std::size_t(i)];
        }
      }
      if (x->requires_grad) {
        std::vector<T> kern(std::size_t(ksz), T(0));
        for (std::int64_t k = 0; k < K; ++k) {
          T rw = router->value[n * K + k];
          const T* e = experts->value.data() + k * ksz;
          for (std::int64_t i = 0; i < ksz; ++i) kern[std::size_t(i)] += rw * e[i];
        }
        CMapM<T> km(kern.data(), Cout, Cin * kh * kw);
        std::vector<T> colg(std::size_t(Cin * kh * kw * Ho * Wo));
        MapM<T> cgm(colg.data(), Cin * kh * kw, Ho * Wo);
        cgm.noalias() = km.transpose() * gm;
        detail::col2im_add(colg.data(), H, W, Cin, kh, kw, Ho, Wo, s, x->grad.data() + n * Cin * H * W);
      }
    }
    if (experts->requires_grad) {
      auto& ge = experts->ensure_grad();
      for (std::int64_t n = 0; n < N; ++n) accumulate(ge, de_partial[std::size_t(n)]);
    }
    if (bias && bias->requires_grad) {
      auto& gb = bias->ensure_grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
          const T* p = gout.data() + (n * Cout + co) * Ho * Wo;
          double acc = 0;
          for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += double(p[i]);
          gb[co] += T(acc);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// linear on rank-2 [M, in] with w [out, in]

template <typename T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
  FSE_CHECK(x->value.rank() == 2 && w->value.rank() == 2, ShapeError, "linear: want rank-2 x and w");
  const std::int64_t M = x->value.size(0), In = x->value.size(1), Out = w->value.size(0);
  FSE_CHECK(w->value.size(1) == In, ShapeError, "linear: weight/input mismatch");
  TensorT<T> out({M, Out});
  CMapM<T> xm(x->value.data(), M, In);
  CMapM<T> wm(w->value.data(), Out, In);
  MapM<T> om(out.data(), M, Out);
  om.noalias() = xm * wm.transpose();
  if (b) {
    FSE_CHECK(b->value.numel() == Out, ShapeError, "linear: bias mismatch");
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t o = 0; o < Out; ++o) out[m * Out + o] += b->value[o];
  }
  std::vector<VarT<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(out), std::move(parents), [x, w, b, M, In, Out](VariableT<T>& n) {
    CMapM<T> gm(n.grad.data(), M, Out);
    if (x->requires_grad) {
      MapM<T> gx(x->ensure_grad().data(), M, In);
      CMapM<T> wm(w->value.data(), Out, In);
      gx.noalias() += gm * wm;
    }
    if (w->requires_grad) {
      MapM<T> gw(w->ensure_grad().data(), Out, In);
      CMapM<T> xm(x->value.data(), M, In);
      gw.noalias() += gm.transpose() * xm;
    }
    if (b && b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t o = 0; o < Out; ++o) gb[o] += n.grad[m * Out + o];
    }
  });
}

// ---------------------------------------------------------------------------
// channel layer norm (non-affine): normalizes over C at each (n, h, w)

template <typename T>
VarT<T> layer_norm_channel(const VarT<T>& x, T eps = T(1e-5)) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "layer_norm_channel: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), HW = x->value.size(2) * x->value.size(3);
  TensorT<T> out(x->value.shape());
  TensorT<T> inv_std({N, 1, x->value.size(2), x->value.size(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* xb = x->value.data() + n * C * HW;
    T* ob = out.data() + n * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      double mu = 0;
      for (std::int64_t c = 0; c < C; ++c) mu += double(xb[c * HW + i]);
      mu /= double(C);
      double var = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        double d = double(xb[c * HW + i]) - mu;
        var += d * d;
      }
      var /= double(C);
      double is = 1.0 / std::sqrt(var + double(eps));
      inv_std[n * HW + i] = T(is);
      for (std::int64_t c = 0; c < C; ++c) ob[c * HW + i] = T((double(xb[c * HW + i]) - mu) * is);
    }
  }
  auto node = make_node<T>(std::move(out), {x}, nullptr);
  if (node->requires_grad) {
    VariableT<T>* raw = node.get();
    node->backward_fn = [x, raw, N, C, HW, inv_std](VariableT<T>& n) {
      auto& g = x->ensure_grad();
      for (std::int64_t b = 0; b < N; ++b) {
        const T* yb = raw->value.data() + b * C * HW;
        const T* db = n.grad.data() + b * C * HW;
        T* gb = g.data() + b * C * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          double mean_dy = 0, mean_dyy = 0;
          for (std::int64_t c = 0; c < C; ++c) {
            mean_dy += double(db[c * HW + i]);
            mean_dyy += double(db[c * HW + i]) * double(yb[c * HW + i]);
          }
          mean_dy /= double(C);
          mean_dyy /= double(C);
          double is = double(inv_std[b * HW + i]);
          for (std::int64_t c = 0; c < C; ++c) {
            double dy = double(db[c * HW + i]);
            double y = double(yb[c * HW + i]);
            gb[c * HW + i] += T(is * (dy - mean_dy - y * mean_dyy));
          }
        }
      }
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// spatial rearrangements

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = (i < 0) ? -i : 2 * n - 2 - i;
  return i;
}

template <typename T>
VarT<T> reflect_pad2d(const VarT<T>& x, std::int64_t pt, std::int64_t pb, std::int64_t pl, std::int64_t pr) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "reflect_pad2d: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
  const std::int64_t Ho = H + pt + pb, Wo = W + pl + pr;
  TensorT<T> out({N, C, Ho, Wo});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x->value.data() + nc * H * W;
    T* dst = out.data() + nc * Ho * Wo;
    for (std::int64_t y = 0; y < Ho; ++y) {
      std::int64_t sy = reflect_index(y - pt, H);
      for (std::int64_t xx = 0; xx < Wo; ++xx) dst[y * Wo + xx] = src[sy * W + reflect_index(xx - pl, W)];
    }
  }
  return make_node<T>(std::move(out), {x}, [x, pt, pl, N, C, H, W, Ho, Wo](VariableT<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      T* dst = g.data() + nc * H * W;
      const T* src = n.grad.data() + nc * Ho * Wo;
      for (std::int64_t y = 0; y < Ho; ++y) {
        std::int64_t sy = reflect_index(y - pt, H);
        for (std::int64_t xx = 0; xx < Wo; ++xx) dst[sy * W + reflect_index(xx - pl, W)] += src[y * Wo + xx];
      }
    }
  });
}

template <typename T>
VarT<T> crop2d(const VarT<T>& x, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "crop2d: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
  FSE_CHECK(y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W, ShapeError, "crop2d: window out of bounds");
  TensorT<T> out({N, C, h, w});
  for (std::int64_t nc = 0; nc < N * C; ++nc)
    for (std::int64_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (nc * h + y) * w, x->value.data() + (nc * H + y0 + y) * W + x0,
                  std::size_t(w) * sizeof(T));
  return make_node<T>(std::move(out), {x}, [x, y0, x0, h, w, N, C, H, W](VariableT<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (std::int64_t nc = 0; nc < N * C; ++nc)
      for (std::int64_t y = 0; y < h; ++y) {
        const T* src = n.grad.data() + (nc * h + y) * w;
        T* dst = g.data() + (nc * H + y0 + y) * W + x0;
        for (std::int64_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
      }
  });
}

// cyclic shift: out[y][x] = in[(y - sy) mod H][(x - sx) mod W]
template <typename T>
TensorT<T> roll2d_value(const TensorT<T>& x, std::int64_t sy, std::int64_t sx) {
  FSE_CHECK(x.rank() == 4, ShapeError, "roll2d: rank-4 only");
  const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  auto mod = [](std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; };
  TensorT<T> out(x.shape());
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + nc * H * W;
    T* dst = out.data() + nc * H * W;
    for (std::int64_t y = 0; y < H; ++y) {
      std::int64_t sy2 = mod(y - sy, H);
      for (std::int64_t xx = 0; xx < W; ++xx) dst[y * W + xx] = src[sy2 * W + mod(xx - sx, W)];
    }
  }
  return out;
}

template <typename T>
VarT<T> roll2d(const VarT<T>& x, std::int64_t sy, std::int64_t sx) {
  return make_node<T>(roll2d_value(x->value, sy, sx), {x}, [x, sy, sx](VariableT<T>& n) {
    if (!x->requires_grad) return;
    accumulate(x->ensure_grad(), roll2d_value(n.grad, -sy, -sx));
  });
}

// ---------------------------------------------------------------------------
// window partition / reverse
//
// The value-level pair below implements the public contract (reflect padding
// to the next window multiple, optional cyclic shift by -w/2, partition into
// [N*nWh*nWw, w*w, C]); window_reverse inverts it exactly.

struct WindowPadInfo {
  std::int64_t n = 0, c = 0;
  std::int64_t orig_h = 0, orig_w = 0;
  std::int64_t padded_h = 0, padded_w = 0;
  std::int64_t win = 0;
  std::int64_t shift = 0;
};

namespace detail {

// x:[N,C,H,W] with H,W multiples of win -> [N*nWh*nWw, win*win, C]
template <typename T>
TensorT<T> partition_windows(const TensorT<T>& x, std::int64_t win) {
  const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::int64_t nWh = H / win, nWw = W / win, Tk = win * win;
  TensorT<T> out({N * nWh * nWw, Tk, C});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t wy = 0; wy < nWh; ++wy)
      for (std::int64_t wx = 0; wx < nWw; ++wx) {
        std::int64_t b = (n * nWh + wy) * nWw + wx;
        for (std::int64_t c = 0; c < C; ++c) {
          const T* src = x.data() + ((n * C + c) * H + wy * win) * W + wx * win;
          for (std::int64_t ty = 0; ty < win; ++ty)
            for (std::int64_t tx = 0; tx < win; ++tx)
              out[(b * Tk + ty * win + tx) * C + c] = src[ty * W + tx];
        }
      }
  return out;
}

template <typename T>
TensorT<T> departition_windows(const TensorT<T>& wins, std::int64_t win, std::int64_t N, std::int64_t C,
                               std::int64_t H, std::int64_t W) {
  const std::int64_t nWh = H / win, nWw = W / win, Tk = win * win;
  TensorT<T> out({N, C, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t wy = 0; wy < nWh; ++wy)
      for (std::int64_t wx = 0; wx < nWw; ++wx) {
        std::int64_t b = (n * nWh + wy) * nWw + wx;
        for (std::int64_t c = 0; c < C; ++c) {
          T* dst = out.data() + ((n * C + c) * H + wy * win) * W + wx * win;
          for (std::int64_t ty = 0; ty < win; ++ty)
            for (std::int64_t tx = 0; tx < win; ++tx)
              dst[ty * W + tx] = wins[(b * Tk + ty * win + tx) * C + c];
        }
      }
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> window_partition(const TensorT<T>& x, std::int64_t win, std::int64_t shift, WindowPadInfo* info) {
  FSE_CHECK(x.rank() == 4, ShapeError, "window_partition: rank-4 only");
  FSE_CHECK(win >= 2, ConfigError, "window_partition: window size must be >= 2");
  FSE_CHECK(shift == 0 || shift == win / 2, ConfigError, "window_partition: shift must be 0 or w/2");
  const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::int64_t Hp = (H + win - 1) / win * win, Wp = (W + win - 1) / win * win;

  TensorT<T> padded = x;
  if (Hp != H || Wp != W) {
    // reflect-pad values without building a graph
    auto xv = make_leaf(x, false);
    padded = reflect_pad2d(xv, 0, Hp - H, 0, Wp - W)->value;
  }
  if (shift > 0) padded = roll2d_value(padded, -shift, -shift);
  if (info) *info = WindowPadInfo{N, C, H, W, Hp, Wp, win, shift};
  return detail::partition_windows(padded, win);
}

template <typename T>
TensorT<T> window_reverse(const TensorT<T>& wins, const WindowPadInfo& info) {
  TensorT<T> img = detail::departition_windows(wins, info.win, info.n, info.c, info.padded_h, info.padded_w);
  if (info.shift > 0) img = roll2d_value(img, info.shift, info.shift);
  if (info.padded_h != info.orig_h || info.padded_w != info.orig_w) {
    TensorT<T> out({info.n, info.c, info.orig_h, info.orig_w});
    for (std::int64_t nc = 0; nc < info.n * info.c; ++nc)
      for (std::int64_t y = 0; y < info.orig_h; ++y)
        std::memcpy(out.data() + (nc * info.orig_h + y) * info.orig_w,
                    img.data() + (nc * info.padded_h + y) * info.padded_w,
                    std::size_t(info.orig_w) * sizeof(T));
    return out;
  }
  return img;
}

// ---------------------------------------------------------------------------
// windowed multi-head self-attention with relative position bias
//
// Fused op: partitioning is a pure permutation here (caller pads/shifts), so
// its backward is the inverse permutation. QKV and attention probabilities
// are recomputed in backward instead of being stored.

inline std::vector<std::int32_t> relative_position_index(std::int64_t win) {
  const std::int64_t Tk = win * win, span = 2 * win - 1;
  std::vector<std::int32_t> idx(std::size_t(Tk * Tk));
  for (std::int64_t i = 0; i < Tk; ++i) {
    std::int64_t yi = i / win, xi = i % win;
    for (std::int64_t j = 0; j < Tk; ++j) {
      std::int64_t yj = j / win, xj = j % win;
      idx[std::size_t(i * Tk + j)] = std::int32_t((yi - yj + win - 1) * span + (xi - xj + win - 1));
    }
  }
  return idx;
}

namespace detail {

// scratch for one window; everything is [T, C] row-major
template <typename T>
struct AttnScratch {
  MatRM<T> qkv, probs, out, dqkv, dprobs, dscores;
};

// computes qkv and per-head softmax probabilities for window b
template <typename T>
void attention_window_forward(const T* xwin, std::int64_t Tk, std::int64_t C, std::int64_t heads,
                              const TensorT<T>& qkv_w, const TensorT<T>& qkv_b, const TensorT<T>& table,
                              const std::vector<std::int32_t>& idx, AttnScratch<T>& s) {
  const std::int64_t dh = C / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  CMapM<T> xm(xwin, Tk, C);
  CMapM<T> wm(qkv_w.data(), 3 * C, C);
  s.qkv.resize(Tk, 3 * C);
  s.qkv.noalias() = xm * wm.transpose();
  for (std::int64_t t = 0; t < Tk; ++t)
    for (std::int64_t j = 0; j < 3 * C; ++j) s.qkv(t, j) += qkv_b[j];

  s.probs.resize(heads * Tk, Tk);
  for (std::int64_t h = 0; h < heads; ++h) {
    auto Q = s.qkv.block(0, h * dh, Tk, dh);
    auto K = s.qkv.block(0, C + h * dh, Tk, dh);
    auto P = s.probs.block(h * Tk, 0, Tk, Tk);
    P.noalias() = Q * K.transpose();
    for (std::int64_t i = 0; i < Tk; ++i) {
      double mx = -1e300;
      for (std::int64_t j = 0; j < Tk; ++j) {
        double v = double(P(i, j)) * scale + double(table[idx[std::size_t(i * Tk + j)] * heads + h]);
        P(i, j) = T(v);
        mx = std::max(mx, v);
      }
      double z = 0;
      for (std::int64_t j = 0; j < Tk; ++j) z += std::exp(double(P(i, j)) - mx);
      for (std::int64_t j = 0; j < Tk; ++j) P(i, j) = T(std::exp(double(P(i, j)) - mx) / z);
    }
  }

  s.out.resize(Tk, C);
  for (std::int64_t h = 0; h < heads; ++h) {
    auto V = s.qkv.block(0, 2 * C + h * dh, Tk, dh);
    auto P = s.probs.block(h * Tk, 0, Tk, Tk);
    s.out.block(0, h * dh, Tk, dh).noalias() = P * V;
  }
}

}  // namespace detail

template <typename T>
VarT<T> window_mhsa(const VarT<T>& x, const VarT<T>& qkv_w, const VarT<T>& qkv_b, const VarT<T>& proj_w,
                    const VarT<T>& proj_b, const VarT<T>& bias_table, std::int64_t win, std::int64_t heads) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "window_mhsa: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
  FSE_CHECK(H % win == 0 && W % win == 0, ShapeError, "window_mhsa: spatial dims must be window multiples");
  FSE_CHECK(C % heads == 0, ConfigError, "window_mhsa: heads must divide channels");
  const std::int64_t span = 2 * win - 1;
  FSE_CHECK(bias_table->value.rank() == 2 && bias_table->value.size(0) == span * span &&
                bias_table->value.size(1) == heads,
            ShapeError, "window_mhsa: bias table must be [(2w-1)^2, heads]");
  const std::int64_t Tk = win * win, B = N * (H / win) * (W / win);
  auto idx = relative_position_index(win);

  TensorT<T> xwin = detail::partition_windows(x->value, win);
  TensorT<T> ywin({B, Tk, C});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t b = 0; b < B; ++b) {
    detail::AttnScratch<T> s;
    detail::attention_window_forward(xwin.data() + b * Tk * C, Tk, C, heads, qkv_w->value, qkv_b->value,
                                     bias_table->value, idx, s);
    CMapM<T> pw(proj_w->value.data(), C, C);
    MapM<T> ym(ywin.data() + b * Tk * C, Tk, C);
    ym.noalias() = s.out * pw.transpose();
    for (std::int64_t t = 0; t < Tk; ++t)
      for (std::int64_t c = 0; c < C; ++c) ym(t, c) += proj_b->value[c];
  }
  TensorT<T> y = detail::departition_windows(ywin, win, N, C, H, W);

  return make_node<T>(
      std::move(y), {x, qkv_w, qkv_b, proj_w, proj_b, bias_table},
      [x, qkv_w, qkv_b, proj_w, proj_b, bias_table, win, heads, idx](VariableT<T>& node) {
        const std::int64_t N = x->value.size(0), C = x->value.size(1), H = x->value.size(2), W = x->value.size(3);
        const std::int64_t Tk = win * win, B = N * (H / win) * (W / win), dh = C / heads;
        const T scale = T(1.0 / std::sqrt(double(dh)));

        TensorT<T> xwin = detail::partition_windows(x->value, win);
        TensorT<T> gwin = detail::partition_windows(node.grad, win);
        TensorT<T> dxwin({B, Tk, C});

        MatRM<T> dQKVW = MatRM<T>::Zero(3 * C, C);
        std::vector<T> dQKVb(std::size_t(3 * C), T(0));
        MatRM<T> dPW = MatRM<T>::Zero(C, C);
        std::vector<T> dPb(std::size_t(C), T(0));
        TensorT<T> dtable(bias_table->value.shape());

        detail::AttnScratch<T> s;
        for (std::int64_t b = 0; b < B; ++b) {
          detail::attention_window_forward(xwin.data() + b * Tk * C, Tk, C, heads, qkv_w->value, qkv_b->value,
                                           bias_table->value, idx, s);
          CMapM<T> gm(gwin.data() + b * Tk * C, Tk, C);
          if (proj_w->requires_grad) dPW.noalias() += gm.transpose() * s.out;
          if (proj_b->requires_grad)
            for (std::int64_t t = 0; t < Tk; ++t)
              for (std::int64_t c = 0; c < C; ++c) dPb[std::size_t(c)] += gm(t, c);
          CMapM<T> pw(proj_w->value.data(), C, C);
          MatRM<T> dout = gm * pw;  // [T, C]

          s.dqkv.setZero(Tk, 3 * C);
          for (std::int64_t h = 0; h < heads; ++h) {
            auto P = s.probs.block(h * Tk, 0, Tk, Tk);
            auto V = s.qkv.block(0, 2 * C + h * dh, Tk, dh);
            auto dOh = dout.block(0, h * dh, Tk, dh);
            s.dprobs.resize(Tk, Tk);
            s.dprobs.noalias() = dOh * V.transpose();
            s.dqkv.block(0, 2 * C + h * dh, Tk, dh).noalias() = P.transpose() * dOh;
            // softmax backward
            s.dscores.resize(Tk, Tk);
            for (std::int64_t i = 0; i < Tk; ++i) {
              double dot = 0;
              for (std::int64_t j = 0; j < Tk; ++j) dot += double(s.dprobs(i, j)) * double(P(i, j));
              for (std::int64_t j = 0; j < Tk; ++j)
                s.dscores(i, j) = P(i, j) * (s.dprobs(i, j) - T(dot));
            }
            if (bias_table->requires_grad)
              for (std::int64_t i = 0; i < Tk; ++i)
                for (std::int64_t j = 0; j < Tk; ++j)
                  dtable[idx[std::size_t(i * Tk + j)] * heads + h] += s.dscores(i, j);
            auto Q = s.qkv.block(0, h * dh, Tk, dh);
            auto K = s.qkv.block(0, C + h * dh, Tk, dh);
            s.dqkv.block(0, h * dh, Tk, dh).noalias() = (s.dscores * K) * scale;
            s.dqkv.block(0, C + h * dh, Tk, dh).noalias() = (s.dscores.transpose() * Q) * scale;
          }

          CMapM<T> xm(xwin.data() + b * Tk * C, Tk, C);
          if (qkv_w->requires_grad) dQKVW.noalias() += s.dqkv.transpose() * xm;
          if (qkv_b->requires_grad)
            for (std::int64_t t = 0; t < Tk; ++t)
              for (std::int64_t j = 0; j < 3 * C; ++j) dQKVb[std::size_t(j)] += s.dqkv(t, j);
          if (x->requires_grad) {
            CMapM<T> wm(qkv_w->value.data(), 3 * C, C);
            MapM<T> dxm(dxwin.data() + b * Tk * C, Tk, C);
            dxm.noalias() = s.dqkv * wm;
          }
        }

        if (x->requires_grad)
          accumulate(x->ensure_grad(), detail::departition_windows(dxwin, win, N, C, H, W));
        if (qkv_w->requires_grad) {
          auto& g = qkv_w->ensure_grad();
          for (std::int64_t i = 0; i < 3 * C; ++i)
            for (std::int64_t j = 0; j < C; ++j) g[i * C + j] += dQKVW(i, j);
        }
        if (qkv_b->requires_grad) {
          auto& g = qkv_b->ensure_grad();
          for (std::int64_t j = 0; j < 3 * C; ++j) g[j] += dQKVb[std::size_t(j)];
        }
        if (proj_w->requires_grad) {
          auto& g = proj_w->ensure_grad();
          for (std::int64_t i = 0; i < C; ++i)
            for (std::int64_t j = 0; j < C; ++j) g[i * C + j] += dPW(i, j);
        }
        if (proj_b->requires_grad) {
          auto& g = proj_b->ensure_grad();
          for (std::int64_t j = 0; j < C; ++j) g[j] += dPb[std::size_t(j)];
        }
        if (bias_table->requires_grad) accumulate(bias_table->ensure_grad(), dtable);
      });
}

// y[n,c,i] = x[n,c,i] / sqrt(sum_c x^2 + eps): unit-normalizes each feature
// vector across channels (the LPIPS convention).
template <typename T>
VarT<T> channel_l2_normalize(const VarT<T>& x, T eps = T(1e-10)) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "channel_l2_normalize: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), HW = x->value.size(2) * x->value.size(3);
  TensorT<T> out(x->value.shape());
  TensorT<T> inv_norm({N, 1, x->value.size(2), x->value.size(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* xb = x->value.data() + n * C * HW;
    T* ob = out.data() + n * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      double s = double(eps);
      for (std::int64_t c = 0; c < C; ++c) s += double(xb[c * HW + i]) * double(xb[c * HW + i]);
      double in = 1.0 / std::sqrt(s);
      inv_norm[n * HW + i] = T(in);
      for (std::int64_t c = 0; c < C; ++c) ob[c * HW + i] = T(double(xb[c * HW + i]) * in);
    }
  }
  return make_node<T>(std::move(out), {x}, [x, N, C, HW, inv_norm, eps](VariableT<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (std::int64_t b = 0; b < N; ++b) {
      const T* xb = x->value.data() + b * C * HW;
      const T* db = n.grad.data() + b * C * HW;
      T* gb = g.data() + b * C * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        double in = double(inv_norm[b * HW + i]);
        double dot = 0;
        for (std::int64_t c = 0; c < C; ++c) dot += double(db[c * HW + i]) * double(xb[c * HW + i]);
        for (std::int64_t c = 0; c < C; ++c)
          gb[c * HW + i] += T(in * double(db[c * HW + i]) - in * in * in * dot * double(xb[c * HW + i]));
      }
    }
  });
}

// Attention probabilities for diagnostics and tests; shares the forward
// score computation with window_mhsa. Returns [B, heads, T, T].
template <typename T>
TensorT<T> attention_probabilities(const TensorT<T>& x, const TensorT<T>& qkv_w, const TensorT<T>& qkv_b,
                                   const TensorT<T>& bias_table, std::int64_t win, std::int64_t heads) {
  FSE_CHECK(x.rank() == 4 && x.size(2) % win == 0 && x.size(3) % win == 0, ShapeError,
            "attention_probabilities: spatial dims must be window multiples");
  const std::int64_t C = x.size(1), Tk = win * win;
  const std::int64_t B = x.size(0) * (x.size(2) / win) * (x.size(3) / win);
  auto idx = relative_position_index(win);
  TensorT<T> xwin = detail::partition_windows(x, win);
  TensorT<T> probs({B, heads, Tk, Tk});
  detail::AttnScratch<T> s;
  for (std::int64_t b = 0; b < B; ++b) {
    detail::attention_window_forward(xwin.data() + b * Tk * C, Tk, C, heads, qkv_w, qkv_b, bias_table, idx, s);
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t i = 0; i < Tk; ++i)
        for (std::int64_t j = 0; j < Tk; ++j)
          probs[((b * heads + h) * Tk + i) * Tk + j] = s.probs(h * Tk + i, j);
  }
  return probs;
}

}  // namespace fse
