#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fse/tensor.hpp"

namespace fse {

// Reverse-mode tape. Each op returns a node holding its value, the parent
// nodes, and a closure that pushes the node's gradient into the parents.
// Graphs are built implicitly by calling ops and freed when the root dies.

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename T>
struct VariableT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<VariableT<T>>> parents;
  std::function<void(VariableT<T>&)> backward_fn;

  TensorT<T>& ensure_grad() {
    if (grad.numel() != value.numel()) grad = TensorT<T>(value.shape());
    return grad;
  }
};

template <typename T>
using VarT = std::shared_ptr<VariableT<T>>;

template <typename T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
  auto v = std::make_shared<VariableT<T>>();
  v->value = std::move(value);
  v->requires_grad = requires_grad;
  return v;
}

template <typename T>
VarT<T> constant(TensorT<T> value) {
  return make_leaf(std::move(value), false);
}

template <typename T>
VarT<T> make_node(TensorT<T> value, std::vector<VarT<T>> parents,
                  std::function<void(VariableT<T>&)> backward_fn) {
  auto v = std::make_shared<VariableT<T>>();
  v->value = std::move(value);
  bool need = false;
  if (g_grad_enabled)
    for (const auto& p : parents) need = need || p->requires_grad;
  if (need) {
    v->requires_grad = true;
    v->parents = std::move(parents);
    v->backward_fn = std::move(backward_fn);
  }
  return v;
}

template <typename T>
void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// Runs reverse-mode accumulation from a scalar root. Leaf gradients are
// accumulated, so callers clear them between steps.
template <typename T>
void backward(const VarT<T>& root) {
  FSE_CHECK(root->value.numel() == 1, ShapeError, "backward: root must be scalar");
  if (!root->requires_grad) return;

  // iterative topological order (children before parents after reversal)
  std::vector<VariableT<T>*> order;
  std::unordered_set<VariableT<T>*> seen;
  std::vector<std::pair<VariableT<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      VariableT<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VariableT<T>* node = *it;
    if (node->backward_fn && node->grad.numel() == node->value.numel()) node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  check_same_shape(a->value, b->value, "add");
  TensorT<T> out = a->value;
  accumulate(out, b->value);
  return make_node<T>(std::move(out), {a, b}, [a, b](VariableT<T>& n) {
    if (a->requires_grad) accumulate(a->ensure_grad(), n.grad);
    if (b->requires_grad) accumulate(b->ensure_grad(), n.grad);
  });
}

template <typename T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
  check_same_shape(a->value, b->value, "sub");
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](VariableT<T>& n) {
    if (a->requires_grad) accumulate(a->ensure_grad(), n.grad);
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  check_same_shape(a->value, b->value, "mul");
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](VariableT<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->value[i];
    }
  });
}

template <typename T>
VarT<T> div(const VarT<T>& a, const VarT<T>& b) {
  check_same_shape(a->value, b->value, "div");
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](VariableT<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        T bv = b->value[i];
        g[i] -= n.grad[i] * a->value[i] / (bv * bv);
      }
    }
  });
}

template <typename T>
VarT<T> add_scalar(const VarT<T>& a, T s) {
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_node<T>(std::move(out), {a}, [a](VariableT<T>& n) {
    if (a->requires_grad) accumulate(a->ensure_grad(), n.grad);
  });
}

template <typename T>
VarT<T> mul_scalar(const VarT<T>& a, T s) {
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_node<T>(std::move(out), {a}, [a, s](VariableT<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
    }
  });
}

template <typename T>
VarT<T> leaky_relu(const VarT<T>& a, T slope = T(0.2)) {
  TensorT<T> out = a->value;
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < T(0)) out[i] *= slope;
  return make_node<T>(std::move(out), {a}, [a, slope](VariableT<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * (a->value[i] < T(0) ? slope : T(1));
  });
}

template <typename T>
VarT<T> sigmoid(const VarT<T>& a) {
  TensorT<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  auto node = make_node<T>(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    VariableT<T>* raw = node.get();
    node->backward_fn = [a, raw](VariableT<T>& n) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        T y = raw->value[i];
        g[i] += n.grad[i] * y * (T(1) - y);
      }
    };
  }
  return node;
}

template <typename T>
VarT<T> gelu(const VarT<T>& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  TensorT<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    double x = double(a->value[i]);
    out[i] = T(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  return make_node<T>(std::move(out), {a}, [a](VariableT<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      double x = double(a->value[i]);
      double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += n.grad[i] * T(d);
    }
  });
}

// log(max(x, floor)); gradient passes only where unclamped
template <typename T>
VarT<T> log_clamped(const VarT<T>& a, T floor) {
  TensorT<T> out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(a->value[i], floor));
  return make_node<T>(std::move(out), {a}, [a, floor](VariableT<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (a->value[i] > floor) g[i] += n.grad[i] / a->value[i];
  });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts

template <typename T>
VarT<T> sum_all(const VarT<T>& a) {
  double acc = 0;
  for (std::int64_t i = 0; i < a->value.numel(); ++i) acc += double(a->value[i]);
  return make_node<T>(TensorT<T>::scalar(T(acc)), {a}, [a](VariableT<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    T s = n.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

template <typename T>
VarT<T> mean_all(const VarT<T>& a) {
  const std::int64_t count = a->value.numel();
  FSE_CHECK(count > 0, ShapeError, "mean of empty tensor");
  double acc = 0;
  for (std::int64_t i = 0; i < count; ++i) acc += double(a->value[i]);
  return make_node<T>(TensorT<T>::scalar(T(acc / double(count))), {a}, [a, count](VariableT<T>& n) {
    if (!a->requires_grad) return;
    auto& g = a->ensure_grad();
    T s = n.grad[0] / T(count);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

// x:[N,C,H,W] scaled per channel by w:[C]
template <typename T>
VarT<T> scale_channels(const VarT<T>& x, const VarT<T>& w) {
  FSE_CHECK(x->value.rank() == 4 && w->value.rank() == 1 && w->value.size(0) == x->value.size(1),
            ShapeError, "scale_channels: want [N,C,H,W] and [C]");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), HW = x->value.size(2) * x->value.size(3);
  TensorT<T> out = x->value;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      T s = w->value[c];
      T* p = out.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) p[i] *= s;
    }
  return make_node<T>(std::move(out), {x, w}, [x, w, N, C, HW](VariableT<T>& n) {
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (std::int64_t b = 0; b < N; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          T s = w->value[c];
          T* gp = g.data() + (b * C + c) * HW;
          const T* np = n.grad.data() + (b * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i) gp[i] += np[i] * s;
        }
    }
    if (w->requires_grad) {
      auto& g = w->ensure_grad();
      for (std::int64_t b = 0; b < N; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* xp = x->value.data() + (b * C + c) * HW;
          const T* np = n.grad.data() + (b * C + c) * HW;
          double acc = 0;
          for (std::int64_t i = 0; i < HW; ++i) acc += double(np[i]) * double(xp[i]);
          g[c] += T(acc);
        }
    }
  });
}

template <typename T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
  FSE_CHECK(a->value.rank() == 4 && b->value.rank() == 4, ShapeError, "concat_channels: rank-4 only");
  FSE_CHECK(a->value.size(0) == b->value.size(0) && a->value.size(2) == b->value.size(2) &&
                a->value.size(3) == b->value.size(3),
            ShapeError, "concat_channels: " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
  const std::int64_t N = a->value.size(0), Ca = a->value.size(1), Cb = b->value.size(1);
  const std::int64_t HW = a->value.size(2) * a->value.size(3);
  TensorT<T> out({N, Ca + Cb, a->value.size(2), a->value.size(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * (Ca + Cb) * HW, a->value.data() + n * Ca * HW, std::size_t(Ca * HW) * sizeof(T));
    std::memcpy(out.data() + (n * (Ca + Cb) + Ca) * HW, b->value.data() + n * Cb * HW,
                std::size_t(Cb * HW) * sizeof(T));
  }
  return make_node<T>(std::move(out), {a, b}, [a, b, N, Ca, Cb, HW](VariableT<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < N; ++i) {
        const T* src = n.grad.data() + i * (Ca + Cb) * HW;
        T* dst = g.data() + i * Ca * HW;
        for (std::int64_t j = 0; j < Ca * HW; ++j) dst[j] += src[j];
      }
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::int64_t i = 0; i < N; ++i) {
        const T* src = n.grad.data() + (i * (Ca + Cb) + Ca) * HW;
        T* dst = g.data() + i * Cb * HW;
        for (std::int64_t j = 0; j < Cb * HW; ++j) dst[j] += src[j];
      }
    }
  });
}

// [N,C,H,W] -> [N,C], mean over spatial positions
template <typename T>
VarT<T> global_avg_pool(const VarT<T>& x) {
  FSE_CHECK(x->value.rank() == 4, ShapeError, "global_avg_pool: rank-4 only");
  const std::int64_t N = x->value.size(0), C = x->value.size(1), HW = x->value.size(2) * x->value.size(3);
  TensorT<T> out({N, C});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x->value.data() + (n * C + c) * HW;
      double acc = 0;
      for (std::int64_t i = 0; i < HW; ++i) acc += double(p[i]);
      out[n * C + c] = T(acc / double(HW));
    }
  return make_node<T>(std::move(out), {x}, [x, N, C, HW](VariableT<T>& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (std::int64_t b = 0; b < N; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        T s = n.grad[b * C + c] / T(HW);
        T* gp = g.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) gp[i] += s;
      }
  });
}

// softmax over the last dimension of any rank; accumulation in double so a
// row of equal logits yields exactly uniform weights
template <typename T>
VarT<T> softmax_lastdim(const VarT<T>& x) {
  FSE_CHECK(x->value.rank() >= 1, ShapeError, "softmax: rank >= 1");
  const std::int64_t K = x->value.size(x->value.rank() - 1);
  const std::int64_t rows = x->value.numel() / K;
  TensorT<T> out(x->value.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x->value.data() + r * K;
    T* o = out.data() + r * K;
    double mx = double(in[0]);
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, double(in[k]));
    double z = 0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(double(in[k]) - mx);
    for (std::int64_t k = 0; k < K; ++k) o[k] = T(std::exp(double(in[k]) - mx) / z);
  }
  auto node = make_node<T>(std::move(out), {x}, nullptr);
  if (node->requires_grad) {
    VariableT<T>* raw = node.get();
    node->backward_fn = [x, raw, K, rows](VariableT<T>& n) {
      auto& g = x->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = raw->value.data() + r * K;
        const T* dy = n.grad.data() + r * K;
        T* gx = g.data() + r * K;
        double dot = 0;
        for (std::int64_t k = 0; k < K; ++k) dot += double(dy[k]) * double(y[k]);
        for (std::int64_t k = 0; k < K; ++k) gx[k] += y[k] * (dy[k] - T(dot));
      }
    };
  }
  return node;
}

}  // namespace fse
