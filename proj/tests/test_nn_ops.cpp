#include <catch2/catch_amalgamated.hpp>

#include "fse/nn_ops.hpp"
#include "test_support.hpp"

using namespace fse;
using namespace fse::testing;

namespace {

// brute-force convolution, independent of the im2col path
template <typename T>
TensorT<T> conv_oracle(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b, const Conv2dSpec& s) {
  const std::int64_t N = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
  const std::int64_t Cout = w.size(0), Cg = w.size(1), kh = w.size(2), kw = w.size(3);
  const std::int64_t Ho = conv_out_dim(H, kh, s.stride, s.pad, s.dilation);
  const std::int64_t Wo = conv_out_dim(W, kw, s.stride, s.pad, s.dilation);
  const std::int64_t Cog = Cout / s.groups;
  TensorT<T> out({N, Cout, Ho, Wo});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co) {
      const std::int64_t g = co / Cog;
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          double acc = b ? double((*b)[co]) : 0.0;
          for (std::int64_t c = 0; c < Cg; ++c)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                std::int64_t iy = oy * s.stride - s.pad + ky * s.dilation;
                std::int64_t ix = ox * s.stride - s.pad + kx * s.dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += double(x.at4(n, g * Cg + c, iy, ix)) * double(w[((co * Cg + c) * kh + ky) * kw + kx]);
              }
          out.at4(n, co, oy, ox) = T(acc);
        }
    }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the brute-force oracle", "[ops]") {
  struct Case {
    Shape x, w;
    Conv2dSpec s;
  };
  const Case cases[] = {
      {{2, 3, 8, 8}, {5, 3, 3, 3}, {1, 1, 1, 1}},
      {{1, 4, 9, 7}, {6, 4, 3, 3}, {1, 2, 2, 1}},   // dilation 2
      {{1, 4, 8, 8}, {4, 1, 3, 3}, {1, 1, 1, 4}},   // depthwise
      {{2, 3, 9, 9}, {8, 3, 3, 3}, {2, 1, 1, 1}},   // stride 2
      {{1, 2, 6, 6}, {3, 2, 1, 1}, {1, 0, 1, 1}},   // 1x1
  };
  int idx = 0;
  for (const auto& c : cases) {
    auto x = random_tensor<double>(c.x, 100 + idx, -1, 1);
    auto w = random_tensor<double>(c.w, 200 + idx, -1, 1);
    auto b = random_tensor<double>({c.w[0]}, 300 + idx, -1, 1);
    auto got = conv2d_value(x, w, &b, c.s);
    auto want = conv_oracle(x, w, &b, c.s);
    INFO("case " << idx);
    REQUIRE(got.shape() == want.shape());
    REQUIRE(max_abs_diff(got, want) < 1e-12);
    ++idx;
  }
}

TEST_CASE("conv2d gradients match finite differences", "[ops]") {
  auto x = make_leaf(random_tensor<double>({2, 3, 6, 6}, 1, -1, 1), true);
  auto w = make_leaf(random_tensor<double>({4, 3, 3, 3}, 2, -0.5, 0.5), true);
  auto b = make_leaf(random_tensor<double>({4}, 3, -0.5, 0.5), true);
  auto noise = constant(random_tensor<double>({2, 4, 6, 6}, 4, -1, 1));
  Conv2dSpec s{1, 1, 1, 1};
  auto res = grad_check({x, w, b}, [&] { return mean_all(mul(conv2d(x, w, b, s), noise)); }, 120, 5);
  INFO("failed " << res.failed << " worst rel " << res.worst_rel);
  REQUIRE(res.failed == 0);

  // dilated depthwise
  auto xd = make_leaf(random_tensor<double>({1, 4, 8, 8}, 6, -1, 1), true);
  auto wd = make_leaf(random_tensor<double>({4, 1, 3, 3}, 7, -1, 1), true);
  auto bd = make_leaf(random_tensor<double>({4}, 8, -1, 1), true);
  auto noised = constant(random_tensor<double>({1, 4, 8, 8}, 9, -1, 1));
  Conv2dSpec sd{1, 2, 2, 4};
  res = grad_check({xd, wd, bd}, [&] { return mean_all(mul(conv2d(xd, wd, bd, sd), noised)); }, 100, 10);
  REQUIRE(res.failed == 0);
}

TEST_CASE("conv2d rejects bad shapes", "[ops]") {
  auto x = random_tensor<double>({1, 3, 4, 4}, 1);
  auto w = random_tensor<double>({2, 4, 3, 3}, 2);
  REQUIRE_THROWS_AS(conv2d_value<double>(x, w, nullptr, Conv2dSpec{1, 1, 1, 1}), ShapeError);
}

TEST_CASE("dynamic_conv2d selection, convexity and oracle", "[ops]") {
  const std::int64_t K = 3;
  auto x = make_leaf(random_tensor<double>({2, 2, 5, 5}, 11, -1, 1), false);
  std::vector<TensorT<double>> kernels;
  for (std::int64_t k = 0; k < K; ++k) kernels.push_back(random_tensor<double>({4, 2, 3, 3}, 20 + k, -1, 1));
  TensorT<double> experts({K, 4, 2, 3, 3});
  for (std::int64_t k = 0; k < K; ++k)
    std::copy_n(kernels[std::size_t(k)].data(), kernels[0].numel(), experts.data() + k * kernels[0].numel());
  auto ev = make_leaf(experts, false);
  auto bias = make_leaf(TensorT<double>({4}), false);
  Conv2dSpec s{1, 1, 1, 1};

  SECTION("one-hot router selects a single expert exactly") {
    TensorT<double> rw({2, K});
    rw[0 * K + 1] = 1.0;  // sample 0 -> expert 1
    rw[1 * K + 2] = 1.0;  // sample 1 -> expert 2
    auto out = dynamic_conv2d(x, ev, make_leaf(rw), bias, s)->value;
    for (std::int64_t n = 0; n < 2; ++n) {
      TensorT<double> xn({1, 2, 5, 5});
      std::copy_n(x->value.data() + n * 50, 50, xn.data());
      auto want = conv2d_value<double>(xn, kernels[std::size_t(n + 1)], static_cast<const TensorT<double>*>(nullptr), s);
      TensorT<double> got({1, 4, 5, 5});
      std::copy_n(out.data() + n * got.numel(), got.numel(), got.data());
      REQUIRE(bitwise_equal(got, want));
    }
  }

  SECTION("uniform weights over identical experts equal one expert") {
    TensorT<double> same({K, 4, 2, 3, 3});
    for (std::int64_t k = 0; k < K; ++k)
      std::copy_n(kernels[0].data(), kernels[0].numel(), same.data() + k * kernels[0].numel());
    TensorT<double> rw({2, K}, 1.0 / double(K));
    auto got = dynamic_conv2d(x, make_leaf(same), make_leaf(rw), bias, s)->value;
    auto want = conv2d_value<double>(x->value, kernels[0], static_cast<const TensorT<double>*>(nullptr), s);
    REQUIRE(max_abs_diff(got, want) < 1e-6);
  }

  SECTION("random single-channel case matches the weighted-kernel loop") {
    auto x1 = make_leaf(random_tensor<double>({1, 1, 4, 4}, 31, -1, 1), false);
    std::vector<TensorT<double>> ks;
    TensorT<double> es({K, 1, 1, 3, 3});
    for (std::int64_t k = 0; k < K; ++k) {
      ks.push_back(random_tensor<double>({1, 1, 3, 3}, 40 + k, -1, 1));
      std::copy_n(ks.back().data(), 9, es.data() + k * 9);
    }
    TensorT<double> rw({1, K});
    rw[0] = 0.2; rw[1] = 0.3; rw[2] = 0.5;
    auto got = dynamic_conv2d(x1, make_leaf(es), make_leaf(rw), VarT<double>{}, s)->value;
    TensorT<double> mixed({1, 1, 3, 3});
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t i = 0; i < 9; ++i) mixed[i] += rw[k] * ks[std::size_t(k)][i];
    auto want = conv_oracle<double>(x1->value, mixed, nullptr, s);
    REQUIRE(max_abs_diff(got, want) < 1e-6);
  }

  SECTION("rows off the simplex are rejected") {
    TensorT<double> rw({2, K}, 0.5);
    REQUIRE_THROWS_AS(dynamic_conv2d(x, ev, make_leaf(rw), bias, s), NumericError);
  }

  SECTION("linear in the feature argument for fixed router weights") {
    TensorT<double> rw({1, K});
    rw[0] = 0.6; rw[1] = 0.1; rw[2] = 0.3;
    auto rvar = make_leaf(rw);
    auto xa = random_tensor<double>({1, 2, 5, 5}, 51, -1, 1);
    auto xb = random_tensor<double>({1, 2, 5, 5}, 52, -1, 1);
    const double a = 1.7, bco = -0.6;
    TensorT<double> xc({1, 2, 5, 5});
    for (std::int64_t i = 0; i < xc.numel(); ++i) xc[i] = a * xa[i] + bco * xb[i];
    auto f = [&](const TensorT<double>& t) {
      return dynamic_conv2d(make_leaf(t), ev, rvar, VarT<double>{}, s)->value;
    };
    auto fa = f(xa), fb = f(xb), fc = f(xc);
    double worst = 0;
    for (std::int64_t i = 0; i < fc.numel(); ++i)
      worst = std::max(worst, std::abs(fc[i] - (a * fa[i] + bco * fb[i])));
    REQUIRE(worst < 1e-5);
  }
}

TEST_CASE("dynamic_conv2d gradients", "[ops]") {
  const std::int64_t K = 2;
  auto x = make_leaf(random_tensor<double>({2, 2, 4, 4}, 61, -1, 1), true);
  auto ev = make_leaf(random_tensor<double>({K, 3, 2, 3, 3}, 62, -0.7, 0.7), true);
  auto bias = make_leaf(random_tensor<double>({3}, 63, -0.2, 0.2), true);
  // keep rows on the simplex through a softmax of free logits
  auto logits = make_leaf(random_tensor<double>({2, K}, 64, -0.5, 0.5), true);
  auto noise = constant(random_tensor<double>({2, 3, 4, 4}, 65, -1, 1));
  Conv2dSpec s{1, 1, 1, 1};
  auto res = grad_check(
      {x, ev, bias, logits},
      [&] { return mean_all(mul(dynamic_conv2d(x, ev, softmax_lastdim(logits), bias, s), noise)); }, 140, 66);
  INFO("failed " << res.failed << " worst rel " << res.worst_rel);
  REQUIRE(res.failed == 0);
}

TEST_CASE("linear matches a loop and differentiates", "[ops]") {
  auto x = make_leaf(random_tensor<double>({3, 4}, 71, -1, 1), true);
  auto w = make_leaf(random_tensor<double>({2, 4}, 72, -1, 1), true);
  auto b = make_leaf(random_tensor<double>({2}, 73, -1, 1), true);
  auto out = linear(x, w, b);
  for (std::int64_t m = 0; m < 3; ++m)
    for (std::int64_t o = 0; o < 2; ++o) {
      double acc = b->value[o];
      for (std::int64_t i = 0; i < 4; ++i) acc += x->value[m * 4 + i] * w->value[o * 4 + i];
      REQUIRE(out->value[m * 2 + o] == Catch::Approx(acc).margin(1e-12));
    }
  auto noise = constant(random_tensor<double>({3, 2}, 74, -1, 1));
  auto res = grad_check({x, w, b}, [&] { return mean_all(mul(linear(x, w, b), noise)); }, 40, 75);
  REQUIRE(res.failed == 0);
}

TEST_CASE("layer_norm_channel normalizes and differentiates", "[ops]") {
  auto x = make_leaf(random_tensor<double>({2, 5, 3, 3}, 81, -2, 2), true);
  auto y = layer_norm_channel(x);
  // per-position mean ~0 and variance ~1
  const std::int64_t C = 5, HW = 9;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < HW; ++i) {
      double mu = 0, var = 0;
      for (std::int64_t c = 0; c < C; ++c) mu += y->value[(n * C + c) * HW + i];
      mu /= double(C);
      for (std::int64_t c = 0; c < C; ++c) {
        double d = y->value[(n * C + c) * HW + i] - mu;
        var += d * d;
      }
      REQUIRE(std::abs(mu) < 1e-9);
      REQUIRE(var / double(C) == Catch::Approx(1.0).epsilon(1e-3));
    }
  auto noise = constant(random_tensor<double>({2, 5, 3, 3}, 82, -1, 1));
  auto res = grad_check({x}, [&] { return mean_all(mul(layer_norm_channel(x), noise)); }, 80, 83);
  REQUIRE(res.failed == 0);
}

TEST_CASE("channel_l2_normalize produces unit vectors and differentiates", "[ops]") {
  auto x = make_leaf(random_tensor<double>({1, 4, 3, 3}, 91, -2, 2), true);
  auto y = channel_l2_normalize(x);
  for (std::int64_t i = 0; i < 9; ++i) {
    double s = 0;
    for (std::int64_t c = 0; c < 4; ++c) s += y->value[c * 9 + i] * y->value[c * 9 + i];
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-6));
  }
  auto noise = constant(random_tensor<double>({1, 4, 3, 3}, 92, -1, 1));
  auto res = grad_check({x}, [&] { return mean_all(mul(channel_l2_normalize(x), noise)); }, 60, 93);
  REQUIRE(res.failed == 0);
}

TEST_CASE("reflect pad, crop and roll invert and differentiate", "[ops]") {
  auto x = make_leaf(random_tensor<double>({1, 2, 5, 6}, 101, -1, 1), true);
  auto padded = reflect_pad2d(x, 0, 3, 0, 2);
  REQUIRE(padded->value.shape() == Shape{1, 2, 8, 8});
  auto back = crop2d(padded, 0, 0, 5, 6);
  REQUIRE(bitwise_equal(back->value, x->value));

  auto rolled = roll2d(x, 2, 3);
  auto unrolled = roll2d(rolled, -2, -3);
  REQUIRE(bitwise_equal(unrolled->value, x->value));

  auto noise = constant(random_tensor<double>({1, 2, 8, 8}, 102, -1, 1));
  auto res = grad_check({x}, [&] { return mean_all(mul(reflect_pad2d(x, 0, 3, 0, 2), noise)); }, 50, 103);
  REQUIRE(res.failed == 0);
  auto noise2 = constant(random_tensor<double>({1, 2, 5, 6}, 104, -1, 1));
  res = grad_check({x}, [&] { return mean_all(mul(roll2d(x, 2, 3), noise2)); }, 40, 105);
  REQUIRE(res.failed == 0);
}

TEST_CASE("window partition counting and roundtrips", "[ops]") {
  SECTION("8x8 with window 4 gives 4 windows of 16 tokens") {
    auto x = random_tensor<float>({1, 3, 8, 8}, 111);
    WindowPadInfo info;
    auto wins = window_partition(x, 4, 0, &info);
    REQUIRE(wins.shape() == Shape{4, 16, 3});
    REQUIRE(bitwise_equal(window_reverse(wins, info), x));
  }

  SECTION("roundtrip is bitwise for shifts 0 and w/2 on assorted shapes") {
    const std::int64_t shapes[][2] = {{8, 8}, {9, 7}, {12, 10}, {16, 5}, {6, 6}, {11, 13}, {7, 16}};
    int seed = 0;
    for (auto [h, w] : shapes) {
      for (std::int64_t shift : {std::int64_t(0), std::int64_t(2)}) {
        auto x = random_tensor<float>({2, 3, h, w}, 120 + seed++);
        WindowPadInfo info;
        auto wins = window_partition(x, 4, shift, &info);
        REQUIRE(bitwise_equal(window_reverse(wins, info), x));
      }
    }
  }

  SECTION("invalid shift is rejected") {
    auto x = random_tensor<float>({1, 1, 8, 8}, 130);
    REQUIRE_THROWS_AS(window_partition(x, 4, 1, nullptr), ConfigError);
  }
}

TEST_CASE("relative position index is swap-symmetric", "[ops]") {
  const std::int64_t w = 4, Tk = w * w, span = 2 * w - 1;
  auto idx = relative_position_index(w);
  auto mirror = [&](std::int32_t v) {
    std::int64_t dy = v / span - (w - 1), dx = v % span - (w - 1);
    return std::int32_t((-dy + w - 1) * span + (-dx + w - 1));
  };
  for (std::int64_t i = 0; i < Tk; ++i)
    for (std::int64_t j = 0; j < Tk; ++j) {
      REQUIRE(idx[std::size_t(i * Tk + j)] >= 0);
      REQUIRE(idx[std::size_t(i * Tk + j)] < span * span);
      REQUIRE(idx[std::size_t(i * Tk + j)] == mirror(idx[std::size_t(j * Tk + i)]));
    }
}

namespace {

struct AttnParams {
  VarT<double> qkv_w, qkv_b, proj_w, proj_b, table;
};

AttnParams random_attn_params(std::int64_t C, std::int64_t win, std::int64_t heads, std::uint64_t seed,
                              bool requires_grad) {
  AttnParams p;
  p.qkv_w = make_leaf(random_tensor<double>({3 * C, C}, seed, -0.5, 0.5), requires_grad);
  p.qkv_b = make_leaf(random_tensor<double>({3 * C}, seed + 1, -0.2, 0.2), requires_grad);
  p.proj_w = make_leaf(random_tensor<double>({C, C}, seed + 2, -0.5, 0.5), requires_grad);
  p.proj_b = make_leaf(random_tensor<double>({C}, seed + 3, -0.2, 0.2), requires_grad);
  p.table = make_leaf(random_tensor<double>({(2 * win - 1) * (2 * win - 1), heads}, seed + 4, -0.3, 0.3),
                      requires_grad);
  return p;
}

}  // namespace

TEST_CASE("attention with zero query/key and zero bias averages each window", "[ops]") {
  const std::int64_t C = 4, win = 4, heads = 2;
  auto x = make_leaf(random_tensor<double>({1, C, 8, 8}, 141, -1, 1), false);
  AttnParams p = random_attn_params(C, win, heads, 150, false);
  // zero q/k rows; v block = identity; identity projection
  p.qkv_w->value.fill(0.0);
  for (std::int64_t c = 0; c < C; ++c) p.qkv_w->value[(2 * C + c) * C + c] = 1.0;
  p.qkv_b->value.fill(0.0);
  p.proj_w->value.fill(0.0);
  for (std::int64_t c = 0; c < C; ++c) p.proj_w->value[c * C + c] = 1.0;
  p.proj_b->value.fill(0.0);
  p.table->value.fill(0.0);

  auto y = window_mhsa(x, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.table, win, heads)->value;
  WindowPadInfo info;
  auto wins = window_partition(x->value, win, 0, &info);
  const std::int64_t Tk = win * win;
  for (std::int64_t b = 0; b < wins.size(0); ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      double mean = 0;
      for (std::int64_t t = 0; t < Tk; ++t) mean += wins[(b * Tk + t) * C + c];
      mean /= double(Tk);
      for (std::int64_t t = 0; t < Tk; ++t) {
        // y is in image layout; check via partition of y
        auto ywins = window_partition(y, win, 0, nullptr);
        REQUIRE(ywins[(b * Tk + t) * C + c] == Catch::Approx(mean).margin(1e-9));
        break;  // one token per (b,c) is enough; values are constant per window
      }
    }
}

TEST_CASE("attention probability rows form a simplex", "[ops]") {
  const std::int64_t C = 6, win = 4, heads = 2, Tk = win * win;
  auto x = random_tensor<double>({1, C, 4, 4}, 161, -1, 1);  // single window
  AttnParams p = random_attn_params(C, win, heads, 170, false);
  auto probs = attention_probabilities(x, p.qkv_w->value, p.qkv_b->value, p.table->value, win, heads);
  REQUIRE(probs.shape() == Shape{1, heads, Tk, Tk});
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < Tk; ++i) {
      double row = 0;
      for (std::int64_t j = 0; j < Tk; ++j) {
        double v = probs[((h * Tk) + i) * Tk + j];
        REQUIRE(v >= 0.0);
        row += v;
      }
      REQUIRE(std::abs(row - 1.0) < 1e-6);
    }
}

TEST_CASE("window attention is equivariant to full-window translation", "[ops]") {
  const std::int64_t C = 4, win = 4, heads = 2;
  auto x = random_tensor<double>({1, C, 8, 12}, 181, -1, 1);
  AttnParams p = random_attn_params(C, win, heads, 190, false);
  auto apply = [&](const TensorT<double>& img) {
    return window_mhsa(make_leaf(img), p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.table, win, heads)->value;
  };
  auto moved = roll2d_value(x, win, win);
  REQUIRE(bitwise_equal(apply(moved), roll2d_value(apply(x), win, win)));
}

TEST_CASE("window attention gradients match finite differences", "[ops]") {
  const std::int64_t C = 4, win = 2, heads = 2;
  auto x = make_leaf(random_tensor<double>({1, C, 4, 4}, 201, -1, 1), true);
  AttnParams p = random_attn_params(C, win, heads, 210, true);
  auto noise = constant(random_tensor<double>({1, C, 4, 4}, 220, -1, 1));
  auto res = grad_check(
      {x, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.table},
      [&] {
        return mean_all(mul(window_mhsa(x, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.table, win, heads), noise));
      },
      200, 230);
  INFO("failed " << res.failed << " worst rel " << res.worst_rel);
  REQUIRE(res.failed == 0);
}
