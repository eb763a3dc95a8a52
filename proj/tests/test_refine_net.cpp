#include <catch2/catch_amalgamated.hpp>

#include "fse/refine_net.hpp"
#include "test_support.hpp"

using namespace fse;
using namespace fse::testing;

namespace {

RefineNetConfig small_cfg() {
  RefineNetConfig c;
  c.embed_dim = 8;
  c.window_size = 4;
  c.num_heads = 2;
  c.irc_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("refine config validation", "[refine]") {
  RefineNetConfig c = small_cfg();
  c.depth = 3;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  c.irc_blocks = 2;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  c.embed_dim = 9;  // heads must divide
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ahswa preserves shape including non-multiples of the window", "[refine]") {
  auto cfg = small_cfg();
  auto values = refine_init<float>(cfg, 1);
  auto params = make_param_vars(values, false);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{16, 16}, {10, 14}, {9, 9}, {8, 20}}) {
    auto x = make_leaf(random_tensor<float>({1, 3, h, w}, 2), false);
    auto out = ahswa_forward(params, x, cfg);
    REQUIRE(out->value.shape() == Shape{1, 3, h, w});
  }
}

TEST_CASE("zeroing either branch of the product restores R == C bitwise", "[refine]") {
  auto cfg = small_cfg();
  auto coarse = random_tensor<float>({2, 3, 12, 12}, 3);
  auto mask = random_tensor<float>({2, 1, 12, 12}, 4);

  SECTION("attention head zeroed") {
    auto values = refine_init<float>(cfg, 5);
    values.at("refine.head.weight").fill(0.0f);  // already zero at init; assert the contract
    values.at("refine.head.bias").fill(0.0f);
    auto out = refine_forward(values, coarse, mask, cfg);
    REQUIRE(bitwise_equal(out, coarse));
  }

  SECTION("irc projection zeroed") {
    auto values = refine_init<float>(cfg, 6);
    Rng rng(7);
    fill_uniform(values.at("refine.head.weight"), rng, -0.3, 0.3);  // make attention branch nonzero
    values.at("refine.irc.proj.weight").fill(0.0f);
    values.at("refine.irc.proj.bias").fill(0.0f);
    auto out = refine_forward(values, coarse, mask, cfg);
    REQUIRE(bitwise_equal(out, coarse));
  }
}

TEST_CASE("irc blocks start as the identity under the documented init", "[refine]") {
  auto cfg = small_cfg();
  auto values = refine_init<double>(cfg, 8);
  auto params = make_param_vars(values, false);
  auto coarse = make_leaf(random_tensor<double>({1, 3, 9, 9}, 9), false);
  auto mask = make_leaf(random_tensor<double>({1, 1, 9, 9}, 10), false);
  auto got = irc_forward(params, coarse, mask, cfg)->value;

  // with all three modulation blocks at identity, IRC is proj(lrelu(embed(C)))
  Conv2dSpec k3{1, 1, 1, 1}, k1{1, 0, 1, 1};
  auto f = conv2d_value(coarse->value, values.at("refine.irc.embed.weight"),
                        &values.at("refine.irc.embed.bias"), k3);
  for (std::int64_t i = 0; i < f.numel(); ++i)
    if (f[i] < 0) f[i] *= 0.2;
  auto want = conv2d_value(f, values.at("refine.irc.proj.weight"), &values.at("refine.irc.proj.bias"), k1);
  REQUIRE(bitwise_equal(got, want));
}

TEST_CASE("irc gamma-one beta-zero parameterization is also the identity", "[refine]") {
  auto cfg = small_cfg();
  auto values = refine_init<double>(cfg, 11);
  for (std::int64_t b = 1; b <= 3; ++b) {
    std::string base = "refine.irc.b" + std::to_string(b);
    values.at(base + ".gamma.c2.weight").fill(0.0);
    values.at(base + ".gamma.c2.bias").fill(1.0);  // gamma == 1
    values.at(base + ".wgamma").fill(1.0);         // W_gamma == 1
    values.at(base + ".beta.c2.weight").fill(0.0);
    values.at(base + ".beta.c2.bias").fill(0.0);   // beta == 0
  }
  auto params = make_param_vars(values, false);
  auto coarse = make_leaf(random_tensor<double>({1, 3, 8, 8}, 12), false);
  auto mask = make_leaf(random_tensor<double>({1, 1, 8, 8}, 13), false);
  auto got = irc_forward(params, coarse, mask, cfg)->value;

  Conv2dSpec k3{1, 1, 1, 1}, k1{1, 0, 1, 1};
  auto f = conv2d_value(coarse->value, values.at("refine.irc.embed.weight"),
                        &values.at("refine.irc.embed.bias"), k3);
  for (std::int64_t i = 0; i < f.numel(); ++i)
    if (f[i] < 0) f[i] *= 0.2;
  auto want = conv2d_value(f, values.at("refine.irc.proj.weight"), &values.at("refine.irc.proj.bias"), k1);
  REQUIRE(bitwise_equal(got, want));
}

TEST_CASE("one modulation block evaluates the scalar example", "[refine]") {
  // features = 2.0, gamma = 0.5, W_gamma = 2.0, beta = 0.25 -> 2.5
  auto cfg = small_cfg();
  auto values = refine_init<double>(cfg, 14);
  const std::int64_t Hd = cfg.irc_hidden;
  // features == 2 everywhere: zero embed weights, bias 2 (leaky keeps positives)
  values.at("refine.irc.embed.weight").fill(0.0);
  values.at("refine.irc.embed.bias").fill(2.0);
  // block 1: gamma == 0.5, wgamma == 2, beta == 0.25
  values.at("refine.irc.b1.gamma.c2.weight").fill(0.0);
  values.at("refine.irc.b1.gamma.c2.bias").fill(0.5);
  values.at("refine.irc.b1.wgamma").fill(2.0);
  values.at("refine.irc.b1.beta.c2.weight").fill(0.0);
  values.at("refine.irc.b1.beta.c2.bias").fill(0.25);
  // blocks 2, 3 stay identity (default init); projection picks channel 0
  values.at("refine.irc.proj.weight").fill(0.0);
  for (std::int64_t c = 0; c < 1; ++c) values.at("refine.irc.proj.weight")[c * Hd + 0] = 1.0;
  values.at("refine.irc.proj.bias").fill(0.0);

  auto params = make_param_vars(values, false);
  auto coarse = make_leaf(random_tensor<double>({1, 3, 6, 6}, 15), false);
  auto mask = make_leaf(random_tensor<double>({1, 1, 6, 6}, 16), false);
  auto out = irc_forward(params, coarse, mask, cfg)->value;
  for (std::int64_t i = 0; i < 36; ++i) REQUIRE(out[i] == 2.5);
}

TEST_CASE("pad/unpad path is exactly neutral on divisible inputs", "[refine]") {
  auto x = make_leaf(random_tensor<double>({1, 4, 16, 16}, 17), false);
  auto padded = reflect_pad2d(x, 0, 0, 0, 0);
  REQUIRE(bitwise_equal(padded->value, x->value));
  WindowPadInfo info;
  auto wins = window_partition(x->value, 4, 0, &info);
  REQUIRE(info.padded_h == 16);
  REQUIRE(bitwise_equal(window_reverse(wins, info), x->value));
}

TEST_CASE("refine parameter names follow the published scheme", "[refine]") {
  auto cfg = small_cfg();
  auto params = refine_init<float>(cfg, 1);
  for (const char* name :
       {"refine.embed.weight", "refine.s1.b1.qkv.weight", "refine.s1.b2.bias_table", "refine.s2.b1.dw.bias",
        "refine.s2.b2.ffn.fc1.weight", "refine.s1.b1.proj.bias", "refine.irc.b1.gamma.c1.weight",
        "refine.irc.b3.wgamma", "refine.irc.embed.weight", "refine.irc.proj.weight", "refine.head.weight"})
    REQUIRE(params.count(name) == 1);
  // bias table for scale 2 covers the doubled window
  const std::int64_t w2 = cfg.scale_window(2);
  REQUIRE(params.at("refine.s2.b1.bias_table").shape() ==
          Shape{(2 * w2 - 1) * (2 * w2 - 1), cfg.num_heads});
}

TEST_CASE("refine gradients match finite differences", "[refine]") {
  RefineNetConfig cfg = small_cfg();
  cfg.num_scales = 1;  // keep the 8x8 run quick; scale 2 reuses the same ops
  auto values = refine_init<double>(cfg, 21);
  Rng rng(22);
  fill_uniform(values.at("refine.head.weight"), rng, -0.2, 0.2);  // zero head would mute the branch
  auto params = make_param_vars(values, true);
  auto coarse = make_leaf(random_tensor<double>({1, 3, 8, 8}, 23), true);
  auto mask = make_leaf(random_tensor<double>({1, 1, 8, 8}, 24), true);

  auto leaves = collect_vars(params);
  leaves.push_back(coarse);
  leaves.push_back(mask);
  auto res = grad_check(leaves, [&] { return mean_all(refine_forward(params, coarse, mask, cfg)); }, 220, 25);
  INFO("failed " << res.failed << "/" << res.checked << " worst rel " << res.worst_rel);
  REQUIRE(res.pass_fraction() >= 0.99);
}
