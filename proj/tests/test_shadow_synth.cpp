#include <catch2/catch_amalgamated.hpp>

#include "fse/image.hpp"
#include "fse/shadow_synth.hpp"
#include "test_support.hpp"

using namespace fse;
using namespace fse::testing;

TEST_CASE("sampled specs stay inside the documented ranges", "[synth]") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ShadowSpec s = sample_spec(seed, 64, 64);
    REQUIRE(s.opacity >= 0.15);
    REQUIRE(s.opacity <= 0.45);
    REQUIRE(s.flow >= 0.10);
    REQUIRE(s.flow <= 0.30);
    if (s.hardness == Hardness::kHard) {
      REQUIRE(s.feather_radius >= 5.0);
      REQUIRE(s.feather_radius <= 15.0);
    } else {
      REQUIRE(s.feather_radius >= 25.0);
      REQUIRE(s.feather_radius <= 50.0);
    }
    REQUIRE(s.pos_x >= 0.0);
    REQUIRE(s.pos_x < 1.0);
    REQUIRE_NOTHROW(s.validate());
  }
}

TEST_CASE("sample_spec is deterministic and validates size", "[synth]") {
  ShadowSpec a = sample_spec(42, 64, 48), b = sample_spec(42, 64, 48);
  REQUIRE(a.shape == b.shape);
  REQUIRE(a.opacity == b.opacity);
  REQUIRE(a.flow == b.flow);
  REQUIRE(a.feather_radius == b.feather_radius);
  REQUIRE(a.pos_x == b.pos_x);
  REQUIRE(a.pos_y == b.pos_y);
  REQUIRE_THROWS_AS(sample_spec(1, 16, 64), ConfigError);
}

TEST_CASE("gaussian blur matches a dense 2d oracle on an ellipse stencil", "[synth]") {
  // feather 5 -> sigma 5/3
  const double sigma = 5.0 / 3.0;
  TensorT<double> stencil({1, 1, 64, 64});
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x) {
      double dx = (double(x) - 30.0) / 12.0, dy = (double(y) - 28.0) / 9.0;
      if (dx * dx + dy * dy <= 1.0) stencil[y * 64 + x] = 1.0;
    }
  auto got = gaussian_blur(stencil, sigma);

  // dense truncated 2d kernel, normalized over the square support
  const std::int64_t R = std::int64_t(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t((2 * R + 1) * (2 * R + 1)));
  double ksum = 0;
  for (std::int64_t dy = -R; dy <= R; ++dy)
    for (std::int64_t dx = -R; dx <= R; ++dx) {
      double v = std::exp(-0.5 * double(dy * dy + dx * dx) / (sigma * sigma));
      k[std::size_t((dy + R) * (2 * R + 1) + dx + R)] = v;
      ksum += v;
    }
  double worst = 0;
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x) {
      double acc = 0;
      for (std::int64_t dy = -R; dy <= R; ++dy)
        for (std::int64_t dx = -R; dx <= R; ++dx) {
          std::int64_t sy = y + dy, sx = x + dx;
          if (sy < 0 || sy >= 64 || sx < 0 || sx >= 64) continue;
          acc += k[std::size_t((dy + R) * (2 * R + 1) + dx + R)] * stencil[sy * 64 + sx];
        }
      worst = std::max(worst, std::abs(acc / ksum - got[y * 64 + x]));
    }
  REQUIRE(worst < 1e-5);
}

TEST_CASE("rendered alpha respects the peak bound and support", "[synth]") {
  SECTION("max alpha never exceeds opacity") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      ShadowSpec s = sample_spec(seed, 64, 64);
      auto alpha = render_shadow_alpha<float>(s, 64, 64);
      REQUIRE(double(alpha.max_value()) <= s.opacity + 1e-6);
      REQUIRE(alpha.min_value() >= 0.0f);
      double peak = s.opacity * std::min(1.0, s.flow / 0.30 + 0.5);
      REQUIRE(double(alpha.max_value()) == Catch::Approx(peak).margin(1e-5));
    }
  }

  SECTION("a shape entirely outside the frame renders all-zero alpha") {
    ShadowSpec s = sample_spec(3, 64, 64);
    s.shape = ShadowShape::kEllipse;
    s.pos_x = 8.0;  // far outside
    s.pos_y = 8.0;
    auto alpha = render_shadow_alpha<float>(s, 64, 64);
    REQUIRE(alpha.max_value() == 0.0f);
  }

  SECTION("alpha is exactly zero outside the feathered support") {
    ShadowSpec s = sample_spec(4, 64, 64);
    s.shape = ShadowShape::kEllipse;
    s.hardness = Hardness::kHard;
    s.feather_radius = 5.0;
    s.pos_x = 0.2;
    s.pos_y = 0.2;
    auto alpha = render_shadow_alpha<float>(s, 64, 64);
    // far corner is beyond any feather reach
    REQUIRE(alpha.at4(0, 0, 63, 63) == 0.0f);
  }
}

TEST_CASE("occluder silhouettes are binary", "[synth]") {
  Rng rng(9);
  for (auto kind : {OccluderKind::kHair, OccluderKind::kHat, OccluderKind::kHand, OccluderKind::kBlinds}) {
    auto tpl = make_occluder_template<float>(kind, 48, 48, 24, 24, rng);
    bool any = false;
    for (std::int64_t i = 0; i < tpl.silhouette.numel(); ++i) {
      REQUIRE((tpl.silhouette[i] == 0.0f || tpl.silhouette[i] == 1.0f));
      any = any || tpl.silhouette[i] == 1.0f;
    }
    REQUIRE(any);
  }
}

TEST_CASE("composite darkens multiplicatively", "[synth]") {
  SECTION("zero alpha leaves the image bit-identical") {
    auto clean = random_tensor<float>({1, 3, 8, 8}, 11);
    auto out = composite_shadow(clean, TensorT<float>({1, 1, 8, 8}));
    REQUIRE(bitwise_equal(out, clean));
  }

  SECTION("alpha 0.45 on a white pixel gives 0.55") {
    TensorT<float> clean({1, 3, 2, 2}, 1.0f);
    TensorT<float> alpha({1, 1, 2, 2}, 0.45f);
    auto out = composite_shadow(clean, alpha);
    for (std::int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == Catch::Approx(0.55).margin(1e-7));
  }

  SECTION("random case matches the elementwise loop oracle") {
    auto clean = random_tensor<float>({1, 3, 16, 16}, 12);
    auto alpha = random_tensor<float>({1, 1, 16, 16}, 13, 0.0, 0.45);
    auto out = composite_shadow(clean, alpha);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 256; ++i)
        REQUIRE(std::abs(double(out[c * 256 + i]) - double(clean[c * 256 + i]) * (1.0 - double(alpha[i]))) <
                1e-7);
  }

  SECTION("shape mismatch is an error") {
    REQUIRE_THROWS_AS(composite_shadow(TensorT<float>({1, 3, 4, 4}), TensorT<float>({1, 1, 5, 5})),
                      ShapeError);
  }
}

TEST_CASE("micro shadows are bounded, local and deterministic", "[synth]") {
  auto img = random_tensor<float>({1, 3, 32, 32}, 21, 0.2, 1.0);

  SECTION("density zero is the identity") {
    REQUIRE(bitwise_equal(add_micro_shadows(img, 0.0, 5), img));
  }

  SECTION("every output pixel keeps at least 90% of its value") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto out = add_micro_shadows(img, 0.05, seed);
      for (std::int64_t i = 0; i < img.numel(); ++i) REQUIRE(out[i] >= 0.9f * img[i] - 1e-7f);
    }
  }

  SECTION("fixed seed repeats bitwise") {
    REQUIRE(bitwise_equal(add_micro_shadows(img, 0.03, 77), add_micro_shadows(img, 0.03, 77)));
  }

  SECTION("density outside [0, 0.05] is rejected") {
    REQUIRE_THROWS_AS(add_micro_shadows(img, 0.06, 1), ConfigError);
    REQUIRE_THROWS_AS(add_micro_shadows(img, -0.01, 1), ConfigError);
  }
}

TEST_CASE("synthesized pairs obey the darkening invariants", "[synth]") {
  auto clean = procedural_clean_image<float>(31, 64, 64);

  SECTION("degenerate spec gives shadow == target and an empty mask") {
    ShadowSpec s = sample_spec(5, 64, 64);
    s.shape = ShadowShape::kEllipse;
    s.pos_x = 9.0;
    s.pos_y = 9.0;
    auto pair = synthesize_pair(clean, s);
    REQUIRE(bitwise_equal(pair.shadow, pair.target));
    REQUIRE(pair.mask->max_value() == 0.0f);
  }

  SECTION("darkening, locality and range hold over many seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ShadowSpec s = sample_spec(seed, 64, 64);
      auto pair = synthesize_pair(clean, s);
      auto alpha = render_shadow_alpha<float>(s, 64, 64);
      for (std::int64_t i = 0; i < pair.shadow.numel(); ++i) {
        REQUIRE(pair.shadow[i] <= pair.target[i] + 1e-7f);
        REQUIRE(pair.shadow[i] >= 0.0f);
        REQUIRE(pair.shadow[i] <= 1.0f);
      }
      for (std::int64_t i = 0; i < alpha.numel(); ++i) {
        if (alpha[i] == 0.0f)
          for (std::int64_t c = 0; c < 3; ++c)
            REQUIRE(pair.shadow[c * 64 * 64 + i] == pair.target[c * 64 * 64 + i]);
      }
    }
  }

  SECTION("inside the shadow, luminance strictly drops") {
    ShadowSpec s = sample_spec(6, 64, 64);
    s.shape = ShadowShape::kEllipse;
    s.pos_x = 0.5;
    s.pos_y = 0.5;
    auto pair = synthesize_pair(clean, s);
    auto alpha = render_shadow_alpha<float>(s, 64, 64);
    auto ys = rgb_to_luminance(pair.shadow);
    auto yt = rgb_to_luminance(pair.target);
    std::int64_t peak_i = 0;
    for (std::int64_t i = 0; i < alpha.numel(); ++i)
      if (alpha[i] > alpha[peak_i]) peak_i = i;
    REQUIRE(alpha[peak_i] > 0.0f);
    REQUIRE(ys[peak_i] < yt[peak_i]);
  }

  SECTION("regeneration from (clean, seed) is bitwise stable") {
    ShadowSpec s = sample_spec(7, 64, 64);
    auto a = synthesize_pair(clean, s);
    auto b = synthesize_pair(clean, s);
    REQUIRE(bitwise_equal(a.shadow, b.shadow));
    REQUIRE(bitwise_equal(a.target, b.target));
    REQUIRE(bitwise_equal(*a.mask, *b.mask));
  }
}

TEST_CASE("shadow spec json sidecar roundtrips", "[synth]") {
  ShadowSpec s = sample_spec(123, 64, 64);
  nlohmann::json j = s;
  ShadowSpec back = j.get<ShadowSpec>();
  REQUIRE(back.shape == s.shape);
  REQUIRE(back.occluder == s.occluder);
  REQUIRE(back.opacity == s.opacity);
  REQUIRE(back.flow == s.flow);
  REQUIRE(back.hardness == s.hardness);
  REQUIRE(back.feather_radius == s.feather_radius);
  REQUIRE(back.seed == s.seed);

  nlohmann::json bad = j;
  bad["shape"] = "sphere";
  REQUIRE_THROWS_AS(bad.get<ShadowSpec>(), FormatError);
}

TEST_CASE("procedural clean images are in range and deterministic", "[synth]") {
  auto a = procedural_clean_image<float>(5, 48, 40);
  auto b = procedural_clean_image<float>(5, 48, 40);
  REQUIRE(bitwise_equal(a, b));
  REQUIRE(a.shape() == Shape{1, 3, 48, 40});
  REQUIRE(a.min_value() >= 0.0f);
  REQUIRE(a.max_value() <= 1.0f);
}
