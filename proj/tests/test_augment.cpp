#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mtlfer/augment.hpp"
#include "mtlfer/errors.hpp"
#include "mtlfer/losses.hpp"
#include "test_util.hpp"

using namespace mtlfer;
using namespace mtlfer::testing;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Image img(c, h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

// Every pixel holds a distinct value that encodes its (c, y, x).
Image coordinate_coded(std::size_t c, std::size_t h, std::size_t w) {
  Image img(c, h, w);
  const double denom = static_cast<double>(c * h * w + 1);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>((i + 1) / denom);
  return img;
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.pixels.begin(), img.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

Sample sample_with(Image img) {
  Sample s;
  s.image = std::move(img);
  s.expression = 2;
  return s;
}

}  // namespace

TEST_SUITE("color jitter") {
  TEST_CASE("zero range is the identity") {
    AugmentConfig cfg;
    cfg.jitter_range = 0.0;
    Rng rng(1);
    const Image img = random_image(3, 8, 8, rng);
    CHECK(color_jitter(img, cfg, rng) == img);
  }

  TEST_CASE("output stays in [0,1] over 10^4 draws") {
    AugmentConfig cfg;
    cfg.jitter_range = 0.9;
    Rng rng(2);
    const Image img = random_image(3, 6, 6, rng);
    Image extremes(1, 1, 2);
    extremes.pixels = {0.0f, 1.0f};
    bool ok = true;
    for (int i = 0; i < 10000; ++i) {
      ok = ok && in_unit_range(color_jitter(img, cfg, rng));
      ok = ok && in_unit_range(color_jitter(extremes, cfg, rng));
    }
    CHECK(ok);
  }

  TEST_CASE("matches the affine formula for the drawn factors") {
    AugmentConfig cfg;
    cfg.jitter_range = 0.3;
    Rng rng(3);
    const Image img = random_image(3, 5, 7, rng);
    Rng a(99), b(99);
    const Image out = color_jitter(img, cfg, a);
    const double brightness = b.uniform(0.7, 1.3);
    const double contrast = b.uniform(0.7, 1.3);
    const double mean = std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / img.size();
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double want = std::clamp(contrast * (img.pixels[i] - mean) + mean * brightness, 0.0, 1.0);
      REQUIRE(std::abs(out.pixels[i] - want) < 1e-6);
    }
  }

  TEST_CASE("same seed, same output") {
    AugmentConfig cfg;
    Rng src(4);
    const Image img = random_image(3, 8, 8, src);
    Rng a(5), b(5);
    CHECK(color_jitter(img, cfg, a) == color_jitter(img, cfg, b));
  }
}

TEST_SUITE("flip") {
  TEST_CASE("involution") {
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
      const Image img = random_image(3, 1 + rng.below(9), 1 + rng.below(9), rng);
      CHECK(horizontal_flip(horizontal_flip(img)) == img);
    }
  }

  TEST_CASE("width one is unchanged") {
    Rng rng(7);
    const Image img = random_image(3, 5, 1, rng);
    CHECK(horizontal_flip(img) == img);
  }

  TEST_CASE("index mapping on a coordinate-coded image") {
    const Image img = coordinate_coded(3, 4, 7);
    const Image out = horizontal_flip(img);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 7; ++x) REQUIRE(out.at(c, y, 6 - x) == img.at(c, y, x));
  }
}

TEST_SUITE("random erase") {
  TEST_CASE("probability zero is the identity") {
    AugmentConfig cfg;
    cfg.erase_prob = 0.0;
    Rng rng(8);
    const Image img = random_image(3, 16, 16, rng);
    for (int i = 0; i < 100; ++i) REQUIRE(random_erase(img, cfg, rng) == img);
  }

  TEST_CASE("changed region matches the configured bounds over 10^3 draws") {
    AugmentConfig cfg;
    cfg.erase_prob = 1.0;
    const std::size_t H = 32, W = 32;
    const Image img(3, H, W, 0.5f);
    Rng rng(9);
    int erased = 0;
    for (int draw = 0; draw < 1000; ++draw) {
      const Image out = random_erase(img, cfg, rng);
      REQUIRE(in_unit_range(out));
      std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0, changed = 0;
      std::vector<bool> hit(H * W, false);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x)
            if (out.at(c, y, x) != img.at(c, y, x)) hit[y * W + x] = true;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (hit[y * W + x]) {
            ++changed;
            y0 = std::min(y0, y), y1 = std::max(y1, y);
            x0 = std::min(x0, x), x1 = std::max(x1, x);
          }
      if (changed == 0) continue;
      ++erased;
      const std::size_t h = y1 - y0 + 1, w = x1 - x0 + 1;
      // every changed pixel lies in one rectangle, and the rectangle is filled
      REQUIRE(changed == h * w);
      const double frac = static_cast<double>(h * w) / (H * W);
      REQUIRE(frac >= cfg.erase_area[0]);
      REQUIRE(frac <= cfg.erase_area[1]);
      const double aspect = static_cast<double>(h) / static_cast<double>(w);
      REQUIRE(aspect >= cfg.erase_aspect[0]);
      REQUIRE(aspect <= cfg.erase_aspect[1]);
    }
    CHECK(erased > 950);
  }

  TEST_CASE("pixels outside the rectangle are untouched") {
    AugmentConfig cfg;
    Rng rng(10);
    const Image img = random_image(3, 20, 24, rng);
    for (int i = 0; i < 200; ++i) {
      const auto rect = sample_erase_rect(20, 24, cfg, rng);
      if (!rect) continue;
      const Image out = erase_rect(img, *rect, rng);
      REQUIRE(in_unit_range(out));
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 20; ++y)
          for (std::size_t x = 0; x < 24; ++x) {
            const bool inside = y >= rect->y && y < rect->y + rect->h && x >= rect->x && x < rect->x + rect->w;
            if (!inside) REQUIRE(out.at(c, y, x) == img.at(c, y, x));
          }
    }
  }

  TEST_CASE("unsatisfiable bounds fall back to the identity") {
    AugmentConfig cfg;
    cfg.erase_prob = 1.0;
    Rng rng(11);
    const Image tiny = random_image(3, 2, 2, rng);
    for (int i = 0; i < 50; ++i) REQUIRE(random_erase(tiny, cfg, rng) == tiny);
  }
}

TEST_SUITE("mix augment") {
  TEST_CASE("lambda one reproduces batch a") {
    Rng rng(12);
    std::vector<Image> a{random_image(3, 4, 4, rng), random_image(3, 4, 4, rng)};
    std::vector<Image> b{random_image(3, 4, 4, rng), random_image(3, 4, 4, rng)};
    TargetBatch ta{one_hot(0), one_hot(3)}, tb{one_hot(5), one_hot(1)};
    const auto mb = mix_with_lambda(a, b, ta, tb, 1.0);
    CHECK(mb.images == a);
    CHECK(mb.mixed_targets() == ta);
  }

  TEST_CASE("half-half of 0.2 and 0.6 is 0.4") {
    std::vector<Image> a{Image(1, 2, 2, 0.2f)}, b{Image(1, 2, 2, 0.6f)};
    const auto mb = mix_with_lambda(a, b, {one_hot(0)}, {one_hot(1)}, 0.5);
    for (float v : mb.images[0].pixels) CHECK(v == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(mb.mixed_targets()[0][0] == 0.5);
    CHECK(mb.mixed_targets()[0][1] == 0.5);
  }

  TEST_CASE("sampled lambda lies in [0,1] and images stay in range") {
    Rng rng(13);
    std::vector<Image> a{random_image(3, 4, 4, rng)}, b{random_image(3, 4, 4, rng)};
    for (int i = 0; i < 500; ++i) {
      const auto mb = mix_augment(a, b, {one_hot(1)}, {one_hot(2)}, 0.2, rng);
      REQUIRE((mb.lambda >= 0.0 && mb.lambda <= 1.0));
      REQUIRE(in_unit_range(mb.images[0]));
      for (std::size_t k = 0; k < mb.images[0].size(); ++k) {
        const double want = mb.lambda * a[0].pixels[k] + (1 - mb.lambda) * b[0].pixels[k];
        REQUIRE(std::abs(mb.images[0].pixels[k] - want) < 1e-6);
      }
    }
  }

  TEST_CASE("cross-entropy against the mixed target is the lambda-weighted endpoint sum") {
    Rng rng(14);
    const ClassWeights w = ClassWeights::normalized({1.0, 0.5, 2.0, 1.0, 1.5, 0.8});
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Image> a{Image(1, 1, 1)}, b{Image(1, 1, 1)};
      TargetBatch ta{one_hot(rng.below(6))}, tb{one_hot(rng.below(6))};
      const auto mb = mix_augment(a, b, ta, tb, 0.2, rng);
      const auto logits = random_tensor(Shape{1, 6}, rng, -4, 4, false);
      auto as_tensor = [](const TargetBatch& t) {
        return Tensor<double>(Shape{1, 6}, std::vector<double>(t[0].begin(), t[0].end()));
      };
      Tape<double> tape = Tape<double>::inference();
      const double mixed = weighted_cross_entropy(tape, logits, as_tensor(mb.mixed_targets()), w).item();
      const double la = weighted_cross_entropy(tape, logits, as_tensor(ta), w).item();
      const double lb = weighted_cross_entropy(tape, logits, as_tensor(tb), w).item();
      REQUIRE(std::abs(mixed - (mb.lambda * la + (1 - mb.lambda) * lb)) < 1e-6);
    }
  }

  TEST_CASE("mismatched shapes are rejected") {
    std::vector<Image> a{Image(3, 4, 4)}, b{Image(3, 4, 5)};
    CHECK_THROWS_AS(mix_with_lambda(a, b, {one_hot(0)}, {one_hot(0)}, 0.5), DimensionError);
    std::vector<Image> two{Image(3, 4, 4), Image(3, 4, 4)};
    CHECK_THROWS_AS(mix_with_lambda(a, two, {one_hot(0)}, {one_hot(0), one_hot(1)}, 0.5), DimensionError);
  }
}

TEST_SUITE("branch pipelines") {
  TEST_CASE("everything disabled leaves both views equal to the source") {
    Rng rng(15);
    const Sample s = sample_with(random_image(3, 16, 16, rng));
    const auto v = apply_branch_pipelines(s, AugmentConfig::disabled(), Rng(3));
    CHECK(v.emotion == s.image);
    CHECK(v.appearance == s.image);
  }

  TEST_CASE("appearance view is a monotone intensity map with no relocation") {
    const Sample s = sample_with(coordinate_coded(3, 16, 16));
    AugmentConfig cfg;
    cfg.jitter_range = 0.5;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto v = apply_branch_pipelines(s, cfg, Rng(seed));
      // Source values increase with flat index, so outputs must not decrease.
      for (std::size_t i = 1; i < s.image.size(); ++i) REQUIRE(v.appearance.pixels[i] >= v.appearance.pixels[i - 1]);
      REQUIRE(in_unit_range(v.appearance));
    }
  }

  TEST_CASE("flip without jitter shows up only in the emotion view") {
    const Sample s = sample_with(coordinate_coded(3, 8, 8));
    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.emotion_flip = true;
    cfg.flip_prob = 1.0;
    const auto v = apply_branch_pipelines(s, cfg, Rng(1));
    CHECK(v.emotion == horizontal_flip(s.image));
    CHECK(v.appearance == s.image);
  }

  TEST_CASE("views are reproducible per seed and streams are independent") {
    Rng rng(16);
    const Sample s = sample_with(random_image(3, 16, 16, rng));
    AugmentConfig cfg;
    const auto a = apply_branch_pipelines(s, cfg, Rng(77));
    const auto b = apply_branch_pipelines(s, cfg, Rng(77));
    CHECK(a.emotion == b.emotion);
    CHECK(a.appearance == b.appearance);
    // Turning the emotion pipeline off leaves the appearance draw unchanged.
    AugmentConfig app_only = AugmentConfig::disabled();
    app_only.appearance_jitter = true;
    CHECK(apply_branch_pipelines(s, app_only, Rng(77)).appearance == a.appearance);
  }

  TEST_CASE("config validation") {
    AugmentConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    auto bad = [](auto mutate) {
      AugmentConfig c;
      mutate(c);
      return c;
    };
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.flip_prob = 1.5; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.erase_prob = -0.1; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.jitter_range = 1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.erase_area = {0.0, 0.2}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.erase_area = {0.3, 0.2}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.erase_area = {0.1, 1.0}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](AugmentConfig& c) { c.mix_alpha = 0.0; }).validate(), ConfigError);
  }
}
