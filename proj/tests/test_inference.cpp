#include "cyclestain/core/error.hpp"
#include "cyclestain/inference/inference.hpp"
#include "cyclestain/networks/checkpoint.hpp"
#include "doctest.h"
#include "support.hpp"
#include "tiling_oracle.hpp"

using namespace cyclestain;
using cyclestain::testing::random_image;
using cyclestain::testing::TempDir;

namespace {

Translator small_translator(std::uint64_t seed = 1) {
  Translator t;
  t.config.depth = 2;
  t.config.base_channels = 8;
  t.config.residual_blocks = 1;
  t.params = build_generator(t.config, seed);
  return t;
}

// Smooth field plus texture, so neighbouring tiles see different content.
Image synthetic_slide(int h, int w) {
  Image img = random_image(42, h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(c, y, x) = static_cast<float>(0.5 * std::sin(0.01 * (x + 2 * y) + c) + 0.3 * img.at(c, y, x));
  return img;
}

}  // namespace

TEST_CASE("blend parsing and policy validation") {
  CHECK(parse_blend("feather") == BlendMode::Feather);
  CHECK(parse_blend("center-crop") == BlendMode::CenterCrop);
  CHECK_THROWS_AS(parse_blend("median"), ConfigError);
  TilingPolicy p;
  CHECK(p.tile == 512);
  CHECK(p.overlap == 64);
  p.overlap = 512;
  CHECK_THROWS_AS(p.validate(8), ConfigError);
  p = TilingPolicy{100, 10, BlendMode::Feather};
  CHECK_THROWS_AS(p.validate(8), ConfigError);
}

TEST_CASE("translate_patch") {
  const Translator t = small_translator();
  const Image x = random_image(3, 64, 64);
  const Image y = translate_patch(t, x);
  CHECK(y.height() == 64);
  CHECK(y.range() == ValueRange::Symmetric);
  CHECK(translate_patch(t, x) == y);
  CHECK_THROWS_AS(translate_patch(t, random_image(3, 62, 64)), ContractError);
  CHECK_THROWS_AS(translate_patch(t, random_image(3, 64, 64, ValueRange::Unit)), ContractError);

  Translator id = t;
  id.config.identity_ablation = true;
  const Image same = translate_patch(id, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(same.data()[i] - x.data()[i]) <= 1e-6);
}

TEST_CASE("tiled translation agrees with per-tile references on interiors") {
  const Translator t = small_translator();
  const Image slide = synthetic_slide(200, 264);
  for (BlendMode mode : {BlendMode::Feather, BlendMode::CenterCrop}) {
    const TilingPolicy policy{64, 16, mode};
    const Image out = translate_slide(t, slide, policy, 2);
    CHECK(out.height() == 200);
    CHECK(out.width() == 264);
    for (float v : out.data()) REQUIRE((v >= -1.0F && v <= 1.0F));
    const auto d = cyclestain::testing::interior_deviation(t, slide, out, policy);
    CHECK(d.compared > 10000);
    CHECK(d.max_abs < 1e-4);
    CHECK(translate_slide(t, slide, policy, 1) == out);
  }
}

TEST_CASE("feathering differs from center-crop only near seams") {
  const Translator t = small_translator();
  const Image slide = synthetic_slide(128, 128);
  const Image f = translate_slide(t, slide, {64, 16, BlendMode::Feather}, 1);
  const Image c = translate_slide(t, slide, {64, 16, BlendMode::CenterCrop}, 1);
  CHECK_FALSE(f == c);
  // Origins 0, 48 and the clamped 64; the seams sit at 56 and 88.
  const int away[] = {0, 20, 47, 70, 127};
  for (int y : away)
    for (int x : away) CHECK(c.at(0, y, x) == f.at(0, y, x));
  CHECK_FALSE(c.at(0, 20, 56) == f.at(0, 20, 56));
}

TEST_CASE("degenerate tilings") {
  const Translator t = small_translator();
  const Image x = random_image(9, 64, 64);
  CHECK(translate_slide(t, x, {64, 16, BlendMode::Feather}) == translate_patch(t, x));

  Translator id = t;
  id.config.identity_ablation = true;
  const Image slide = synthetic_slide(100, 140);
  const Image same = translate_slide(id, slide, {32, 8, BlendMode::Feather});
  for (std::size_t i = 0; i < slide.size(); ++i) REQUIRE(std::abs(same.data()[i] - slide.data()[i]) <= 1e-6);

  try {
    (void)translate_slide(t, random_image(1, 40, 80), {64, 16, BlendMode::Feather});
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("pad") != std::string::npos);
  }
}

TEST_CASE("load_translator reads training checkpoints") {
  TempDir dir("inference");
  const Translator t = small_translator(5);
  Checkpoint c;
  c.config = {{"model", {{"generator", t.config}}}};
  ParamStore all = t.params;
  all.merge(build_generator(t.config, 6, kGenFF));
  c.tensors = all;
  save_checkpoint(dir / "a.ckpt", c);
  const Translator back = load_translator(dir / "a.ckpt");
  CHECK(back.config == t.config);
  CHECK(back.params == t.params);
  const Translator rev = load_translator(dir / "a.ckpt", kGenFF);
  CHECK(rev.ns == "G_FF");
  CHECK_THROWS_AS(load_translator(dir / "a.ckpt", kDiscFF), DataError);
}

TEST_CASE("benchmark report") {
  const Translator t = small_translator();
  CHECK_THROWS_AS(benchmark(t, 0, 0, 3, {64, 16, BlendMode::Feather}), ConfigError);
  CHECK_THROWS_AS(benchmark(t, 64, 64, 0, {64, 16, BlendMode::Feather}), ConfigError);
  const BenchmarkReport r = benchmark(t, 96, 128, 3, {64, 16, BlendMode::Feather}, 1);
  REQUIRE(r.seconds.size() == 3);
  CHECK(r.median_s > 0.0);
  CHECK(r.p95_s >= r.median_s);
  CHECK(r.pixels_per_second == doctest::Approx(96.0 * 128.0 / r.median_s));
  CHECK(r.reference_s == 0.105);
  CHECK(r.warmup_s > 0.0);
  const nlohmann::json j = r;
  CHECK(j["hardware"].contains("cpu"));
  CHECK(j["hardware"].contains("build_id"));
  CHECK(j["reference"]["seconds"] == 0.105);
}
