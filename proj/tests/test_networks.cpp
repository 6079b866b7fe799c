#include <cstdio>

#include "cyclestain/core/error.hpp"
#include "cyclestain/networks/checkpoint.hpp"
#include "cyclestain/networks/networks.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace cyclestain;
using cyclestain::testing::random_image;
using cyclestain::testing::TempDir;

namespace {

GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.depth = 2;
  g.base_channels = 4;
  g.residual_blocks = 1;
  return g;
}

DiscriminatorConfig tiny_discriminator() {
  DiscriminatorConfig d;
  d.layers = 2;
  d.base_channels = 4;
  return d;
}

// Independent count from the layer table: bias-free convs except the egress.
std::size_t generator_count_oracle(int depth, int base, int blocks) {
  auto c = [base](int i) { return static_cast<std::size_t>(base) << i; };
  std::size_t n = c(0) * 3 * 49;
  for (int i = 1; i <= depth; ++i) n += c(i) * c(i - 1) * 9;
  n += static_cast<std::size_t>(blocks) * 2 * c(depth) * c(depth) * 9;
  for (int i = depth; i >= 1; --i) n += c(i - 1) * (i == depth ? c(depth) : 2 * c(i)) * 9;
  return n + 3 * 2 * c(0) * 49 + 3;
}

int conv_out(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

}  // namespace

TEST_CASE("generator parameter count follows the layer table") {
  GeneratorConfig g;
  CHECK(g.depth == 3);
  CHECK(g.base_channels == 32);
  CHECK(g.residual_blocks == 4);
  const ParamStore p = build_generator(g, 1);
  CHECK(p.parameter_count() == 5599011);
  CHECK(p.parameter_count() == generator_count_oracle(3, 32, 4));
  CHECK(build_generator(tiny_generator(), 1).parameter_count() == generator_count_oracle(2, 4, 1));
}

TEST_CASE("builders are deterministic in the seed") {
  const GeneratorConfig g = tiny_generator();
  CHECK(build_generator(g, 3) == build_generator(g, 3));
  CHECK_FALSE(build_generator(g, 3) == build_generator(g, 4));
  const DiscriminatorConfig d = tiny_discriminator();
  CHECK(build_discriminator(d, 3) == build_discriminator(d, 3));
  CHECK_FALSE(build_discriminator(d, 3) == build_discriminator(d, 4));
}

TEST_CASE("build_model holds four disjoint namespaces") {
  ModelConfig m;
  m.generator = tiny_generator();
  m.discriminator = tiny_discriminator();
  const ParamStore p = build_model(m, 9);
  for (auto ns : {kGenFFPE, kGenFF, kDiscFFPE, kDiscFF}) CHECK(p.has_namespace(ns));
  CHECK(p.parameter_count() == p.parameter_count(kGenFFPE) + p.parameter_count(kGenFF) +
                                   p.parameter_count(kDiscFFPE) + p.parameter_count(kDiscFF));
  CHECK_FALSE(p.subset(kGenFFPE).entries().begin()->second ==
              p.subset(kGenFF).entries().begin()->second);

  ParamStore q = p;
  for (const auto& name : q.names(kGenFFPE)) q.get_mutable(name).fill(0.5);
  for (auto ns : {kGenFF, kDiscFFPE, kDiscFF}) CHECK(q.subset(ns) == p.subset(ns));
}

TEST_CASE("config validation") {
  GeneratorConfig g;
  g.depth = 1;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  DiscriminatorConfig d;
  d.scales = 3;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  nlohmann::json j = ModelConfig{};
  CHECK(j.get<ModelConfig>() == ModelConfig{});
}

TEST_CASE("generator forward preserves shape and stays bounded") {
  GeneratorConfig g;
  g.depth = 2;
  g.base_channels = 8;
  g.residual_blocks = 1;
  const ParamStore p = build_generator(g, 2);
  for (int side : {32, 48}) {
    const Image x = random_image(side, side, side);
    const Image y = generator_forward(g, p, kGenFFPE, x);
    CHECK(y.channels() == 3);
    CHECK(y.height() == side);
    CHECK(y.width() == side);
    CHECK(y.range() == ValueRange::Symmetric);
    for (float v : y.data()) REQUIRE((v >= -1.0F && v <= 1.0F));
    CHECK(generator_forward(g, p, kGenFFPE, x) == y);
  }
  // Saturating weights still cannot push outputs past the bounds.
  ParamStore big = p;
  for (const auto& name : big.names()) for (double& v : big.get_mutable(name).data()) v *= 50.0;
  for (float v : generator_forward(g, big, kGenFFPE, random_image(5, 32, 32)).data())
    REQUIRE((v >= -1.0F && v <= 1.0F));
}

TEST_CASE("generator forward rejects bad inputs") {
  const GeneratorConfig g = tiny_generator();
  const ParamStore p = build_generator(g, 2);
  try {
    (void)generator_forward(g, p, kGenFFPE, random_image(1, 30, 32));
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("multiples of 4") != std::string::npos);
  }
  CHECK_THROWS_AS(generator_forward(g, p, kGenFFPE, random_image(1, 32, 32, ValueRange::Unit)),
                  ContractError);
}

TEST_CASE("identity ablation passes input through") {
  GeneratorConfig g = tiny_generator();
  g.identity_ablation = true;
  const Image x = random_image(8, 16, 16);
  const Image y = generator_forward(g, build_generator(g, 1), kGenFFPE, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) <= 1e-6);
}

TEST_CASE("discriminator map extent and receptive field") {
  DiscriminatorConfig d;
  CHECK(d.layers == 4);
  CHECK(discriminator_receptive_field(d) == 70);
  // Three stride-2 convs, one stride-1 conv, then the stride-1 output conv; all 4x4 pad 1.
  auto oracle = [](int n, int layers) {
    for (int i = 0; i < layers; ++i) n = conv_out(n, 4, i < layers - 1 ? 2 : 1, 1);
    return conv_out(n, 4, 1, 1);
  };
  CHECK(discriminator_map_extent(d, 512) == 62);
  CHECK(discriminator_map_extent(d, 512) == oracle(512, 4));
  CHECK(discriminator_map_extent(d, 256) == oracle(256, 4));
  CHECK(discriminator_map_extent(d, 100) == oracle(100, 4));
  CHECK(discriminator_map_extent(d, 8) == -1);

  d.base_channels = 4;
  const ParamStore p = build_discriminator(d, 1);
  const auto maps = multiscale_scores(d, p, kDiscFFPE, random_image(3, 128, 128));
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].shape().h == oracle(128, 4));
  CHECK(maps[1].shape().h == oracle(64, 4));
  CHECK(maps[1].shape().h < maps[0].shape().h);
  CHECK(maps[0].shape().c == 1);

  CHECK_THROWS_AS(multiscale_scores(d, p, kDiscFFPE, random_image(3, 16, 16)), ContractError);
}

TEST_CASE("multiscale scores are deterministic and scale-specific") {
  const DiscriminatorConfig d = tiny_discriminator();
  const ParamStore p = build_discriminator(d, 4);
  const Image flat(3, 32, 32, ValueRange::Symmetric, 0.3F);
  CHECK(multiscale_scores(d, p, kDiscFFPE, flat) == multiscale_scores(d, p, kDiscFFPE, flat));

  // Swap the per-scale parameter sets; identical layout lets the swap type-check.
  ParamStore swapped;
  for (const auto& [name, t] : p.entries()) {
    std::string n = name;
    const auto pos = n.find("/scale");
    n[pos + 6] = n[pos + 6] == '0' ? '1' : '0';
    swapped.set(n, t);
  }
  const Image x = random_image(11, 32, 32);
  const auto a = multiscale_scores(d, p, kDiscFFPE, x);
  const auto b = multiscale_scores(d, swapped, kDiscFFPE, x);
  CHECK_FALSE(a[0] == b[0]);
  CHECK_FALSE(a[1] == b[1]);
}

TEST_CASE("generator gradients match central differences") {
  const GeneratorConfig g = tiny_generator();
  const ParamStore p = build_generator(g, 5);
  const Tensor x = to_tensor(random_image(6, 16, 16));
  const auto r = cyclestain::testing::grad_check(
      p, {std::string(kGenFFPE)},
      [&](const Binding& b) {
        return ad::sum_sq_dev(generator_forward(g, b, kGenFFPE, ad::constant(x)), 0.3);
      },
      1e-3, 1e-2, 7);
  CHECK(r.checked > 500);
  CHECK(r.fraction() >= 0.99);
}

TEST_CASE("discriminator gradients match central differences") {
  const DiscriminatorConfig d = tiny_discriminator();
  const ParamStore p = build_discriminator(d, 5);
  const Tensor x = to_tensor(random_image(6, 16, 16));
  const auto r = cyclestain::testing::grad_check(
      p, {std::string(kDiscFFPE)},
      [&](const Binding& b) {
        ad::Var total;
        for (const auto& m : multiscale_scores(d, b, kDiscFFPE, ad::constant(x)))
          total = total.defined() ? ad::add(total, ad::sum_sq_dev(m, 1.0)) : ad::sum_sq_dev(m, 1.0);
        return total;
      },
      1e-3, 1e-2, 3);
  CHECK(r.checked > 100);
  CHECK(r.fraction() >= 0.99);
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir("networks");
  Checkpoint c;
  c.config = {{"model", ModelConfig{}}};
  c.meta = {{"kind", "test"}};
  c.tensors = build_generator(tiny_generator(), 1);
  round_to_float32(c.tensors);
  save_checkpoint(dir / "a.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.tensors == c.tensors);
  CHECK(back.config == c.config);
  CHECK(back.meta == c.meta);

  const auto size = std::filesystem::file_size(dir / "a.ckpt");
  std::filesystem::copy_file(dir / "a.ckpt", dir / "short.ckpt");
  std::filesystem::resize_file(dir / "short.ckpt", size - 16);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);

  std::filesystem::copy_file(dir / "a.ckpt", dir / "magic.ckpt");
  std::FILE* f = std::fopen((dir / "magic.ckpt").c_str(), "r+b");
  std::fputc('X', f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), DataError);

  std::filesystem::copy_file(dir / "a.ckpt", dir / "version.ckpt");
  f = std::fopen((dir / "version.ckpt").c_str(), "r+b");
  std::fseek(f, 8, SEEK_SET);
  std::fputc(99, f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}
