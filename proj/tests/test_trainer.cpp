#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "cyclestain/core/error.hpp"
#include "cyclestain/trainer/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cyclestain;
using cyclestain::testing::random_image;
using cyclestain::testing::TempDir;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.generator.depth = 2;
  c.model.generator.base_channels = 4;
  c.model.generator.residual_blocks = 1;
  c.model.discriminator.layers = 2;
  c.model.discriminator.base_channels = 4;
  c.crop = 16;
  c.seed = 3;
  c.max_iterations = 6;
  c.checkpoint_interval = 3;
  return c;
}

ImageSet random_set(std::uint64_t seed, int n) {
  ImageSet s;
  for (int i = 0; i < n; ++i) s.add(random_image(seed * 100 + i, 20, 20));
  return s;
}

}  // namespace

TEST_CASE("lr schedule examples") {
  const TrainConfig c;
  CHECK(c.initial_lr == 1e-4);
  CHECK(c.decay_factor == 0.96);
  CHECK(c.decay_interval == 1000);
  CHECK(c.max_iterations == 100000);
  CHECK(lr_at(0, c) == 1e-4);
  CHECK(lr_at(999, c) == 1e-4);
  CHECK(lr_at(1000, c) == 1e-4 * 0.96);
  CHECK(lr_at(5000, c) == doctest::Approx(8.15372697e-5).epsilon(1e-9));
  CHECK(lr_at(5000, c) == 1e-4 * std::pow(0.96, 5));
  CHECK_THROWS_AS(lr_at(-1, c), ContractError);
}

TEST_CASE("train config validation and json") {
  TrainConfig c = tiny_config();
  c.decay_factor = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.crop = 18;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const nlohmann::json j = tiny_config();
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(back.model == tiny_config().model);
  CHECK(back.crop == 16);
  CHECK(back.seed == 3);
}

TEST_CASE("adam matches a hand-rolled oracle on a quadratic") {
  AdamConfig cfg;
  cfg.float32_state = false;
  CHECK(cfg.beta1 == 0.5);
  CHECK(cfg.beta2 == 0.999);
  Adam adam(cfg);
  ParamStore p;
  p.set("q/x", Tensor(Shape{1, 1, 1, 1}, 0.7));

  double x = 0.7, m = 0.0, v = 0.0;
  const double lr = 0.01;
  for (long t = 1; t <= 100; ++t) {
    const double gx = 2.0 * (p.get("q/x")[0] - 3.0);
    ParamStore g;
    g.set("q/x", Tensor(Shape{1, 1, 1, 1}, gx));
    adam.step(p, g, lr, t);

    const double go = 2.0 * (x - 3.0);
    m = 0.5 * m + 0.5 * go;
    v = 0.999 * v + 0.001 * go * go;
    const double mh = m / (1.0 - std::pow(0.5, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    REQUIRE(std::abs(p.get("q/x")[0] - x) <= 1e-10);
  }
}

TEST_CASE("adam float32 state stays on the float grid") {
  Adam adam;
  ParamStore p;
  p.set("q/x", Tensor(Shape{1, 1, 1, 3}, std::vector<double>{0.1, -0.2, 0.3}));
  ParamStore g;
  g.set("q/x", Tensor(Shape{1, 1, 1, 3}, std::vector<double>{0.123456789, 1.0, -2.0}));
  adam.step(p, g, 1e-3, 1);
  for (double v : p.get("q/x").data()) CHECK(v == static_cast<double>(static_cast<float>(v)));
  for (double v : adam.second_moment().get("q/x").data())
    CHECK(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("affine augmentation") {
  const Image x = random_image(1, 9, 9);
  Rng rng(4);
  const Image same = random_affine(x, AffineRanges::none(), rng, 1.0F);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(same.data()[i] - x.data()[i]) < 1e-6);

  Rng r1(5), r2(5);
  CHECK(random_affine(x, AffineRanges{}, r1, 1.0F) == random_affine(x, AffineRanges{}, r2, 1.0F));

  // 90 degrees about the centre of a 4x4 raster: out(y, x) = src(3 - x, y).
  Image pat(1, 4, 4, ValueRange::Unit);
  for (int i = 0; i < 16; ++i) pat.data()[i] = static_cast<float>(i) / 16.0F;
  AffineParams p;
  p.rotation_deg = 90.0;
  const Image rot = apply_affine(pat, p, 0.0F);
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) CHECK(rot.at(0, y, xx) == doctest::Approx(pat.at(0, 3 - xx, y)).epsilon(1e-5));

  AffineParams shift;
  shift.tx = 2.0;
  const Image moved = apply_affine(pat, shift, -1.0F);
  CHECK(moved.at(0, 1, 0) == -1.0F);
  CHECK(moved.at(0, 1, 3) == doctest::Approx(pat.at(0, 1, 1)));

  AffineRanges bad;
  bad.scale_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  AffineParams zero;
  zero.scale = 0.0;
  CHECK_THROWS_AS(apply_affine(pat, zero, 0.0F), ConfigError);
}

TEST_CASE("unpaired sampling is independent across domains") {
  const std::size_t nf = 5, np = 7, draws = 10000;
  std::vector<std::vector<double>> counts(nf, std::vector<double>(np, 0.0));
  std::vector<double> rf(nf, 0.0), cp(np, 0.0);
  for (std::uint64_t d = 0; d < draws; ++d) {
    const auto a = unpaired_index(7, "FF", nf, d);
    const auto b = unpaired_index(7, "FFPE", np, d);
    REQUIRE(a < nf);
    REQUIRE(b < np);
    counts[a][b] += 1;
    rf[a] += 1;
    cp[b] += 1;
  }
  double chi2 = 0.0;
  for (std::size_t i = 0; i < nf; ++i)
    for (std::size_t j = 0; j < np; ++j) {
      const double e = rf[i] * cp[j] / draws;
      chi2 += (counts[i][j] - e) * (counts[i][j] - e) / e;
    }
  // Upper 1% point of chi-square with (5-1)(7-1) = 24 degrees of freedom.
  CHECK(chi2 < 42.980);

  // Each epoch is a permutation.
  std::vector<int> seen(nf, 0);
  for (std::uint64_t d = 0; d < nf; ++d) ++seen[unpaired_index(7, "FF", nf, d)];
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("make_batch is a pure function of seed and iteration") {
  const TrainConfig c = tiny_config();
  const ImageSet ff = random_set(1, 4);
  const ImageSet ffpe = random_set(2, 3);
  const Batch a = make_batch(c, ff, ffpe, 5);
  const Batch b = make_batch(c, ff, ffpe, 5);
  CHECK(a.ff == b.ff);
  CHECK(a.ffpe == b.ffpe);
  CHECK(a.ff_indices == b.ff_indices);
  CHECK(a.ff[0].height() == 16);
  CHECK_FALSE(make_batch(c, ff, ffpe, 6).ff == a.ff);
  CHECK_THROWS_AS(make_batch(c, ImageSet{}, ffpe, 0), DataError);
}

TEST_CASE("train_step: zero lr leaves parameters unchanged and steps are deterministic") {
  const TrainConfig c = tiny_config();
  const ImageSet ff = random_set(1, 4);
  const ImageSet ffpe = random_set(2, 4);
  const Batch batch = make_batch(c, ff, ffpe, 0);

  TrainState s = init_state(c);
  const ParamStore before = s.params;
  const LossBundle b0 = train_step_with_lr(s, c, batch.ff, batch.ffpe, 0.0);
  CHECK(s.params == before);
  CHECK(s.iteration == 1);
  CHECK(b0.total_G == doctest::Approx(b0.adv_G_FFPE + b0.adv_G_FF + 10.0 * b0.cycle));

  const Checkpoint ck = to_checkpoint(s, c);
  TrainState x = from_checkpoint(ck);
  TrainState y = from_checkpoint(ck);
  const LossBundle bx = train_step(x, c, batch.ff, batch.ffpe);
  const LossBundle by = train_step(y, c, batch.ff, batch.ffpe);
  CHECK(bx == by);
  CHECK(x.params == y.params);
  CHECK_FALSE(x.params == s.params);

  CHECK_THROWS_AS(train_step(x, c, std::span<const Image>{}, batch.ffpe), ContractError);
}

TEST_CASE("image history pool") {
  HistoryPool pool(2);
  Rng rng(1);
  const Tensor a(Shape{1, 3, 4, 4}, 0.5);
  CHECK(pool.query(a, rng) == a);
  (void)pool.query(Tensor(Shape{1, 3, 4, 4}, 0.25), rng);
  CHECK(pool.images().size() == 2);
  int replayed = 0;
  for (int i = 0; i < 200; ++i) {
    const Tensor out = pool.query(Tensor(Shape{1, 3, 4, 4}, 0.75), rng);
    replayed += out[0] != 0.75;
  }
  CHECK(pool.images().size() == 2);
  CHECK(replayed > 0);
  CHECK(replayed < 200);
}

TEST_CASE("train: zero iterations emits only the initial checkpoint") {
  TempDir dir("trainer_zero");
  TrainConfig c = tiny_config();
  c.max_iterations = 0;
  const TrainResult r = train(c, random_set(1, 2), random_set(2, 2), dir.path());
  REQUIRE(r.checkpoints.size() == 1);
  CHECK(r.checkpoints[0].filename() == "ckpt_0.ckpt");
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    files += e.path().extension() == ".ckpt";
  CHECK(files == 1);
  CHECK(read_loss_csv(r.loss_csv).empty());
  CHECK_THROWS_AS(train(c, ImageSet{}, random_set(2, 2), dir.path()), DataError);
}

TEST_CASE("train: resume reproduces the uninterrupted loss curve") {
  TempDir full("trainer_full");
  TempDir part("trainer_part");
  const ImageSet ff = random_set(1, 4);
  const ImageSet ffpe = random_set(2, 4);
  TrainConfig c = tiny_config();
  c.decay_interval = 2;
  const TrainResult whole = train(c, ff, ffpe, full.path());
  CHECK(whole.checkpoints.size() == 3);

  TrainConfig first = c;
  first.max_iterations = 3;
  (void)train(first, ff, ffpe, part.path());
  TrainOptions opt;
  opt.resume = checkpoint_path(part.path(), 3);
  const TrainResult resumed = train(c, ff, ffpe, part.path(), opt);
  CHECK(resumed.state.iteration == 6);

  const auto a = read_loss_csv(whole.loss_csv);
  const auto b = read_loss_csv(resumed.loss_csv);
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].iteration == b[i].iteration);
    CHECK(std::abs(a[i].bundle.total_G - b[i].bundle.total_G) <= 1e-7);
    CHECK(std::abs(a[i].bundle.total_D - b[i].bundle.total_D) <= 1e-7);
    CHECK(a[i].lr == b[i].lr);
  }
  CHECK(b[5].lr == lr_at(5, c));
  CHECK(resumed.state.params == whole.state.params);

  TrainConfig other = c;
  other.model.generator.base_channels = 8;
  CHECK_THROWS_AS(train(other, ff, ffpe, part.path(), opt), ConfigError);
}

TEST_CASE("train: divergence writes a diagnostic") {
  TempDir dir("trainer_nan");
  TrainConfig c = tiny_config();
  c.max_iterations = 0;
  const ImageSet ff = random_set(1, 2);
  const ImageSet ffpe = random_set(2, 2);
  (void)train(c, ff, ffpe, dir.path());
  Checkpoint ck = load_checkpoint(checkpoint_path(dir.path(), 0));
  const std::string name = ck.tensors.names(kGenFFPE).front();
  ck.tensors.get_mutable(name).raw()[0] = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint(dir / "nan.ckpt", ck);

  c.max_iterations = 2;
  TrainOptions opt;
  opt.resume = dir / "nan.ckpt";
  CHECK_THROWS_AS(train(c, ff, ffpe, dir / "out", opt), TrainingDiverged);
  std::ifstream in(dir / "out" / "diagnostic_1.json");
  REQUIRE(in.good());
  const auto j = nlohmann::json::parse(in);
  CHECK(j["iteration"] == 1);
  CHECK(j.contains("losses"));
}

TEST_CASE("train: prefetching does not change the result") {
  CHECK(reinterpret_cast<std::uintptr_t>(Tensor(Shape{1, 1, 3, 5}).raw()) % 64 == 0);
  TempDir with("trainer_prefetch");
  TempDir without("trainer_inline");
  const ImageSet ff = random_set(1, 4);
  const ImageSet ffpe = random_set(2, 4);
  TrainConfig c = tiny_config();
  c.max_iterations = 12;
  c.checkpoint_interval = 12;
  c.prefetch_depth = 2;
  const TrainResult a = train(c, ff, ffpe, with.path());
  c.prefetch_depth = 0;
  const TrainResult b = train(c, ff, ffpe, without.path());
  CHECK(a.state.params == b.state.params);
}
