#include <cmath>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"
#include "cyclestain/evaluation/agreement.hpp"
#include "cyclestain/evaluation/perceptual.hpp"
#include "cyclestain/evaluation/report.hpp"
#include "doctest.h"
#include "kappa_oracle.hpp"
#include "support.hpp"

using namespace cyclestain;
using cyclestain::testing::kappa_oracle;
using cyclestain::testing::matrix_of;
using cyclestain::testing::random_image;
using cyclestain::testing::TempDir;

namespace {

// One stage, two channels: channel 0 copies red, channel 1 copies green (centre tap).
FeatureExtractor copy_extractor(double weight) {
  FeatureExtractor fx;
  fx.name = "copy";
  fx.widths = {2};
  fx.layer_weights = {weight};
  Tensor w(Shape{2, 3, 3, 3}, 0.0);
  w.at(0, 0, 1, 1) = 1.0;
  w.at(1, 1, 1, 1) = 1.0;
  fx.params.set("features/stage0/weight", w);
  fx.params.set("features/stage0/bias", Tensor(Shape{1, 2, 1, 1}, 0.0));
  return fx;
}

Image rg(float r, float g) {
  Image img(3, 8, 8, ValueRange::Symmetric, 0.0F);
  for (float& v : img.plane(0)) v = r;
  for (float& v : img.plane(1)) v = g;
  return img;
}

Image add_noise(const Image& x, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Image y = x;
  for (float& v : y.data()) v = static_cast<float>(std::clamp(v + sigma * rng.normal(), -1.0, 1.0));
  return y;
}

RatingMatrix random_ratings(std::uint64_t seed, int subjects, int raters, int k) {
  Rng rng(seed);
  std::vector<std::vector<int>> rows(subjects, std::vector<int>(k, 0));
  for (auto& r : rows)
    for (int j = 0; j < raters; ++j) ++r[rng.below(k)];
  std::vector<std::string> cats;
  for (int j = 0; j < k; ++j) cats.push_back("c" + std::to_string(j));
  return matrix_of(rows, cats);
}

}  // namespace

TEST_CASE("perceptual distance is a pseudometric") {
  const FeatureExtractor fx = random_feature_extractor();
  CHECK(fx.widths == std::vector<int>{16, 32, 64});
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image a = random_image(s, 32, 32);
    const Image b = random_image(s + 100, 32, 32);
    CHECK(perceptual_distance(fx, a, a) == 0.0);
    const double ab = perceptual_distance(fx, a, b);
    CHECK(ab > 0.0);
    CHECK(std::abs(ab - perceptual_distance(fx, b, a)) <= 1e-7);
  }
  CHECK_THROWS_AS(perceptual_distance(fx, random_image(1, 32, 32), random_image(1, 16, 32)), ContractError);
  CHECK_THROWS_AS(perceptual_distance(fx, random_image(1, 2, 2), random_image(1, 2, 2)), ContractError);
}

TEST_CASE("perceptual distance grows with noise") {
  const FeatureExtractor fx = random_feature_extractor();
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image x = random_image(s, 32, 32);
    double prev = 0.0;
    for (double sigma : {0.05, 0.1, 0.2}) {
      const double d = perceptual_distance(fx, x, add_noise(x, sigma, s * 7 + 1));
      CHECK(d > prev);
      prev = d;
    }
  }
}

TEST_CASE("perceptual distance on constructed features") {
  const FeatureExtractor fx = copy_extractor(1.5);
  // Unit-normalised features: (1,0), (0,1) and (1,1)/sqrt2.
  const Image a = rg(0.5F, 0.0F);
  const Image b = rg(0.0F, 0.5F);
  const Image c = rg(0.5F, 0.5F);
  const double dab = 1.5 * 2.0;
  const double dac = 1.5 * (2.0 - std::sqrt(2.0));
  CHECK(perceptual_distance(fx, a, b) == doctest::Approx(dab).epsilon(1e-9));
  CHECK(perceptual_distance(fx, a, c) == doctest::Approx(dac).epsilon(1e-9));

  const DistanceSummary s = lpips_summary(fx, {a, a}, {b, c}, {{0, 0}, {1, 1}});
  CHECK(s.mean == doctest::Approx((dab + dac) / 2).epsilon(1e-9));
  CHECK(s.std == doctest::Approx(std::abs(dab - dac) / std::sqrt(2.0)).epsilon(1e-9));
  const DistanceSummary z = lpips_summary(fx, {a, b}, {a, b}, {{0, 0}, {1, 1}});
  CHECK(z.mean == 0.0);
  CHECK(z.std == 0.0);
  CHECK_THROWS_AS(lpips_summary(fx, {a}, {b}, {}), ContractError);
  CHECK_THROWS_AS(lpips_summary(fx, {a}, {b}, {{0, 3}}), ContractError);
}

TEST_CASE("fraction closer") {
  const FeatureExtractor fx = copy_extractor(1.0);
  const Image a = rg(0.5F, 0.0F);
  const Image b = rg(0.0F, 0.5F);
  const Image c = rg(0.5F, 0.5F);
  const std::vector<Image> refs{a, a, a, a};
  std::vector<Triple> t;
  for (std::size_t i = 0; i < 4; ++i) t.push_back({i, i, i});
  CHECK(fraction_closer(fx, {b, b, c, c}, refs, refs, t) == 1.0);
  CHECK(fraction_closer(fx, refs, {b, b, c, c}, refs, t) == 0.0);
  // d(c,a) < d(b,a): closer, not closer, tie, tie.
  CHECK(fraction_closer(fx, {b, c, b, c}, {c, b, b, c}, refs, t) == 0.25);
  CHECK(fraction_closer({1.0, 2.0, 3.0}, {0.5, 2.0, 4.0}) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(fraction_closer({}, {}), ContractError);
}

TEST_CASE("feature extractor save and load") {
  TempDir dir("evaluation");
  const FeatureExtractor fx = random_feature_extractor(3, {4, 8}, {1.0, 0.5});
  save_feature_extractor(dir / "fx.ckpt", fx);
  const FeatureExtractor back = resolve_feature_extractor((dir / "fx.ckpt").string());
  CHECK(back.widths == fx.widths);
  CHECK(back.layer_weights == fx.layer_weights);
  CHECK(back.params == fx.params);
  const Image a = random_image(1, 16, 16);
  const Image b = random_image(2, 16, 16);
  CHECK(perceptual_distance(back, a, b) == perceptual_distance(fx, a, b));
  CHECK(resolve_feature_extractor("builtin:random").params == random_feature_extractor().params);
  CHECK_THROWS_AS(random_feature_extractor(0, {4}, {-1.0}), ConfigError);
}

TEST_CASE("fleiss kappa") {
  const RatingMatrix fixture = matrix_of(cyclestain::testing::kFixtureRows, {"a", "b", "c"});
  CHECK(fleiss_kappa(fixture) == doctest::Approx(cyclestain::testing::kFixtureKappa).epsilon(1e-12));
  CHECK(std::abs(fleiss_kappa(fixture) - kappa_oracle(cyclestain::testing::kFixtureRows)) < 1e-9);
  CHECK(std::abs(fleiss_kappa(fixture) - 0.106382979) < 1e-9);

  const RatingMatrix perfect = matrix_of({{3, 0}, {0, 3}, {3, 0}}, {"x", "y"});
  CHECK(fleiss_kappa(perfect) == 1.0);
  CHECK_THROWS_AS(fleiss_kappa(matrix_of({{3, 0}, {3, 0}}, {"x", "y"})), UndefinedKappa);
  CHECK_THROWS_AS(fleiss_kappa(matrix_of({{3, 0}, {2, 0}}, {"x", "y"})), ContractError);
  CHECK_THROWS_AS(fleiss_kappa(matrix_of({{3, 0}}, {"x", "y"})), ContractError);
}

TEST_CASE("fleiss kappa is permutation invariant") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    RatingMatrix m = random_ratings(s, 30, 4, 3);
    const double k = fleiss_kappa(m);
    CHECK(std::abs(k - kappa_oracle(m.counts)) < 1e-12);
    RatingMatrix p = m;
    std::reverse(p.counts.begin(), p.counts.end());
    CHECK(fleiss_kappa(p) == doctest::Approx(k).epsilon(1e-12));
    for (auto& r : p.counts) std::rotate(r.begin(), r.begin() + 1, r.end());
    CHECK(fleiss_kappa(p) == doctest::Approx(k).epsilon(1e-12));
  }
}

TEST_CASE("random ratings give near-zero kappa") {
  int small = 0;
  for (std::uint64_t s = 0; s < 20; ++s) small += std::abs(fleiss_kappa(random_ratings(1000 + s, 500, 3, 3))) < 0.05;
  CHECK(small >= 19);
}

TEST_CASE("tally builds matrices from ratings") {
  std::vector<Rating> r;
  const char* labels[4][3] = {{"a", "a", "a"}, {"b", "a", "b"}, {"c", "c", "b"}, {"a", "b", "c"}};
  for (int s = 0; s < 4; ++s)
    for (int j = 0; j < 3; ++j) r.push_back({"s" + std::to_string(s), "r" + std::to_string(j), labels[s][j]});
  const RatingMatrix m = tally(r);
  CHECK(m.categories == std::vector<std::string>{"a", "b", "c"});
  CHECK(m.counts == cyclestain::testing::kFixtureRows);
  CHECK(m.raters() == 3);

  r.push_back({"s0", "r0", "b"});
  CHECK_THROWS_AS(tally(r), DataError);
  r.pop_back();
  r.pop_back();
  CHECK_THROWS_AS(tally(r), DataError);
  CHECK_THROWS_AS(tally({{"s0", "r0", "z"}, {"s0", "r1", "a"}}, {"a"}), DataError);
}

TEST_CASE("bootstrap interval") {
  const RatingMatrix perfect = matrix_of({{3, 0}, {0, 3}, {3, 0}, {0, 3}}, {"x", "y"});
  const KappaInterval p = kappa_ci(perfect);
  CHECK(p.low == 1.0);
  CHECK(p.high == 1.0);

  const RatingMatrix m = random_ratings(5, 40, 3, 3);
  const KappaInterval a = kappa_ci(m, 0.95, 1000, 7);
  const KappaInterval b = kappa_ci(m, 0.95, 1000, 7);
  CHECK(a.low == b.low);
  CHECK(a.high == b.high);
  CHECK(a.used + a.skipped == 1000);
  CHECK(a.low <= fleiss_kappa(m));
  CHECK(a.high >= fleiss_kappa(m));
  CHECK(a.low >= -1.0);
  const KappaInterval narrow = kappa_ci(m, 0.5, 1000, 7);
  CHECK(narrow.low >= a.low);
  CHECK(narrow.high <= a.high);
  CHECK_THROWS_AS(kappa_ci(m, 0.95, 100), ConfigError);

  // Frozen from one run of the bootstrap on the four-subject fixture.
  const KappaInterval f = kappa_ci(matrix_of(cyclestain::testing::kFixtureRows, {"a", "b", "c"}), 0.95, 1000, 7);
  CHECK(f.low == doctest::Approx(-0.4042553191489362).epsilon(1e-12));
  CHECK(f.high == doctest::Approx(0.45454545454545447).epsilon(1e-12));
  CHECK(f.used == 991);
  CHECK(f.skipped == 9);

  const AgreementResult r = agreement(matrix_of(cyclestain::testing::kFixtureRows, {"a", "b", "c"}));
  CHECK(r.ci_low <= r.kappa);
  CHECK(r.kappa <= r.ci_high);
  CHECK(r.band == "none to slight");
}

TEST_CASE("kappa bands") {
  CHECK(kappa_band(-0.1) == "chance");
  CHECK(kappa_band(0.0) == "chance");
  CHECK(kappa_band(0.01) == "none to slight");
  CHECK(kappa_band(0.20) == "none to slight");
  CHECK(kappa_band(0.21) == "fair");
  CHECK(kappa_band(0.40) == "fair");
  CHECK(kappa_band(0.41) == "moderate");
  CHECK(kappa_band(0.52) == "moderate");
  CHECK(kappa_band(0.60) == "moderate");
  CHECK(kappa_band(0.61) == "substantial");
  CHECK(kappa_band(0.67) == "substantial");
  CHECK(kappa_band(0.80) == "substantial");
  CHECK(kappa_band(0.81) == "almost perfect");
  CHECK(kappa_band(1.0) == "almost perfect");
  CHECK_THROWS_AS(kappa_band(1.2), ContractError);
}

TEST_CASE("pei summaries") {
  const MeanStd five = mean_std({5, 5, 5});
  CHECK(format_mean_std(five) == "5.00 ± 0.00");
  const MeanStd low = mean_std({1, 1, 2});
  CHECK(low.mean == doctest::Approx(4.0 / 3.0));
  CHECK(low.std == doctest::Approx(std::sqrt(1.0 / 3.0)));
  CHECK(format_mean_std(low) == "1.33 ± 0.58");

  std::vector<PeiScore> scores{{"i1", "R1", "FF", 1}, {"i2", "R1", "FF", 2}, {"i1", "R2", "FF", 3},
                               {"i3", "R1", "vFFPE", 4}, {"i3", "R2", "vFFPE", 5}, {"i4", "R2", "vFFPE", 5}};
  const PeiSummary s = pei_summary(scores);
  CHECK(s.domains == std::vector<std::string>{"FF", "vFFPE"});
  CHECK(s.raters == std::vector<std::string>{"R1", "R2"});
  CHECK(s.per_rater[0][0].mean == 1.5);
  CHECK(s.total[0].mean == 2.0);
  CHECK(s.total[1].n == 3);
  CHECK(render_pei_table(s) ==
        "\tR1\tR2\tTotal\n"
        "Frozen\t1.50 ± 0.71\t3.00 ± 0.00\t2.00 ± 1.00\n"
        "Virtual FFPE\t4.00 ± 0.00\t5.00 ± 0.00\t4.67 ± 0.58\n");

  scores.push_back({"bad7", "R1", "FF", 6});
  try {
    (void)pei_summary(scores);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bad7") != std::string::npos);
  }
}

TEST_CASE("report cell styles") {
  CHECK(format_mean_std(0.41, 0.07) == "0.41 ± 0.07");
  CHECK(format_mean_std(1.875, 1.1449) == "1.88 ± 1.14");
  CHECK(format_interval(0.52, 0.42, 0.62) == "0.52 (0.42,0.62)");
  CHECK(format_interval(-0.001, -0.004, 0.2) == "0.00 (0.00,0.20)");

  AgreementRow row;
  row.domain = "FF";
  row.benign_vs_cancer.kappa = 0.52;
  row.benign_vs_cancer.ci_low = 0.42;
  row.benign_vs_cancer.ci_high = 0.62;
  row.grading.kappa = 0.3;
  row.grading.ci_low = 0.21;
  row.grading.ci_high = 0.385;
  CHECK(render_agreement_table({row}) == "\tBenign vs cancer\tGrading\nFrozen\t0.52 (0.42,0.62)\t0.30 (0.21,0.39)\n");

  LpipsRow l;
  l.domain = "vFFPE";
  l.summary.mean = 0.4109;
  l.summary.std = 0.0712;
  CHECK(render_lpips_table({l}) == "\tLPIPS metric\nVirtual FFPE\t0.41 ± 0.07\n");
}
