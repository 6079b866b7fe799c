#include "cyclestain/evaluation/perceptual.hpp"

#include <cmath>

#include "cyclestain/core/autodiff.hpp"
#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"
#include "cyclestain/networks/checkpoint.hpp"

namespace cyclestain {
namespace {

std::string weight_name(std::size_t i) { return "features/stage" + std::to_string(i) + "/weight"; }
std::string bias_name(std::size_t i) { return "features/stage" + std::to_string(i) + "/bias"; }

std::vector<Tensor> features(const FeatureExtractor& fx, const Image& img) {
  ad::NoGradGuard guard;
  const Image sym = img.range() == ValueRange::Symmetric ? img : normalize(img, ValueRange::Symmetric);
  ad::Var x = ad::constant(to_tensor(sym));
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < fx.widths.size(); ++i) {
    if (i > 0) x = ad::avg_pool2x2(x);
    x = ad::conv2d(x, ad::constant(fx.params.get(weight_name(i))),
                   ad::constant(fx.params.get(bias_name(i))), {1, 1});
    x = ad::relu(x);
    out.push_back(x.value());
  }
  return out;
}

void unit_normalize(Tensor& t) {
  const Shape s = t.shape();
  const std::size_t plane = s.plane();
  double* d = t.raw();
  for (std::size_t p = 0; p < plane; ++p) {
    double norm = 0.0;
    for (int c = 0; c < s.c; ++c) norm += d[c * plane + p] * d[c * plane + p];
    norm = std::sqrt(norm) + 1e-10;
    for (int c = 0; c < s.c; ++c) d[c * plane + p] /= norm;
  }
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

void FeatureExtractor::validate() const {
  if (widths.empty()) throw ConfigError("feature extractor needs at least one stage");
  if (layer_weights.size() != widths.size())
    throw ConfigError("feature extractor needs one weight per stage");
  for (double w : layer_weights)
    if (!(w >= 0.0)) throw ConfigError("feature extractor layer weights must be >= 0");
  int in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!params.contains(weight_name(i)) || !params.contains(bias_name(i)))
      throw DataError("feature extractor is missing parameters for stage " + std::to_string(i));
    const Shape s = params.get(weight_name(i)).shape();
    if (s.n != widths[i] || s.c != in || s.h != 3 || s.w != 3)
      throw DataError("feature extractor stage " + std::to_string(i) + " has shape " + s.str());
    in = widths[i];
  }
}

FeatureExtractor random_feature_extractor(std::uint64_t seed, std::vector<int> widths,
                                          std::vector<double> layer_weights) {
  FeatureExtractor fx;
  fx.name = "builtin:random";
  fx.widths = std::move(widths);
  fx.layer_weights = layer_weights.empty() ? std::vector<double>(fx.widths.size(), 1.0) : std::move(layer_weights);
  int in = 3;
  for (std::size_t i = 0; i < fx.widths.size(); ++i) {
    Rng rng(derive_seed(seed, "features", {i}));
    Tensor w(Shape{fx.widths[i], in, 3, 3});
    const double sd = std::sqrt(2.0 / (in * 9.0));
    for (double& v : w.data()) v = sd * rng.normal();
    round_to_float32(w);
    fx.params.set(weight_name(i), std::move(w));
    fx.params.set(bias_name(i), Tensor(Shape{1, fx.widths[i], 1, 1}));
    in = fx.widths[i];
  }
  fx.validate();
  return fx;
}

FeatureExtractor load_feature_extractor(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  FeatureExtractor fx;
  fx.name = path.string();
  try {
    fx.widths = ck.config.at("widths").get<std::vector<int>>();
    fx.layer_weights = ck.config.value("layer_weights", std::vector<double>(fx.widths.size(), 1.0));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": not a feature-extractor checkpoint: " + e.what());
  }
  fx.params = ck.tensors.subset("features");
  fx.validate();
  return fx;
}

void save_feature_extractor(const std::filesystem::path& path, const FeatureExtractor& fx) {
  fx.validate();
  Checkpoint ck;
  ck.config = {{"widths", fx.widths}, {"layer_weights", fx.layer_weights}};
  ck.meta = {{"kind", "feature_extractor"}};
  ck.tensors = fx.params;
  save_checkpoint(path, ck);
}

FeatureExtractor resolve_feature_extractor(const std::string& spec, std::uint64_t seed) {
  if (spec == "builtin:random") return random_feature_extractor(seed);
  return load_feature_extractor(spec);
}

double perceptual_distance(const FeatureExtractor& fx, const Image& a, const Image& b) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
    throw ContractError("perceptual_distance: images differ in size");
  if (a.channels() != 3) throw ContractError("perceptual_distance: expected RGB images");
  if (a.height() < fx.min_extent() || a.width() < fx.min_extent())
    throw ContractError("perceptual_distance: images smaller than " + std::to_string(fx.min_extent()) + " px");
  std::vector<Tensor> fa = features(fx, a);
  std::vector<Tensor> fb = features(fx, b);
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    unit_normalize(fa[l]);
    unit_normalize(fb[l]);
    const double* x = fa[l].raw();
    const double* y = fb[l].raw();
    double acc = 0.0;
    for (std::size_t i = 0; i < fa[l].size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    total += fx.layer_weights[l] * acc / static_cast<double>(fa[l].shape().plane());
  }
  return total;
}

DistanceSummary lpips_summary(const FeatureExtractor& fx, const std::vector<Image>& candidates,
                              const std::vector<Image>& references,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairing) {
  if (pairing.empty()) throw ContractError("lpips_summary: empty pairing");
  DistanceSummary s;
  for (const auto& [i, j] : pairing) {
    if (i >= candidates.size() || j >= references.size())
      throw ContractError("lpips_summary: pairing index out of range");
    s.distances.push_back(perceptual_distance(fx, candidates[i], references[j]));
  }
  for (double d : s.distances) s.mean += d;
  s.mean /= static_cast<double>(s.distances.size());
  s.std = sample_std(s.distances, s.mean);
  return s;
}

double fraction_closer(const std::vector<double>& d_ff, const std::vector<double>& d_vffpe) {
  if (d_ff.empty()) throw ContractError("fraction_closer: empty set");
  if (d_ff.size() != d_vffpe.size()) throw ContractError("fraction_closer: length mismatch");
  std::size_t closer = 0;
  for (std::size_t i = 0; i < d_ff.size(); ++i)
    if (d_vffpe[i] < d_ff[i]) ++closer;
  return static_cast<double>(closer) / static_cast<double>(d_ff.size());
}

double fraction_closer(const FeatureExtractor& fx, const std::vector<Image>& ff,
                       const std::vector<Image>& vffpe, const std::vector<Image>& refs,
                       const std::vector<Triple>& triples) {
  if (triples.empty()) throw ContractError("fraction_closer: empty set");
  std::vector<double> d_ff;
  std::vector<double> d_v;
  for (const Triple& t : triples) {
    if (t.ff >= ff.size() || t.vffpe >= vffpe.size() || t.ref >= refs.size())
      throw ContractError("fraction_closer: triple index out of range");
    d_ff.push_back(perceptual_distance(fx, ff[t.ff], refs[t.ref]));
    d_v.push_back(perceptual_distance(fx, vffpe[t.vffpe], refs[t.ref]));
  }
  return fraction_closer(d_ff, d_v);
}

}  // namespace cyclestain
