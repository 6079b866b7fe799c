#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cyclestain/imaging/image.hpp"
#include "cyclestain/networks/param_store.hpp"

namespace cyclestain {

/// Frozen convolutional feature stack. Stage i is conv3x3(pad 1) + ReLU, with a
/// 2x2 average pool in front of every stage after the first. Features are taken
/// after each stage's ReLU.
struct FeatureExtractor {
  std::string name;
  std::vector<int> widths;            // output channels per stage
  std::vector<double> layer_weights;  // one non-negative weight per stage
  ParamStore params;                  // features/stage{i}/weight, features/stage{i}/bias

  void validate() const;
  /// Input side must be at least this many pixels.
  int min_extent() const { return 1 << (widths.size() - 1); }
};

/// Fixed-seed random convolution stack (He-normal weights, zero bias).
FeatureExtractor random_feature_extractor(std::uint64_t seed = 0, std::vector<int> widths = {16, 32, 64},
                                          std::vector<double> layer_weights = {});

/// Pretrained weights stored in the checkpoint format; the config carries
/// "widths" and optionally "layer_weights".
FeatureExtractor load_feature_extractor(const std::filesystem::path& path);
void save_feature_extractor(const std::filesystem::path& path, const FeatureExtractor& fx);

/// "builtin:random" or a checkpoint path.
FeatureExtractor resolve_feature_extractor(const std::string& spec, std::uint64_t seed = 0);

/// Sum over stages of w_l * mean over locations of sum over channels of the
/// squared difference between per-location unit-normalized features.
double perceptual_distance(const FeatureExtractor& fx, const Image& a, const Image& b);

struct DistanceSummary {
  std::vector<double> distances;
  double mean = 0.0;
  double std = 0.0;  // sample (n-1); 0 for a single pair
};

/// Mean and sample std of d(candidates[i], references[j]) over pairing (i, j).
DistanceSummary lpips_summary(const FeatureExtractor& fx, const std::vector<Image>& candidates,
                              const std::vector<Image>& references,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairing);

struct Triple {
  std::size_t ff = 0;
  std::size_t vffpe = 0;
  std::size_t ref = 0;
};

/// Share of triples with d(vffpe, ref) < d(ff, ref); ties are not closer.
double fraction_closer(const FeatureExtractor& fx, const std::vector<Image>& ff,
                       const std::vector<Image>& vffpe, const std::vector<Image>& refs,
                       const std::vector<Triple>& triples);

/// Same statistic from precomputed distances.
double fraction_closer(const std::vector<double>& d_ff, const std::vector<double>& d_vffpe);

}  // namespace cyclestain
