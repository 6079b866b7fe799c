#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cyclestain/networks/networks.hpp"
#include "json.hpp"

namespace cyclestain {

enum class BlendMode { Feather, CenterCrop };

std::string_view to_string(BlendMode m);
BlendMode parse_blend(std::string_view s);

struct TilingPolicy {
  int tile = 512;
  int overlap = 64;
  BlendMode blend = BlendMode::Feather;

  /// 0 <= overlap < tile and tile divisible by `multiple`.
  void validate(int multiple) const;
};

/// One generator direction ready for inference.
struct Translator {
  GeneratorConfig config;
  ParamStore params;
  std::string ns{kGenFFPE};
};

/// Loads the generator in namespace `ns` from a training or export checkpoint.
Translator load_translator(const std::filesystem::path& ckpt, std::string_view ns = kGenFFPE);

/// Symmetric-range patch with sides divisible by 2^depth -> same-size output.
Image translate_patch(const Translator& t, const Image& patch);

/// Tiled translation over the clamped grid. Each tile owns the region up to the
/// midpoint of its overlap with each neighbour; feather blending ramps linearly
/// over `overlap` pixels across those boundaries, center-crop takes the owner
/// only. Tiles are computed on up to `threads` workers (0 = hardware
/// concurrency) and accumulated in grid order.
Image translate_slide(const Translator& t, const Image& slide, const TilingPolicy& policy,
                      int threads = 0);

struct BenchmarkReport {
  int region_h = 0;
  int region_w = 0;
  int repetitions = 0;
  TilingPolicy policy;
  int threads = 0;
  std::vector<double> seconds;
  double median_s = 0.0;
  double p95_s = 0.0;
  double pixels_per_second = 0.0;
  double warmup_s = 0.0;
  double setup_s = 0.0;
  double timed_total_s = 0.0;
  nlohmann::json hardware;
  double reference_s = 0.105;  // reported figure for a 2000x2000 region
  std::string reference_note = "published figure for a 2000x2000 region on a single GPU; informational";
};

void to_json(nlohmann::json& j, const BenchmarkReport& r);

/// Times translate_slide on a synthetic region after one warm-up pass. Only the
/// translation calls fall inside the timed window.
BenchmarkReport benchmark(const Translator& t, int region_h, int region_w, int repetitions,
                          const TilingPolicy& policy, int threads = 0);

nlohmann::json hardware_descriptor(int threads);

}  // namespace cyclestain
