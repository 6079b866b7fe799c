#include "cyclestain/inference/inference.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/grid.hpp"
#include "cyclestain/networks/checkpoint.hpp"

#ifndef CYCLESTAIN_BUILD_ID
#define CYCLESTAIN_BUILD_ID "unknown"
#endif

namespace cyclestain {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Core bounds of each tile along one axis: the midpoint of each overlap.
std::vector<std::pair<int, int>> axis_cores(const std::vector<int>& pos, int tile, int extent) {
  std::vector<std::pair<int, int>> cores(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const int lo = i == 0 ? 0 : (pos[i] + pos[i - 1] + tile) / 2;
    const int hi = i + 1 == pos.size() ? extent : (pos[i + 1] + pos[i] + tile) / 2;
    cores[i] = {lo, hi};
  }
  return cores;
}

// Per-pixel weight along one axis for a tile whose core is [lo, hi).
std::vector<float> axis_weights(int origin, int tile, std::pair<int, int> core, int extent,
                                int overlap, BlendMode mode) {
  std::vector<float> w(tile, 0.0F);
  const auto [lo, hi] = core;
  for (int k = 0; k < tile; ++k) {
    const int p = origin + k;
    if (mode == BlendMode::CenterCrop || overlap == 0) {
      w[k] = (p >= lo && p < hi) ? 1.0F : 0.0F;
      continue;
    }
    const double c = p + 0.5;
    const double rin = lo == 0 ? 1.0 : std::clamp((c - lo) / overlap + 0.5, 0.0, 1.0);
    const double rout = hi == extent ? 1.0 : std::clamp((hi - c) / overlap + 0.5, 0.0, 1.0);
    w[k] = static_cast<float>(rin * rout);
  }
  return w;
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(colon + 2);
    }
  return "unknown";
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string_view to_string(BlendMode m) { return m == BlendMode::Feather ? "feather" : "center-crop"; }

BlendMode parse_blend(std::string_view s) {
  if (s == "feather") return BlendMode::Feather;
  if (s == "center-crop" || s == "center_crop") return BlendMode::CenterCrop;
  throw ConfigError("unknown blend mode '" + std::string(s) + "' (expected feather or center-crop)");
}

void TilingPolicy::validate(int multiple) const {
  if (tile < 1) throw ConfigError("tile must be >= 1");
  if (overlap < 0 || overlap >= tile) throw ConfigError("overlap must satisfy 0 <= overlap < tile");
  if (tile % multiple != 0)
    throw ConfigError("tile " + std::to_string(tile) + " must be divisible by " + std::to_string(multiple));
}

Translator load_translator(const std::filesystem::path& ckpt, std::string_view ns) {
  const Checkpoint c = load_checkpoint(ckpt);
  const nlohmann::json* gen = nullptr;
  if (c.config.contains("model")) gen = &c.config.at("model").at("generator");
  else if (c.config.contains("generator")) gen = &c.config.at("generator");
  if (!gen) throw DataError(ckpt.string() + ": checkpoint has no generator configuration");
  Translator t;
  t.config = gen->get<GeneratorConfig>();
  t.ns = std::string(ns);
  if (!c.tensors.has_namespace(ns))
    throw DataError(ckpt.string() + ": checkpoint has no namespace " + std::string(ns));
  t.params = c.tensors.subset(ns);
  return t;
}

Image translate_patch(const Translator& t, const Image& patch) {
  if (patch.range() != ValueRange::Symmetric)
    throw ContractError("translate_patch: input must be normalized to [-1,1]");
  const int m = t.config.required_multiple();
  if (patch.height() % m != 0 || patch.width() % m != 0)
    throw ContractError("translate_patch: patch " + std::to_string(patch.height()) + "x" +
                        std::to_string(patch.width()) + " is not divisible by " + std::to_string(m));
  return generator_forward(t.config, t.params, t.ns, patch);
}

Image translate_slide(const Translator& t, const Image& slide, const TilingPolicy& policy, int threads) {
  policy.validate(t.config.required_multiple());
  if (slide.range() != ValueRange::Symmetric)
    throw ContractError("translate_slide: input must be normalized to [-1,1]");
  if (slide.height() < policy.tile || slide.width() < policy.tile)
    throw ContractError("translate_slide: slide " + std::to_string(slide.height()) + "x" +
                        std::to_string(slide.width()) + " is smaller than tile " +
                        std::to_string(policy.tile) + "; pad the slide to at least one tile");

  const PatchGrid grid = plan_grid(slide.height(), slide.width(), policy.tile, policy.overlap);
  const auto row_cores = axis_cores(grid.rows, policy.tile, slide.height());
  const auto col_cores = axis_cores(grid.columns, policy.tile, slide.width());

  std::vector<Image> outputs(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      const TileOrigin o = grid.origins[i];
      outputs[i] = translate_patch(t, slide.crop(o.y, o.x, policy.tile, policy.tile));
    }
  };
  int n = threads > 0 ? threads : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  n = std::min<int>(n, static_cast<int>(grid.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
  }

  const int channels = outputs.front().channels();
  const int h = slide.height();
  const int w = slide.width();
  std::vector<double> acc(static_cast<std::size_t>(channels) * h * w, 0.0);
  std::vector<double> norm(static_cast<std::size_t>(h) * w, 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const TileOrigin o = grid.origins[i];
    const std::size_t r = std::find(grid.rows.begin(), grid.rows.end(), o.y) - grid.rows.begin();
    const std::size_t c = std::find(grid.columns.begin(), grid.columns.end(), o.x) - grid.columns.begin();
    const auto wy = axis_weights(o.y, policy.tile, row_cores[r], h, policy.overlap, policy.blend);
    const auto wx = axis_weights(o.x, policy.tile, col_cores[c], w, policy.overlap, policy.blend);
    const Image& out = outputs[i];
    for (int y = 0; y < policy.tile; ++y) {
      if (wy[y] == 0.0F) continue;
      for (int x = 0; x < policy.tile; ++x) {
        const double wt = static_cast<double>(wy[y]) * wx[x];
        if (wt == 0.0) continue;
        const std::size_t p = static_cast<std::size_t>(o.y + y) * w + (o.x + x);
        norm[p] += wt;
        for (int ch = 0; ch < channels; ++ch) acc[ch * norm.size() + p] += wt * out.at(ch, y, x);
      }
    }
  }

  Image result(channels, h, w, ValueRange::Symmetric);
  for (int ch = 0; ch < channels; ++ch) {
    auto plane = result.plane(ch);
    for (std::size_t p = 0; p < norm.size(); ++p)
      plane[p] = static_cast<float>(std::clamp(acc[ch * norm.size() + p] / norm[p], -1.0, 1.0));
  }
  return result;
}

nlohmann::json hardware_descriptor(int threads) {
  return {{"cpu", cpu_model()},
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"worker_threads", threads},
          {"compiler", __VERSION__},
          {"build_id", CYCLESTAIN_BUILD_ID}};
}

void to_json(nlohmann::json& j, const BenchmarkReport& r) {
  j = {{"region", {r.region_h, r.region_w}},
       {"repetitions", r.repetitions},
       {"tile", r.policy.tile},
       {"overlap", r.policy.overlap},
       {"blend", to_string(r.policy.blend)},
       {"threads", r.threads},
       {"seconds", r.seconds},
       {"median_s", r.median_s},
       {"p95_s", r.p95_s},
       {"pixels_per_second", r.pixels_per_second},
       {"phases", {{"setup_s", r.setup_s}, {"warmup_s", r.warmup_s}, {"timed_total_s", r.timed_total_s}}},
       {"hardware", r.hardware},
       {"reference", {{"seconds", r.reference_s}, {"region", {2000, 2000}}, {"note", r.reference_note}}}};
}

BenchmarkReport benchmark(const Translator& t, int region_h, int region_w, int repetitions,
                          const TilingPolicy& policy, int threads) {
  if (region_h <= 0 || region_w <= 0) throw ConfigError("benchmark: region must be non-empty");
  if (repetitions < 1) throw ConfigError("benchmark: repetitions must be >= 1");
  BenchmarkReport rep;
  rep.region_h = region_h;
  rep.region_w = region_w;
  rep.repetitions = repetitions;
  rep.policy = policy;
  rep.threads = threads > 0 ? threads : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));

  auto t0 = Clock::now();
  Image slide(3, region_h, region_w, ValueRange::Symmetric);
  Rng rng(derive_seed(0, "benchmark-slide"));
  for (float& v : slide.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  rep.setup_s = seconds_since(t0);

  t0 = Clock::now();
  (void)translate_slide(t, slide, policy, rep.threads);
  rep.warmup_s = seconds_since(t0);

  for (int i = 0; i < repetitions; ++i) {
    t0 = Clock::now();
    (void)translate_slide(t, slide, policy, rep.threads);
    rep.seconds.push_back(seconds_since(t0));
  }
  for (double s : rep.seconds) rep.timed_total_s += s;
  rep.median_s = quantile(rep.seconds, 0.5);
  rep.p95_s = quantile(rep.seconds, 0.95);
  rep.pixels_per_second = static_cast<double>(region_h) * region_w / rep.median_s;
  rep.hardware = hardware_descriptor(rep.threads);
  return rep;
}

}  // namespace cyclestain
