#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cyclestain/imaging/grid.hpp"
#include "cyclestain/imaging/image.hpp"

namespace cyclestain {

enum class Domain { FF, FFPE };

std::string_view to_string(Domain d);
/// Accepts "FF" or "FFPE" (case-insensitive); throws ConfigError otherwise.
Domain parse_domain(std::string_view s);

inline constexpr double kBackgroundCutoff = 0.85;
inline constexpr double kDefaultTissueThreshold = 0.25;

struct ExtractOptions {
  int patch = 512;
  int stride = 512;
  double tissue_threshold = kDefaultTissueThreshold;
  double background_cutoff = kBackgroundCutoff;

  void validate() const;
};

/// Share of pixels whose unit-range luma is below `cutoff`.
double tissue_fraction(const Image& img, double cutoff = kBackgroundCutoff);

struct ExtractedPatch {
  TileOrigin origin;
  double tissue_fraction = 0.0;
  Image image;
};

/// Tiles on the clamped grid whose tissue fraction reaches the threshold, in
/// row-major order. Throws ContractError when the patch exceeds the slide.
std::vector<ExtractedPatch> extract_patches(const Image& slide, const ExtractOptions& opt);

struct PatchRecord {
  std::string slide_id;
  TileOrigin origin;
  int slide_height = 0;
  int slide_width = 0;
  Domain domain = Domain::FF;
  std::string path;  // relative paths resolve against the manifest's directory
  std::string magnification = "20x";

  bool operator==(const PatchRecord&) const = default;
};

struct Manifest {
  int patch_size = 512;
  std::uint64_t seed = 0;
  double tissue_threshold = kDefaultTissueThreshold;
  double background_cutoff = kBackgroundCutoff;
  std::vector<PatchRecord> records;

  bool operator==(const Manifest&) const = default;
  /// Throws DataError on duplicate (slide, origin) pairs or origins outside the slide.
  void validate() const;
};

/// One JSON header line followed by one JSON object per record.
void write_manifest(const std::filesystem::path& path, const Manifest& m);
/// Throws DataError naming the line number for malformed content, mixed patch
/// sizes or duplicate (slide, origin) pairs.
Manifest read_manifest(const std::filesystem::path& path);

/// Absolute location of a record's image; DataError when it does not exist.
std::filesystem::path resolve_patch(const std::filesystem::path& manifest_path, const PatchRecord& r);

}  // namespace cyclestain
