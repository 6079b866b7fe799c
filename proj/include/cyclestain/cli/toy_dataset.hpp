#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cyclestain/imaging/image.hpp"

namespace cyclestain {

enum class ToyDomain {
  FrozenLike,   // domain A: pale palette, pixel speckle, ice-crack streaks
  ParaffinLike, // domain B: saturated palette, smooth
};

/// Synthetic tissue tile: stroma field, lumens and nuclei drawn from one shape
/// distribution, rendered in the palette and texture of `domain`. Values are
/// on the 8-bit grid so the in-memory image equals its PNG.
Image render_toy_image(ToyDomain domain, std::uint64_t seed, int index, int size = 512);

struct ToyDataset {
  std::vector<std::filesystem::path> domain_a;
  std::vector<std::filesystem::path> domain_b;
};

/// Writes out_dir/A/toy_A_<iii>.png and out_dir/B/toy_B_<iii>.png (zero-padded) for i < n_per_domain.
ToyDataset toy_dataset(const std::filesystem::path& out_dir, std::uint64_t seed, int n_per_domain,
                       int size = 512);

}  // namespace cyclestain
