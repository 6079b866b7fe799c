#pragma once

#include <vector>

namespace cyclestain {

struct TileOrigin {
  int y = 0;
  int x = 0;
  bool operator==(const TileOrigin&) const = default;
};

/// Row-major tiling of a slide. Edge tiles are shifted inward so that every tile
/// is full size and lies inside the extent.
struct PatchGrid {
  int extent_h = 0;
  int extent_w = 0;
  int tile = 0;
  int stride = 0;
  std::vector<int> rows;     // tile origins along y
  std::vector<int> columns;  // tile origins along x
  std::vector<TileOrigin> origins;

  std::size_t size() const { return origins.size(); }
};

/// Origins along one axis: 0, stride, 2*stride, ... with the last clamped to extent - tile.
std::vector<int> axis_positions(int extent, int tile, int stride);

PatchGrid plan_grid(int extent_h, int extent_w, int tile, int overlap);
PatchGrid plan_grid_stride(int extent_h, int extent_w, int tile, int stride);

}  // namespace cyclestain
