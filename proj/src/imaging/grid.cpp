#include "cyclestain/imaging/grid.hpp"

#include <string>

#include "cyclestain/core/error.hpp"

namespace cyclestain {

std::vector<int> axis_positions(int extent, int tile, int stride) {
  if (tile < 1 || stride < 1) throw ContractError("grid: tile and stride must be positive");
  if (tile > extent)
    throw ContractError("grid: tile " + std::to_string(tile) + " exceeds extent " +
                        std::to_string(extent));
  std::vector<int> pos;
  int p = 0;
  while (true) {
    pos.push_back(p);
    if (p + tile >= extent) break;
    p += stride;
    if (p + tile > extent) p = extent - tile;
  }
  return pos;
}

PatchGrid plan_grid_stride(int extent_h, int extent_w, int tile, int stride) {
  PatchGrid g;
  g.extent_h = extent_h;
  g.extent_w = extent_w;
  g.tile = tile;
  g.stride = stride;
  g.rows = axis_positions(extent_h, tile, stride);
  g.columns = axis_positions(extent_w, tile, stride);
  g.origins.reserve(g.rows.size() * g.columns.size());
  for (int y : g.rows)
    for (int x : g.columns) g.origins.push_back({y, x});
  return g;
}

PatchGrid plan_grid(int extent_h, int extent_w, int tile, int overlap) {
  if (overlap < 0 || overlap >= tile)
    throw ContractError("plan_grid: overlap must satisfy 0 <= overlap < tile");
  return plan_grid_stride(extent_h, extent_w, tile, tile - overlap);
}

}  // namespace cyclestain
