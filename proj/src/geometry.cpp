#include "vlconn/geometry.hpp"

namespace vlconn {

GridShape patch_count(int resolution, int patch_size) {
  if (patch_size <= 0 || resolution <= 0) {
    throw GeometryError("patch_count: resolution " + std::to_string(resolution) +
                        " and patch size " + std::to_string(patch_size) + " must be positive");
  }
  if (resolution % patch_size != 0) {
    throw GeometryError("patch_count: resolution " + std::to_string(resolution) +
                        " is not divisible by patch size " + std::to_string(patch_size));
  }
  const int side = resolution / patch_size;
  return GridShape{side, side, patch_size};
}

std::vector<int> window_bounds(int extent, int windows) {
  std::vector<int> bounds(static_cast<std::size_t>(windows) + 1);
  for (int i = 0; i <= windows; ++i) {
    bounds[i] = static_cast<int>((static_cast<long long>(i) * extent) / windows);
  }
  return bounds;
}

std::vector<std::vector<int>> window_partition(const GridShape& grid, int q_side) {
  if (q_side < 1 || q_side > std::min(grid.height, grid.width)) {
    throw GeometryError("window_partition: q_side " + std::to_string(q_side) +
                        " outside [1, " + std::to_string(std::min(grid.height, grid.width)) +
                        "] for a " + std::to_string(grid.height) + "x" +
                        std::to_string(grid.width) + " grid");
  }
  const std::vector<int> rows = window_bounds(grid.height, q_side);
  const std::vector<int> cols = window_bounds(grid.width, q_side);
  std::vector<std::vector<int>> groups;
  groups.reserve(static_cast<std::size_t>(q_side) * q_side);
  for (int wy = 0; wy < q_side; ++wy) {
    for (int wx = 0; wx < q_side; ++wx) {
      std::vector<int> group;
      for (int y = rows[wy]; y < rows[wy + 1]; ++y) {
        for (int x = cols[wx]; x < cols[wx + 1]; ++x) group.push_back(y * grid.width + x);
      }
      groups.push_back(std::move(group));
    }
  }
  return groups;
}

}  // namespace vlconn
