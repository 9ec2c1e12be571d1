#pragma once

#include "vlconn/autodiff.hpp"
#include "vlconn/errors.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace vlconn {

// Square patch grid of a vision encoder. Patches are raster ordered:
// index = row * width + col.
struct GridShape {
  int height = 0;
  int width = 0;
  int patch_size = 14;

  int patch_count() const { return height * width; }
  int resolution() const { return height * patch_size; }
  bool operator==(const GridShape&) const = default;
};

GridShape patch_count(int resolution, int patch_size = 14);

// Grid of per-patch embeddings, one row per patch in raster order.
template <typename Scalar>
struct PosEmbedGrid {
  int height = 0;
  int width = 0;
  MatrixX<Scalar> embeddings;  // (height * width) x dim

  Index dim() const { return embeddings.cols(); }
};

enum class InterpolationMethod { Bilinear };

// Resamples src onto target's height x width using align-corners sampling, so
// the four corner embeddings carry over unchanged.
template <typename Scalar>
PosEmbedGrid<Scalar> interpolate_pos_embed(const PosEmbedGrid<Scalar>& src, const GridShape& target,
                                           InterpolationMethod method = InterpolationMethod::Bilinear) {
  (void)method;
  if (src.height < 2 || src.width < 2) {
    throw GeometryError("interpolate_pos_embed: source grid must be at least 2x2, got " +
                        std::to_string(src.height) + "x" + std::to_string(src.width));
  }
  if (src.embeddings.rows() != static_cast<Index>(src.height) * src.width) {
    throw GeometryError("interpolate_pos_embed: source has " +
                        std::to_string(src.embeddings.rows()) + " rows for a " +
                        std::to_string(src.height) + "x" + std::to_string(src.width) + " grid");
  }
  if (target.height < 1 || target.width < 1) {
    throw GeometryError("interpolate_pos_embed: target grid must be at least 1x1, got " +
                        std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  PosEmbedGrid<Scalar> out;
  out.height = target.height;
  out.width = target.width;
  out.embeddings.resize(static_cast<Index>(target.height) * target.width, src.dim());

  auto coord = [](int i, int n_out, int n_in) -> Scalar {
    if (n_out == 1) return Scalar(0);
    return Scalar(i) * Scalar(n_in - 1) / Scalar(n_out - 1);
  };
  for (int y = 0; y < target.height; ++y) {
    const Scalar sy = coord(y, target.height, src.height);
    const int y0 = std::min(static_cast<int>(sy), src.height - 2);
    const Scalar ty = sy - Scalar(y0);
    for (int x = 0; x < target.width; ++x) {
      const Scalar sx = coord(x, target.width, src.width);
      const int x0 = std::min(static_cast<int>(sx), src.width - 2);
      const Scalar tx = sx - Scalar(x0);
      const auto e00 = src.embeddings.row(y0 * src.width + x0);
      const auto e01 = src.embeddings.row(y0 * src.width + x0 + 1);
      const auto e10 = src.embeddings.row((y0 + 1) * src.width + x0);
      const auto e11 = src.embeddings.row((y0 + 1) * src.width + x0 + 1);
      out.embeddings.row(y * target.width + x) =
          (Scalar(1) - ty) * ((Scalar(1) - tx) * e00 + tx * e01) +
          ty * ((Scalar(1) - tx) * e10 + tx * e11);
    }
  }
  return out;
}

// Axis boundaries of adaptive windows: window i spans [floor(i*n/q), floor((i+1)*n/q)).
std::vector<int> window_bounds(int extent, int windows);

// q_side^2 groups of patch indices, windows in raster order, each group's
// indices in raster order. Together the groups tile the grid.
std::vector<std::vector<int>> window_partition(const GridShape& grid, int q_side);

}  // namespace vlconn
