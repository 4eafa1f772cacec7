#pragma once

// Edge extraction from binary masks with the 3x3 Laplacian kernel.

#include <array>
#include <cstdint>
#include <vector>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

struct LaplacianKernel {
  static constexpr std::array<std::array<int, 3>, 3> weights{{{-1, -1, -1}, {-1, 8, -1}, {-1, -1, -1}}};
};

/// Signed integer convolution output T, same dimensions as the input plane.
struct ResponseGrid {
  int height = 0;
  int width = 0;
  std::vector<int> values;

  int at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// T(x,y) = sum F(i,j) I(x+i,y+j) over the input zero-padded by one pixel.
ResponseGrid convolve_laplacian(const BinaryPlane& mask);

/// Keeps input pixels whose Laplacian response is non-zero. For binary input
/// this is the set of foreground pixels with at least one background (or
/// out-of-bounds) 8-neighbour.
BinaryPlane extract_edges(const BinaryPlane& mask);

/// Edge plane of one class. For the disc with `include_interior_classes` the
/// cup counts as disc, so the result is the outer disc contour only.
BinaryPlane edges_for_class(const LabelMask& mask, Label class_id, bool include_interior_classes = true);

}  // namespace edgeseg
