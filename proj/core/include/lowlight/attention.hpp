#pragma once

#include <vector>

#include "lowlight/domain.hpp"

namespace lowlight {

/// Self-regularized attention S = 1 - Y and its max-pooled pyramid.
/// pyramid[k-1] holds level k at H/2^k × W/2^k.
struct AttentionMap {
  Tensor base;
  std::vector<Tensor> pyramid;

  /// Level 0 is the base map, level k >= 1 is pyramid[k-1].
  const Tensor& level(int k) const;
  int levels() const noexcept { return static_cast<int>(pyramid.size()); }

  /// Constant-valued map with a pyramid of the given depth.
  static AttentionMap constant(int height, int width, float value, int levels = 4);
};

/// BT.601 luma, 1×H×W.
Tensor luma(const Image& image);

/// S = 1 - Y per pixel; pyramid left empty.
AttentionMap compute_attention(const Image& image);

/// Fills the pyramid by repeated 2×2 stride-2 max pooling.
/// Throws ShapeError when the base is not divisible by 2^levels.
AttentionMap build_pyramid(AttentionMap map, int levels = 4);

}  // namespace lowlight
