#include "lowlight/attention.hpp"

#include <algorithm>

#include "lowlight/error.hpp"

namespace lowlight {

const Tensor& AttentionMap::level(int k) const {
  if (k == 0) return base;
  if (k < 0 || k > levels()) throw ArgumentError("attention level " + std::to_string(k) + " not built");
  return pyramid[static_cast<std::size_t>(k - 1)];
}

AttentionMap AttentionMap::constant(int height, int width, float value, int levels) {
  AttentionMap m;
  m.base = Tensor::chw(1, height, width, value);
  return build_pyramid(std::move(m), levels);
}

Tensor luma(const Image& image) {
  if (image.rank() != 3 || image.channels() != 3) {
    throw ShapeError("luma: expected a 3-channel image, got " + shape_string(image.shape()));
  }
  const std::size_t plane = image.plane();
  Tensor y = Tensor::chw(1, image.height(), image.width());
  for (std::size_t i = 0; i < plane; ++i) {
    y[i] = 0.299f * image[i] + 0.587f * image[plane + i] + 0.114f * image[2 * plane + i];
  }
  return y;
}

AttentionMap compute_attention(const Image& image) {
  AttentionMap m;
  m.base = luma(image);
  for (float& v : m.base.values()) v = 1.0f - v;
  return m;
}

AttentionMap build_pyramid(AttentionMap map, int levels) {
  const int h = map.base.height(), w = map.base.width();
  const int div = 1 << levels;
  if (levels < 0 || h % div || w % div) {
    throw ShapeError("attention pyramid: " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by " + std::to_string(div));
  }
  map.pyramid.clear();
  const Tensor* prev = &map.base;
  for (int k = 1; k <= levels; ++k) {
    const int ph = prev->height() / 2, pw = prev->width() / 2;
    Tensor next = Tensor::chw(1, ph, pw);
    for (int i = 0; i < ph; ++i) {
      for (int j = 0; j < pw; ++j) {
        next.at(0, i, j) = std::max({prev->at(0, 2 * i, 2 * j), prev->at(0, 2 * i, 2 * j + 1),
                                     prev->at(0, 2 * i + 1, 2 * j), prev->at(0, 2 * i + 1, 2 * j + 1)});
      }
    }
    map.pyramid.push_back(std::move(next));
    prev = &map.pyramid.back();
  }
  return map;
}

}  // namespace lowlight
