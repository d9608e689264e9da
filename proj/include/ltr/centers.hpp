// SPDX-License-Identifier: Apache-2.0
/**
 * @file   centers.hpp
 * @brief  Per-class sets of K spatial feature centers and the nearest-neighbour
 *         upsampling that aligns a center with a feature map.
 */
#pragma once

#include <span>
#include <string>
#include <vector>

#include "ltr/tensor.hpp"

namespace ltr {

struct ClassCenters {
  int num_classes = 0;
  int k = 0;
  Shape shape{1, 0, 1, 1}; ///< c, h, w of one center (n unused)
  std::vector<double> data;

  ClassCenters() = default;
  ClassCenters(int classes, int per_class, Shape center_shape)
      : num_classes(classes), k(per_class), shape(center_shape) {
    shape.n = 1;
    if (classes < 1 || per_class < 1 || shape.c == 0)
      throw ConfigError("class centers need positive class count, K and channel count");
    data.assign(static_cast<std::size_t>(classes * per_class) * shape.sample_size(), 0.0);
  }

  std::size_t center_size() const { return shape.sample_size(); }
  std::size_t offset(int y, int i) const {
    return static_cast<std::size_t>(y * k + i) * center_size();
  }
  std::span<double> center(int y, int i) { return {data.data() + offset(y, i), center_size()}; }
  std::span<const double> center(int y, int i) const {
    return {data.data() + offset(y, i), center_size()};
  }
};

inline void check_upsample(const Shape &center, const Shape &target) {
  if (center.c != target.c || center.h > target.h || center.w > target.w)
    throw std::invalid_argument("cannot upsample center " + to_string(center) +
                                " to feature map " + to_string(target));
}

/// Nearest-neighbour upsampling of one C x h x w center to C x H x W.
inline std::vector<double> upsample_nearest(std::span<const double> center, const Shape &from,
                                            const Shape &to) {
  check_upsample(from, to);
  if (from.h == to.h && from.w == to.w)
    return {center.begin(), center.end()};
  std::vector<double> out(to.sample_size());
  for (std::size_t c = 0; c < to.c; ++c)
    for (std::size_t h = 0; h < to.h; ++h)
      for (std::size_t w = 0; w < to.w; ++w) {
        const std::size_t sh = h * from.h / to.h, sw = w * from.w / to.w;
        out[(c * to.h + h) * to.w + w] = center[(c * from.h + sh) * from.w + sw];
      }
  return out;
}

/// Adjoint of `upsample_nearest`: sums full-resolution gradients into center cells.
inline void upsample_nearest_adjoint(std::span<const double> grad_full, const Shape &from,
                                     const Shape &to, std::span<double> grad_center) {
  check_upsample(from, to);
  for (std::size_t c = 0; c < to.c; ++c)
    for (std::size_t h = 0; h < to.h; ++h)
      for (std::size_t w = 0; w < to.w; ++w) {
        const std::size_t sh = h * from.h / to.h, sw = w * from.w / to.w;
        grad_center[(c * from.h + sh) * from.w + sw] += grad_full[(c * to.h + h) * to.w + w];
      }
}

} // namespace ltr
