#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "gla/errors.hpp"

namespace gla {

// Square RGB image, row-major height x width x channel, values in [0, 1].
struct Image {
  std::size_t side = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  static Image blank(std::size_t side, std::size_t channels = 3, double fill = 0.0) {
    return Image{side, channels, std::vector<double>(side * side * channels, fill)};
  }

  std::size_t index(std::size_t y, std::size_t x, std::size_t c) const { return (y * side + x) * channels + c; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[index(y, x, c)]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[index(y, x, c)]; }

  bool in_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  void clip() {
    for (auto& v : pixels) v = std::clamp(v, 0.0, 1.0);
  }

  bool operator==(const Image&) const = default;
};

}  // namespace gla
