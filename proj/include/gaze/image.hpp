#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gaze/tensor.hpp"

namespace gaze {

/// Planar (channel-major) float image, pixel values nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  static Image zeros(std::size_t channels, std::size_t height, std::size_t width);

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  std::size_t plane() const { return height * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear sample at continuous pixel coordinates (pixel centers at integer
/// positions), clamping to the border.
float sample_bilinear(const Image& img, std::size_t c, double y, double x);

/// Bilinear resize using half-pixel centers.
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

void clamp_unit(Image& img);

/// Stacks images into a [B x C x H x W] tensor. All images must share a shape.
Tensor to_batch(std::span<const Image> images);
Tensor to_batch(std::span<const Image* const> images);

}  // namespace gaze
