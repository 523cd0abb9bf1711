#include "gaze/image.hpp"

#include <algorithm>
#include <cmath>

#include "gaze/errors.hpp"

namespace gaze {

Image Image::zeros(std::size_t channels, std::size_t height, std::size_t width) {
  return Image{channels, height, width, std::vector<float>(channels * height * width, 0.0f)};
}

float sample_bilinear(const Image& img, std::size_t c, double y, double x) {
  const double maxy = static_cast<double>(img.height - 1);
  const double maxx = static_cast<double>(img.width - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
  const double bottom = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ValidationError("resize_bilinear: empty target");
  Image out = Image::zeros(img.channels, height, width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out.at(c, y, x) = sample_bilinear(img, c, (static_cast<double>(y) + 0.5) * sy - 0.5,
                                          (static_cast<double>(x) + 0.5) * sx - 0.5);
  return out;
}

void clamp_unit(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw ValidationError("to_batch: no images");
  const Image& first = *images[0];
  std::vector<float> data;
  data.reserve(images.size() * first.pixels.size());
  for (const Image* img : images) {
    if (img->channels != first.channels || img->height != first.height || img->width != first.width)
      throw ValidationError("to_batch: images differ in shape");
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor::from_data(Shape{images.size(), first.channels, first.height, first.width},
                           std::move(data));
}

Tensor to_batch(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return to_batch(std::span<const Image* const>(ptrs));
}

}  // namespace gaze
