#include "gaze/augment.hpp"

#include <algorithm>
#include <cmath>

#include "gaze/errors.hpp"
#include "gaze/rng.hpp"

namespace gaze {
namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0f + (b - r) / d;
  } else {
    h = 4.0f + (r - g) / d;
  }
  h /= 6.0f;
  if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(h6) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s);
  const float q = v * (1 - s * f);
  const float t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

template <typename Fn>
Image map_hsv(const Image& img, Fn&& fn) {
  if (img.channels != 3) throw ValidationError("hue/saturation need a 3-channel image");
  Image out = img;
  const std::size_t n = img.plane();
  for (std::size_t i = 0; i < n; ++i) {
    float h, s, v;
    rgb_to_hsv(img.pixels[i], img.pixels[n + i], img.pixels[2 * n + i], h, s, v);
    fn(h, s);
    hsv_to_rgb(h, s, v, out.pixels[i], out.pixels[n + i], out.pixels[2 * n + i]);
  }
  return out;
}

Image zoom_center(const Image& img, double z) {
  Image out = Image::zeros(img.channels, img.height, img.width);
  const double oy = (static_cast<double>(img.height) - img.height / z) / 2.0;
  const double ox = (static_cast<double>(img.width) - img.width / z) / 2.0;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        out.at(c, y, x) = sample_bilinear(img, c, oy + (static_cast<double>(y) + 0.5) / z - 0.5,
                                          ox + (static_cast<double>(x) + 0.5) / z - 0.5);
  return out;
}

}  // namespace

std::string_view to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::horizontal_flip: return "horizontal_flip";
    case AugmentOp::rescale: return "rescale";
    case AugmentOp::zoom: return "zoom";
    case AugmentOp::brightness: return "brightness";
    case AugmentOp::contrast: return "contrast";
    case AugmentOp::hue: return "hue";
    case AugmentOp::saturation: return "saturation";
  }
  return "unknown";
}

AugmentOp parse_augment_op(std::string_view name) {
  for (AugmentOp op : kAugmentPool)
    if (to_string(op) == name) return op;
  throw ValidationError("unknown augmentation op '" + std::string(name) + "'");
}

std::string_view to_string(AugmentStrength s) { return s == AugmentStrength::weak ? "weak" : "strong"; }

AugmentStrength parse_augment_strength(std::string_view name) {
  if (name == "weak") return AugmentStrength::weak;
  if (name == "strong") return AugmentStrength::strong;
  throw ValidationError("unknown augmentation strength '" + std::string(name) + "'");
}

MagnitudeRanges MagnitudeRanges::preset(AugmentStrength s) {
  if (s == AugmentStrength::weak) {
    return {{0.9, 1.1}, {1.0, 1.1}, {0.9, 1.1}, {0.9, 1.1}, {-0.03, 0.03}, {0.9, 1.1}};
  }
  return {{0.7, 1.3}, {1.0, 1.4}, {0.6, 1.4}, {0.6, 1.4}, {-0.1, 0.1}, {0.6, 1.4}};
}

Range MagnitudeRanges::for_op(AugmentOp op) const {
  switch (op) {
    case AugmentOp::horizontal_flip: return {0, 0};
    case AugmentOp::rescale: return rescale;
    case AugmentOp::zoom: return zoom;
    case AugmentOp::brightness: return brightness;
    case AugmentOp::contrast: return contrast;
    case AugmentOp::hue: return hue;
    case AugmentOp::saturation: return saturation;
  }
  return {0, 0};
}

void AugmentSpec::validate() const {
  if (picks_per_view > kAugmentPool.size())
    throw ValidationError("picks_per_view cannot exceed the op pool size");
}

Image apply_op(const Image& img, AugmentOp op, double magnitude) {
  switch (op) {
    case AugmentOp::horizontal_flip: {
      Image out = img;
      for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
          for (std::size_t x = 0; x < img.width; ++x)
            out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
      return out;
    }
    case AugmentOp::rescale: {
      if (!(magnitude > 0)) throw ValidationError("rescale factor must be > 0");
      const auto h = static_cast<std::size_t>(std::lround(img.height * magnitude));
      const auto w = static_cast<std::size_t>(std::lround(img.width * magnitude));
      if (h == img.height && w == img.width) return img;
      Image out = resize_bilinear(resize_bilinear(img, std::max<std::size_t>(h, 1),
                                                  std::max<std::size_t>(w, 1)),
                                  img.height, img.width);
      clamp_unit(out);
      return out;
    }
    case AugmentOp::zoom: {
      if (!(magnitude >= 1.0)) throw ValidationError("zoom factor must be >= 1");
      if (magnitude == 1.0) return img;
      Image out = zoom_center(img, magnitude);
      clamp_unit(out);
      return out;
    }
    case AugmentOp::brightness: {
      if (magnitude == 1.0) return img;
      Image out = img;
      for (float& v : out.pixels) v = static_cast<float>(v * magnitude);
      clamp_unit(out);
      return out;
    }
    case AugmentOp::contrast: {
      if (magnitude == 1.0) return img;
      if (img.channels != 3) throw ValidationError("contrast needs a 3-channel image");
      const std::size_t n = img.plane();
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i)
        mean += 0.299 * img.pixels[i] + 0.587 * img.pixels[n + i] + 0.114 * img.pixels[2 * n + i];
      mean /= static_cast<double>(n);
      Image out = img;
      for (float& v : out.pixels) v = static_cast<float>(mean + magnitude * (v - mean));
      clamp_unit(out);
      return out;
    }
    case AugmentOp::hue: {
      if (magnitude == 0.0) return img;
      const auto shift = static_cast<float>(magnitude);
      Image out = map_hsv(img, [shift](float& h, float&) { h += shift; });
      clamp_unit(out);
      return out;
    }
    case AugmentOp::saturation: {
      if (magnitude == 1.0) return img;
      const auto f = static_cast<float>(magnitude);
      Image out = map_hsv(img, [f](float&, float& s) { s = std::clamp(s * f, 0.0f, 1.0f); });
      clamp_unit(out);
      return out;
    }
  }
  throw ValidationError("unknown augmentation op");
}

Image augment_view(const Image& img, const AugmentSpec& spec, std::mt19937_64& rng,
                   std::vector<AppliedOp>* applied) {
  spec.validate();
  const MagnitudeRanges ranges = MagnitudeRanges::preset(spec.strength);
  auto pool = kAugmentPool;
  // Partial Fisher-Yates: the first picks_per_view slots are the draw.
  for (std::size_t i = 0; i < spec.picks_per_view; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  Image out = img;
  for (std::size_t i = 0; i < spec.picks_per_view; ++i) {
    const Range r = ranges.for_op(pool[i]);
    const double magnitude = pool[i] == AugmentOp::horizontal_flip ? 0.0 : uniform(rng, r.lo, r.hi);
    out = apply_op(out, pool[i], magnitude);
    if (applied) applied->push_back({pool[i], magnitude});
  }
  return out;
}

std::pair<Image, Image> augment_pair(const Image& img, const AugmentSpec& spec, std::mt19937_64& rng) {
  Image first = augment_view(img, spec, rng);
  Image second = augment_view(img, spec, rng);
  return {std::move(first), std::move(second)};
}

std::pair<Image, Image> augment_pair(const Image& img, const AugmentSpec& spec, std::uint64_t epoch,
                                     std::uint64_t sample_index) {
  auto rng = make_stream(spec.seed, {epoch, sample_index});
  return augment_pair(img, spec, rng);
}

}  // namespace gaze
