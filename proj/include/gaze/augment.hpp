#pragma once

// Two-view stochastic augmentation for contrastive pretraining. Each view
// applies three distinct operations drawn from a pool of seven, with
// magnitudes sampled from the weak or strong preset ranges.

#include <array>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>

#include "gaze/image.hpp"

namespace gaze {

enum class AugmentOp { horizontal_flip, rescale, zoom, brightness, contrast, hue, saturation };

inline constexpr std::array<AugmentOp, 7> kAugmentPool{
    AugmentOp::horizontal_flip, AugmentOp::rescale,  AugmentOp::zoom,      AugmentOp::brightness,
    AugmentOp::contrast,        AugmentOp::hue,      AugmentOp::saturation};

std::string_view to_string(AugmentOp op);
/// Throws ValidationError for unknown names.
AugmentOp parse_augment_op(std::string_view name);

enum class AugmentStrength { weak, strong };

std::string_view to_string(AugmentStrength s);
AugmentStrength parse_augment_strength(std::string_view name);

struct Range {
  double lo = 0;
  double hi = 0;
  bool contains(const Range& other) const { return lo <= other.lo && other.hi <= hi; }
};

/// Magnitude ranges per op. Flip has no magnitude.
struct MagnitudeRanges {
  Range rescale;     // resolution factor
  Range zoom;        // center-crop zoom factor, >= 1
  Range brightness;  // multiplicative
  Range contrast;    // about the mean luminance
  Range hue;         // shift as a fraction of the hue circle
  Range saturation;  // multiplicative

  static MagnitudeRanges preset(AugmentStrength s);
  Range for_op(AugmentOp op) const;
};

struct AugmentSpec {
  AugmentStrength strength = AugmentStrength::strong;
  std::size_t picks_per_view = 3;
  std::uint64_t seed = 0;  // root of the per-sample streams

  void validate() const;
};

/// One op applied with an explicit magnitude. Output has the input's shape
/// and is clamped to [0, 1]. Magnitudes that mean "no change" (factor 1,
/// hue shift 0) return the input unchanged.
///
///  horizontal_flip  mirror the columns (magnitude ignored)
///  rescale s        resample to round(s*H) x round(s*W) and back to H x W
///  zoom z           center crop of size H/z x W/z resized to H x W
///  brightness f     x * f
///  contrast f       m + f (x - m), m the mean luminance
///  hue h            RGB -> HSV, H += h (mod 1), HSV -> RGB
///  saturation f     RGB -> HSV, S *= f (clamped), HSV -> RGB
Image apply_op(const Image& img, AugmentOp op, double magnitude);

struct AppliedOp {
  AugmentOp op;
  double magnitude;
};

/// Draws picks_per_view distinct ops (uniformly, without replacement) and
/// their magnitudes, then applies them in draw order.
Image augment_view(const Image& img, const AugmentSpec& spec, std::mt19937_64& rng,
                   std::vector<AppliedOp>* applied = nullptr);

/// Two independent views drawn from rng.
std::pair<Image, Image> augment_pair(const Image& img, const AugmentSpec& spec, std::mt19937_64& rng);

/// Two views from the stream (spec.seed, epoch, sample_index).
std::pair<Image, Image> augment_pair(const Image& img, const AugmentSpec& spec, std::uint64_t epoch,
                                     std::uint64_t sample_index);

}  // namespace gaze
