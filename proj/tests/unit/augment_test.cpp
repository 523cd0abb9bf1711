#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gaze/augment.hpp"
#include "gaze/data.hpp"
#include "gaze/errors.hpp"
#include "support.hpp"

using namespace gaze;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t c = 3, std::size_t h = 16, std::size_t w = 12) {
  Image img = Image::zeros(c, h, w);
  for (float& v : img.pixels) v = static_cast<float>(uniform(rng, 0, 1));
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, double(std::abs(a.pixels[i] - b.pixels[i])));
  return m;
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("double horizontal flip is the identity") {
    std::mt19937_64 rng(1);
    auto img = random_image(rng);
    auto once = apply_op(img, AugmentOp::horizontal_flip, 0);
    CHECK(once != img);
    CHECK(once.at(1, 3, 0) == img.at(1, 3, img.width - 1));
    CHECK(apply_op(once, AugmentOp::horizontal_flip, 0) == img);
  }

  TEST_CASE("neutral magnitudes are exact identities") {
    std::mt19937_64 rng(2);
    auto img = random_image(rng);
    CHECK(apply_op(img, AugmentOp::brightness, 1.0) == img);
    CHECK(apply_op(img, AugmentOp::contrast, 1.0) == img);
    CHECK(apply_op(img, AugmentOp::saturation, 1.0) == img);
    CHECK(apply_op(img, AugmentOp::hue, 0.0) == img);
    CHECK(apply_op(img, AugmentOp::zoom, 1.0) == img);
    CHECK(apply_op(img, AugmentOp::rescale, 1.0) == img);
  }

  TEST_CASE("the HSV round trip preserves colors") {
    std::mt19937_64 rng(3);
    auto img = random_image(rng);
    // A full turn of the hue circle and a saturation factor that clamps
    // nothing both go through RGB -> HSV -> RGB.
    CHECK(max_abs_diff(apply_op(img, AugmentOp::hue, 1.0), img) < 1e-5);
    CHECK(max_abs_diff(apply_op(img, AugmentOp::saturation, 1.0 + 1e-12), img) < 1e-5);
  }

  TEST_CASE("zoom matches a direct bilinear resample of the center crop") {
    // 9x9 image with one bright pixel at the center.
    Image img = Image::zeros(1, 9, 9);
    img.at(0, 4, 4) = 1.0f;
    auto out = apply_op(img, AugmentOp::zoom, 2.0);
    const double origin = (9.0 - 4.5) / 2.0;
    auto tent = [](double d) { return std::max(0.0, 1.0 - std::abs(d)); };
    std::size_t lit_in_row = 0;
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        const double sy = origin + (y + 0.5) / 2.0 - 0.5, sx = origin + (x + 0.5) / 2.0 - 0.5;
        CHECK(std::abs(out.at(0, y, x) - tent(sy - 4) * tent(sx - 4)) < 1e-6);
        if (y == 4 && out.at(0, y, x) > 0) ++lit_in_row;
      }
    // Samples land at 3.5, 4.0 and 4.5: the lit pixel now covers three columns.
    CHECK(lit_in_row == 3);
  }

  TEST_CASE("every op keeps the shape and the unit range at extreme magnitudes") {
    std::mt19937_64 rng(4);
    auto img = random_image(rng);
    const std::vector<std::pair<AugmentOp, double>> cases{
        {AugmentOp::horizontal_flip, 0}, {AugmentOp::rescale, 0.5}, {AugmentOp::rescale, 1.7},
        {AugmentOp::zoom, 1.9},          {AugmentOp::brightness, 3}, {AugmentOp::brightness, 0.1},
        {AugmentOp::contrast, 4},        {AugmentOp::contrast, 0},   {AugmentOp::hue, -0.4},
        {AugmentOp::hue, 0.7},           {AugmentOp::saturation, 5}, {AugmentOp::saturation, 0}};
    for (const auto& [op, m] : cases) {
      CAPTURE(to_string(op));
      auto out = apply_op(img, op, m);
      CHECK(out.channels == img.channels);
      CHECK(out.height == img.height);
      CHECK(out.width == img.width);
      for (float v : out.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
    }
    CHECK_THROWS_AS(apply_op(img, AugmentOp::zoom, 0.5), ValidationError);
    CHECK_THROWS_AS(apply_op(img, AugmentOp::rescale, 0.0), ValidationError);
  }

  TEST_CASE("weak ranges sit inside strong ranges") {
    const auto weak = MagnitudeRanges::preset(AugmentStrength::weak);
    const auto strong = MagnitudeRanges::preset(AugmentStrength::strong);
    for (AugmentOp op : kAugmentPool) {
      CAPTURE(to_string(op));
      CHECK(strong.for_op(op).contains(weak.for_op(op)));
    }
    CHECK(strong.brightness.lo == 0.6);
    CHECK(strong.brightness.hi == 1.4);
    CHECK(weak.hue.hi == 0.03);
    CHECK(strong.zoom.hi == 1.4);
  }

  TEST_CASE("each view applies three distinct ops with in-range magnitudes") {
    std::mt19937_64 rng(5);
    auto img = random_image(rng);
    AugmentSpec spec;
    const auto ranges = MagnitudeRanges::preset(spec.strength);
    std::set<AugmentOp> seen;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<AppliedOp> applied;
      augment_view(img, spec, rng, &applied);
      REQUIRE(applied.size() == 3);
      std::set<AugmentOp> ops;
      for (const auto& a : applied) {
        ops.insert(a.op);
        seen.insert(a.op);
        if (a.op == AugmentOp::horizontal_flip) continue;
        const auto r = ranges.for_op(a.op);
        CHECK(a.magnitude >= r.lo);
        CHECK(a.magnitude <= r.hi);
      }
      CHECK(ops.size() == 3);
    }
    CHECK(seen.size() == kAugmentPool.size());
  }

  TEST_CASE("pairs are deterministic per (seed, epoch, index) and the views differ") {
    std::mt19937_64 rng(6);
    auto img = generate_sample(rng).image;
    AugmentSpec spec;
    spec.seed = 42;
    auto a = augment_pair(img, spec, 3, 17);
    auto b = augment_pair(img, spec, 3, 17);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(augment_pair(img, spec, 3, 18).first != a.first);
    for (std::uint64_t i = 0; i < 100; ++i) {
      auto [v1, v2] = augment_pair(img, spec, 0, i);
      REQUIRE(v1 != v2);
    }
  }

  TEST_CASE("augment settings validation and names") {
    AugmentSpec spec;
    spec.picks_per_view = 8;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    CHECK(parse_augment_op("zoom") == AugmentOp::zoom);
    CHECK_THROWS_AS(parse_augment_op("cutout"), ValidationError);
    CHECK(parse_augment_strength("weak") == AugmentStrength::weak);
  }
}
