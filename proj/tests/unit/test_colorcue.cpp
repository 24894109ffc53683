#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cartooner/colorcue.hpp"
#include "cartooner/colorspace.hpp"
#include "cartooner/error.hpp"
#include "test_support.hpp"

namespace {

using namespace cartooner;
using namespace cartooner::testing;

double max_l_error(const Image& a, const Image& b) {
  const Image la = color::rgb_to_lab(a);
  const Image lb = color::rgb_to_lab(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < la.pixel_count(); ++i) worst = std::max(worst, std::abs(la.pixel(i)[0] - lb.pixel(i)[0]));
  return worst;
}

TEST(Superpixel, ConstantImageStaysConstant) {
  const Image img = constant_rgb(12, 10, {0.2, 0.7, 0.4});
  for (int n : {1, 5, 30}) {
    const Image out = cue::superpixel_colormap(img, n);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(out.data[i], img.data[i], 1e-12);
  }
}

TEST(Superpixel, SingleSegmentIsGlobalMean) {
  const Image img = random_rgb(9, 7, 4);
  Rgb mean{};
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) mean[k] += img.pixel(i)[k] / img.pixel_count();
  }
  const Image out = cue::superpixel_colormap(img, 1);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(out.pixel(i)[k], mean[k], 1e-12);
  }
}

TEST(Superpixel, SeedGridHasExactCount) {
  for (int n : {1, 2, 3, 7, 16, 200}) {
    const auto seeds = cue::slic_seeds(64, 48, n);
    EXPECT_EQ(static_cast<int>(seeds.size()), n);
    for (const auto& s : seeds) {
      EXPECT_GE(s[0], 0.0);
      EXPECT_LT(s[0], 64.0);
      EXPECT_GE(s[1], 0.0);
      EXPECT_LT(s[1], 48.0);
    }
  }
}

TEST(Superpixel, TwoToneSplitsAtTheEdge) {
  const Image img = two_tone(8, 8, {0, 0, 0}, {1, 1, 1});
  const auto seeds = cue::slic_seeds(8, 8, 2);
  ASSERT_EQ(seeds.size(), 2u);
  // Both seeds sit on the horizontal axis, one per half.
  EXPECT_EQ(seeds[0][0], seeds[1][0]);
  EXPECT_LT(seeds[0][1], 4.0);
  EXPECT_GE(seeds[1][1], 4.0);

  // Brute-force nearest seed by color then position.
  Image expected(8, 8, ColorSpace::RGB);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double best = 1e300;
      int arg = 0;
      for (int s = 0; s < 2; ++s) {
        const int sy = static_cast<int>(seeds[s][0]), sx = static_cast<int>(seeds[s][1]);
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += 1e6 * std::pow(img.at(y, x, k) - img.at(sy, sx, k), 2);
        d += std::pow(y - seeds[s][0], 2) + std::pow(x - seeds[s][1], 2);
        if (d < best) best = d, arg = s;
      }
      for (int k = 0; k < 3; ++k) expected.at(y, x, k) = arg == 0 ? 0.0 : 1.0;
    }
  }
  const Image out = cue::superpixel_colormap(img, 2);
  for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(out.data[i], expected.data[i], 1e-12);
  for (int y = 0; y < 8; ++y) {
    EXPECT_EQ(out.at(y, 0, 0), 0.0);
    EXPECT_EQ(out.at(y, 7, 0), 1.0);
  }
}

TEST(Superpixel, TooManySegmentsIsAnError) {
  const Image img = random_rgb(4, 4, 1);
  EXPECT_THROW((void)cue::superpixel_colormap(img, 17), ContractError);
  EXPECT_THROW((void)cue::superpixel_colormap(img, 0), ContractError);
  EXPECT_NO_THROW((void)cue::superpixel_colormap(img, 16));
}

TEST(Superpixel, SegmentMeansAreIdempotent) {
  const Image img = synthetic_photo(32, 3);
  const cue::Segmentation seg = cue::slic(img, 20);
  const Image once = cue::fill_segment_means(img, seg);
  const Image twice = cue::fill_segment_means(once, seg);
  for (std::size_t i = 0; i < once.data.size(); ++i) EXPECT_NEAR(twice.data[i], once.data[i], 1e-12);
}

TEST(Superpixel, Deterministic) {
  const Image img = synthetic_photo(32, 8);
  EXPECT_EQ(cue::superpixel_colormap(img, 25), cue::superpixel_colormap(img, 25));
}

TEST(Superpixel, DefaultCountScalesWithArea) {
  EXPECT_EQ(cue::default_segment_count(256, 256), 200);
  EXPECT_EQ(cue::default_segment_count(128, 128), 50);
  EXPECT_GE(cue::default_segment_count(4, 4), 1);
}

TEST(HsvAugment, IdentityParamsKeepImages) {
  const Image photo = random_rgb(10, 10, 2);
  const Image cue_img = cue::superpixel_colormap(photo, 10);
  const auto [p2, c2] = cue::hsv_augment(photo, cue_img, {0.0, 1.0, 1.0});
  for (std::size_t i = 0; i < photo.data.size(); ++i) {
    EXPECT_NEAR(p2.data[i], photo.data[i], 1e-3);
    EXPECT_NEAR(c2.data[i], cue_img.data[i], 1e-3);
  }
}

TEST(HsvAugment, LightnessIsCachedForAnyParams) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Image photo = random_rgb(8, 8, 100 + seed);
    const Image cue_img = cue::superpixel_colormap(photo, 6);
    const cue::HsvAugParams p = cue::sample_hsv_params(seed);
    const auto [p2, c2] = cue::hsv_augment(photo, cue_img, p);
    EXPECT_LE(max_l_error(photo, p2), 1e-3) << "seed " << seed;
    EXPECT_LE(max_l_error(cue_img, c2), 1e-3) << "seed " << seed;
  }
}

TEST(HsvAugment, HalfTurnOnRedGivesCyanWithRedLightness) {
  const double red_l = color::rgb_to_lab(Rgb{1, 0, 0})[0];
  EXPECT_NEAR(red_l, 53.24, 0.005);  // frozen from the colorimetry oracle
  const Image red = constant_rgb(1, 1, {1, 0, 0});
  const Image out = cue::hsv_augment(red, {0.5, 1.0, 1.0});
  const auto hsv = color::rgb_to_hsv(Rgb{out.data[0], out.data[1], out.data[2]});
  EXPECT_NEAR(hsv[0], 0.5, 0.02);
  EXPECT_GT(out.data[1], out.data[0]);
  EXPECT_GT(out.data[2], out.data[0]);
  EXPECT_NEAR(color::rgb_to_lab(Rgb{out.data[0], out.data[1], out.data[2]})[0], 53.24, 0.005);
}

TEST(HsvAugment, SameParamsOnPhotoAndCue) {
  const Image img = random_rgb(6, 6, 12);
  const auto [a, b] = cue::hsv_augment(img, img, {0.3, 1.3, 0.8});
  EXPECT_EQ(a, b);
}

TEST(HsvAugment, RejectsNonPositiveScalesAndShapeMismatch) {
  const Image img = random_rgb(4, 4, 1);
  EXPECT_THROW((void)cue::hsv_augment(img, {0.0, 0.0, 1.0}), ContractError);
  EXPECT_THROW((void)cue::hsv_augment(img, {0.0, 1.0, -1.0}), ContractError);
  EXPECT_THROW((void)cue::hsv_augment(img, random_rgb(4, 5, 1), {0.0, 1.0, 1.0}), ContractError);
}

TEST(HsvParams, DeterministicPerSeed) {
  const auto a = cue::sample_hsv_params(77);
  const auto b = cue::sample_hsv_params(77);
  EXPECT_EQ(a.hue_shift, b.hue_shift);
  EXPECT_EQ(a.sat_scale, b.sat_scale);
  EXPECT_EQ(a.val_scale, b.val_scale);
}

TEST(HsvParams, RangesAndMoments) {
  const int n = 10000;
  double hue = 0, sat = 0, val = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = cue::sample_hsv_params(i);
    ASSERT_GE(p.hue_shift, -0.5);
    ASSERT_LT(p.hue_shift, 0.5);
    ASSERT_GE(p.sat_scale, cue::kSatMin);
    ASSERT_LE(p.sat_scale, cue::kSatMax);
    ASSERT_GE(p.val_scale, cue::kValMin);
    ASSERT_LE(p.val_scale, cue::kValMax);
    hue += p.hue_shift / n;
    sat += p.sat_scale / n;
    val += p.val_scale / n;
  }
  // Standard error of a uniform mean: width / sqrt(12 n).
  const double se_unit = 1.0 / std::sqrt(12.0 * n);
  EXPECT_LE(std::abs(hue - 0.0), 3 * se_unit);
  EXPECT_LE(std::abs(sat - 1.0), 3 * se_unit);
  EXPECT_LE(std::abs(val - 1.0), 3 * 0.6 * se_unit);
}

TEST(Palette, ConstantImageSingleColor) {
  const cue::Palette p = cue::extract_palette(constant_rgb(5, 5, {0.2, 0.4, 0.6}), 1);
  ASSERT_EQ(p.colors.size(), 1u);
  EXPECT_NEAR(p.colors[0][0], 0.2, 1e-12);
  EXPECT_NEAR(p.colors[0][2], 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(p.weights[0], 1.0);
  EXPECT_FALSE(p.padded);
}

TEST(Palette, TwoToneHalves) {
  const cue::Palette p = cue::extract_palette(two_tone(10, 10, {1, 0, 0}, {0, 0, 1}), 2);
  ASSERT_EQ(p.colors.size(), 2u);
  EXPECT_NEAR(p.weights[0], 0.5, 0.02);
  EXPECT_NEAR(p.weights[1], 0.5, 0.02);
  const bool red_first = p.colors[0][0] > 0.5;
  const Rgb red = red_first ? p.colors[0] : p.colors[1];
  const Rgb blue = red_first ? p.colors[1] : p.colors[0];
  EXPECT_NEAR(red[0], 1.0, 1e-9);
  EXPECT_NEAR(blue[2], 1.0, 1e-9);
}

TEST(Palette, DefaultSizeIsEightAndPadsFewColors) {
  EXPECT_EQ(cue::kDefaultPaletteSize, 8);
  const cue::Palette many = cue::extract_palette(random_rgb(16, 16, 2));
  EXPECT_EQ(many.colors.size(), 8u);
  EXPECT_FALSE(many.padded);
  EXPECT_NEAR(std::accumulate(many.weights.begin(), many.weights.end(), 0.0), 1.0, 1e-9);
  for (std::size_t i = 1; i < many.weights.size(); ++i) EXPECT_GE(many.weights[i - 1], many.weights[i]);

  const cue::Palette few = cue::extract_palette(two_tone(6, 6, {1, 1, 0}, {0, 1, 1}));
  EXPECT_EQ(few.colors.size(), 8u);
  EXPECT_TRUE(few.padded);
  EXPECT_NEAR(std::accumulate(few.weights.begin(), few.weights.end(), 0.0), 1.0, 1e-9);
}

TEST(Palette, DeterministicPerSeedAndMaskRestricts) {
  const Image img = random_rgb(12, 12, 6);
  const auto a = cue::extract_palette(img, 4, 9);
  const auto b = cue::extract_palette(img, 4, 9);
  EXPECT_EQ(a.colors, b.colors);
  const Image tt = two_tone(6, 6, {1, 0, 0}, {0, 1, 0});
  const RegionMask left = left_mask(6, 6, 3);
  const auto p = cue::extract_palette(tt, 3, 0, &left);
  for (const Rgb& c : p.colors) EXPECT_NEAR(c[0], 1.0, 1e-9);
  EXPECT_THROW((void)cue::extract_palette(tt, 0), ContractError);
}

TEST(PaletteTransfer, TargetEqualToMeanIsNoOp) {
  const Image img = random_rgb(6, 6, 3);
  const RegionMask m = left_mask(6, 6, 4);
  const Rgb mean = cue::region_mean_color(img, m);
  const Image out = cue::palette_transfer(img, m, mean);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(out.data[i], img.data[i], 1e-12);
}

TEST(PaletteTransfer, UniformRegionTakesTarget) {
  const Image img = constant_rgb(4, 4, {0.4, 0.4, 0.4});
  const Image out = cue::palette_transfer(img, full_mask(4, 4), {0.6, 0.5, 0.3});
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    EXPECT_NEAR(out.pixel(i)[0], 0.6, 1e-12);
    EXPECT_NEAR(out.pixel(i)[1], 0.5, 1e-12);
    EXPECT_NEAR(out.pixel(i)[2], 0.3, 1e-12);
  }
}

TEST(PaletteTransfer, ClampsAndLeavesUnmaskedPixels) {
  Image img = two_tone(4, 4, {0.9, 0.2, 0.2}, {0.1, 0.1, 0.1});
  img.at(0, 0, 0) = 1.0;
  const RegionMask m = left_mask(4, 4, 2);
  // Region red mean is 0.9125, so the shift pushes (0, 0) past 1.
  const Image out = cue::palette_transfer(img, m, {1.0, 0.2, 0.2});
  EXPECT_EQ(out.at(0, 0, 0), 1.0);
  for (int y = 0; y < 4; ++y) {
    for (int x = 2; x < 4; ++x) {
      for (int k = 0; k < 3; ++k) EXPECT_EQ(out.at(y, x, k), img.at(y, x, k));
    }
  }
}

TEST(PaletteTransfer, FullMaskHitsInGamutTargetMean) {
  const Image img = synthetic_photo(16, 4);
  Image mid = img;
  for (double& v : mid.data) v = 0.25 + 0.5 * v;
  const Rgb target{0.45, 0.55, 0.5};
  const Image out = cue::palette_transfer(mid, full_mask(16, 16), target);
  const Rgb mean = cue::region_mean_color(out, full_mask(16, 16));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(mean[k], target[k], 1e-12);
}

TEST(PaletteTransfer, ZeroMaskIsAnError) {
  EXPECT_THROW((void)cue::palette_transfer(random_rgb(3, 3, 1), RegionMask(3, 3), {0.5, 0.5, 0.5}), ContractError);
}

TEST(RegionMean, Cases) {
  EXPECT_NEAR(cue::region_mean_color(constant_rgb(3, 3, {0.3, 0.6, 0.9}), full_mask(3, 3))[1], 0.6, 1e-12);
  const Image tt = two_tone(4, 4, {0.1, 0.2, 0.3}, {0.9, 0.8, 0.7});
  const Rgb left = cue::region_mean_color(tt, left_mask(4, 4, 2));
  EXPECT_NEAR(left[0], 0.1, 1e-12);
  EXPECT_NEAR(left[2], 0.3, 1e-12);

  // weights [1, 0.5] over values [0, 0.9]: (1*0 + 0.5*0.9) / 1.5
  Image two(1, 2, ColorSpace::RGB);
  for (int k = 0; k < 3; ++k) two.at(0, 1, k) = 0.9;
  RegionMask w(1, 2);
  w.at(0, 0) = 1.0;
  w.at(0, 1) = 0.5;
  EXPECT_NEAR(cue::region_mean_color(two, w)[0], (1.0 * 0.0 + 0.5 * 0.9) / 1.5, 1e-15);
  EXPECT_NEAR(cue::region_mean_color(two, w)[0], 0.3, 1e-12);
  EXPECT_THROW((void)cue::region_mean_color(two, RegionMask(1, 2)), ContractError);
}

}  // namespace
