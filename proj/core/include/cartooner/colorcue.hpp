#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cartooner/image.hpp"

// Color guidance maps: superpixel color maps, HSV augmentation with
// luminance caching, k-means palettes and region color transfer.
namespace cartooner::cue {

struct HsvAugParams {
  double hue_shift = 0.0;  // circular, in [-0.5, 0.5)
  double sat_scale = 1.0;
  double val_scale = 1.0;
};

// Sampling ranges for sample_hsv_params.
inline constexpr double kSatMin = 0.5, kSatMax = 1.5;
inline constexpr double kValMin = 0.7, kValMax = 1.3;

struct Palette {
  std::vector<Rgb> colors;     // ordered by descending weight
  std::vector<double> weights;  // cluster fractions, sum to 1
  // Fewer distinct colors than requested; trailing entries repeat earlier
  // ones with zero weight.
  bool padded = false;
};

inline constexpr int kDefaultPaletteSize = 8;

struct Segmentation {
  int height = 0;
  int width = 0;
  int count = 0;
  std::vector<int> labels;  // row-major, values in [0, count)
};

struct SlicOptions {
  double compactness = 10.0;
  int iterations = 10;
};

// Initial SLIC centers as (y, x): a near-square grid with exactly n seeds,
// rows filled left to right at cell centers.
std::vector<std::array<double, 2>> slic_seeds(int height, int width, int n_segments);

// k-means over (Lab, xy). Deterministic; n_segments in [1, pixel count].
Segmentation slic(const Image& rgb, int n_segments, const SlicOptions& options = {});

// Replaces each pixel by the mean RGB of its segment.
Image fill_segment_means(const Image& rgb, const Segmentation& seg);

// 200 segments at 256 x 256, scaled with pixel area.
int default_segment_count(int height, int width);

Image superpixel_colormap(const Image& photo, int n_segments);

// Shifts hue, scales S and V, then restores each pixel's original Lab
// lightness. Identical params are applied to both images.
std::pair<Image, Image> hsv_augment(const Image& photo, const Image& cue, const HsvAugParams& p);
Image hsv_augment(const Image& rgb, const HsvAugParams& p);

HsvAugParams sample_hsv_params(std::uint64_t seed);

// k-means on RGB pixels (k-means++ seeding). When a mask is given, pixels
// are weighted by it and zero-weight pixels are ignored.
Palette extract_palette(const Image& rgb, int k = kDefaultPaletteSize, std::uint64_t seed = 0,
                        const RegionMask* mask = nullptr);

Rgb region_mean_color(const Image& rgb, const RegionMask& mask);

// C' = clamp(C + m * (target - c)) with c the mask-weighted mean of C.
Image palette_transfer(const Image& cue, const RegionMask& mask, const Rgb& target);

}  // namespace cartooner::cue
