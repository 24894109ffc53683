#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace cartooner {

// Value-range conventions:
//   RGB  sRGB in [0, 1]
//   Lab  L in [0, 100], a and b in [-128, 127]
//   HSV  H in [0, 1) circular, S and V in [0, 1]
//   L    single-channel Lab lightness; ab two-channel Lab chroma
enum class ColorSpace { RGB, Lab, HSV, L, ab };

int channels_for(ColorSpace space);
std::string_view to_string(ColorSpace space);

using Rgb = std::array<double, 3>;

// H x W x C interleaved raster tagged with its colorspace.
struct Image {
  int height = 0;
  int width = 0;
  ColorSpace space = ColorSpace::RGB;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, ColorSpace s, double fill = 0.0);

  [[nodiscard]] int channels() const { return channels_for(space); }
  [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  [[nodiscard]] double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels() + c];
  }
  [[nodiscard]] double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels() + c];
  }
  [[nodiscard]] double* pixel(std::size_t i) { return data.data() + i * channels(); }
  [[nodiscard]] const double* pixel(std::size_t i) const { return data.data() + i * channels(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Soft H x W selection in [0, 1].
struct RegionMask {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  RegionMask() = default;
  RegionMask(int h, int w, double fill = 0.0);

  [[nodiscard]] double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double sum() const;
  [[nodiscard]] bool matches(const Image& img) const {
    return height == img.height && width == img.width;
  }
};

// Throws ContractError unless img.space == expected.
void require_space(const Image& img, ColorSpace expected, std::string_view op);

}  // namespace cartooner
