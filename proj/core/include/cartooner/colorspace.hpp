#pragma once

#include <array>
#include <utility>

#include "cartooner/image.hpp"
#include "cartooner/tensor.hpp"

// Pixel-wise colorspace conversions (sRGB, D65) and the affine mapping of
// Lab onto the network's [-1, 1] range.
namespace cartooner::color {

using Lab = std::array<double, 3>;
using Hsv = std::array<double, 3>;

Lab rgb_to_lab(const Rgb& rgb);
// No clamping; may leave [0, 1] for out-of-gamut Lab.
Rgb lab_to_rgb_unclamped(const Lab& lab);
Rgb lab_to_rgb(const Lab& lab);
// Keeps L: out-of-gamut colors are desaturated toward the neutral axis
// (a, b scaled by the largest factor that stays in gamut).
Rgb lab_to_rgb_keep_lightness(const Lab& lab);

Hsv rgb_to_hsv(const Rgb& rgb);
Rgb hsv_to_rgb(const Hsv& hsv);

Image rgb_to_lab(const Image& img);
Image lab_to_rgb(const Image& img);
Image rgb_to_hsv(const Image& img);
Image hsv_to_rgb(const Image& img);

// Lab -> (L, ab); merge_lab(split_lab(x)) == x bit for bit.
std::pair<Image, Image> split_lab(const Image& lab);
Image merge_lab(const Image& l, const Image& ab);

// Network normalization: L' = L / 50 - 1, a' = a / 110, b' = b / 110.
inline constexpr double kLightnessScale = 50.0;
inline constexpr double kChromaScale = 110.0;

// Lab, L or ab image -> (1, C, H, W) tensor in [-1, 1].
nn::Tensor to_net(const Image& img);
// Inverse of to_net for the image at `index` along the batch axis. The
// channel count selects the space (3 Lab, 1 L, 2 ab); values are clamped to
// the Lab range.
Image from_net(const nn::Tensor& t, int index = 0);

}  // namespace cartooner::color
