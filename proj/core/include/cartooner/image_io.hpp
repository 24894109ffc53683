#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cartooner/image.hpp"

namespace cartooner::data {

// PNG or JPEG -> RGB in [0, 1]. 8-bit values are scaled by 1/255, 16-bit by
// 1/65535; grayscale is replicated to three channels and alpha dropped.
Image load_image(const std::filesystem::path& path);
// 8-bit, round-to-nearest. Format follows the extension (.png, .jpg, .jpeg).
void save_image(const Image& rgb, const std::filesystem::path& path);

Image decode_image(std::string_view bytes);
std::string encode_png(const Image& rgb);

// 8-bit grayscale mask, value / 255 = weight.
RegionMask load_mask(const std::filesystem::path& path);
RegionMask decode_mask(std::string_view bytes);
std::string encode_mask_png(const RegionMask& mask);
void save_mask(const RegionMask& mask, const std::filesystem::path& path);

// Bicubic resampling of any image; RGB results are clamped to [0, 1].
Image resize_bicubic(const Image& img, int height, int width);

}  // namespace cartooner::data
