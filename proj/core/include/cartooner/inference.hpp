#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "cartooner/checkpoint.hpp"
#include "cartooner/colorcue.hpp"
#include "cartooner/image.hpp"
#include "cartooner/network.hpp"

namespace cartooner::infer {

struct ColorEdit {
  RegionMask mask;
  // Target color for a palette transfer, or an HSV adjustment.
  std::variant<Rgb, cue::HsvAugParams> edit;
};

struct TextureRegion {
  RegionMask mask;
  nn::TextureLevels levels;
};

struct ControlRequest {
  Image photo;
  nn::TextureLevels levels;             // default everywhere
  std::vector<TextureRegion> regions;   // composited over `levels` in order
  std::vector<ColorEdit> color_edits;   // applied to the cue in order
  ckpt::ColorMode mode = ckpt::ColorMode::Preserve;
  bool allow_extrapolation = false;
  int superpixels = 0;  // 0 selects default_segment_count
};

// Throws ContractError for mask shape mismatches or a non-RGB photo and
// RangeError for out-of-range levels.
void validate_request(const ControlRequest& req, int num_levels);

// Superpixel color map of the photo.
Image build_cue(const Image& photo, int superpixels = 0);

// Edits are applied in list order. An all-zero mask raises ContractError,
// unless `skip_empty` is set, in which case that edit is a no-op.
Image apply_color_edits(const Image& cue, std::span<const ColorEdit> edits, bool skip_empty = false);

struct AlphaMaps {
  nn::Tensor stroke;       // (1, 1, h, w)
  nn::Tensor abstraction;  // (1, 1, h, w)
};

// Per-pixel levels at image resolution: start from `base` and alpha-composite
// each region's levels with its mask, later regions on top.
AlphaMaps composite_levels(std::span<const TextureRegion> regions, const nn::TextureLevels& base, int height,
                           int width);

// composite_levels followed by an area average down to (feat_h, feat_w).
// The image size must be an integer multiple of the feature size.
AlphaMaps spatial_alpha_map(std::span<const TextureRegion> regions, const nn::TextureLevels& base, int height,
                            int width, int feat_h, int feat_w);

struct Channels {
  Image l;   // Lab lightness, photo size
  Image ab;  // Lab chroma, photo size
};

// Full pipeline minus the final RGB conversion.
Channels cartoonize_channels(const nn::Cartooner& model, const ControlRequest& req);
// Cue supplied by the caller (edits in `req` are ignored).
Channels cartoonize_channels(const nn::Cartooner& model, const ControlRequest& req, const Image& cue);

Image cartoonize(const nn::Cartooner& model, const ControlRequest& req);

// Palette (k colors) of the reference, restricted to ref_mask when given.
cue::Palette reference_palette(const Image& reference, const RegionMask* ref_mask,
                               int k = cue::kDefaultPaletteSize, std::uint64_t seed = 0);

struct ReferenceResult {
  cue::Palette palette;
  Rgb chosen{};
  Image output;
};

// Extracts the reference palette, transfers palette entry `palette_index`
// onto target_mask of the cue (appended after req's own edits), and runs
// cartoonize.
ReferenceResult reference_color_pipeline(const nn::Cartooner& model, const ControlRequest& req,
                                         const Image& reference, const RegionMask* ref_mask,
                                         const RegionMask& target_mask, int palette_index = 0);

// Edge-replicate padding of an image up to multiples of `multiple`.
Image pad_to_multiple(const Image& img, int multiple);

}  // namespace cartooner::infer
