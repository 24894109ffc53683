#include "cartooner/inference.hpp"

#include <algorithm>
#include <cmath>

#include "cartooner/colorspace.hpp"
#include "cartooner/error.hpp"

namespace cartooner::infer {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

bool all_zero(const RegionMask& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](double v) { return v == 0.0; });
}

void check_mask(const RegionMask& m, int h, int w, const char* what) {
  if (m.height != h || m.width != w) {
    throw ContractError(std::string(what) + " mask is " + std::to_string(m.width) + "x" +
                        std::to_string(m.height) + ", photo is " + std::to_string(w) + "x" + std::to_string(h));
  }
  for (double v : m.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError(std::string(what) + " mask values must lie in [0, 1]");
  }
}

Tensor pad_plane(const Tensor& t, int ph, int pw) {
  const Shape& s = t.shape();
  if (ph == s.h && pw == s.w) return t;
  Tensor out(Shape{s.n, s.c, ph, pw});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = t.plane(n, c);
      double* q = out.plane(n, c);
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) q[y * pw + x] = p[std::min(y, s.h - 1) * s.w + std::min(x, s.w - 1)];
    }
  return out;
}

Tensor crop_plane(const Tensor& t, int h, int w) {
  const Shape& s = t.shape();
  if (h == s.h && w == s.w) return t;
  Tensor out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y) std::copy_n(t.plane(n, c) + y * s.w, w, out.plane(n, c) + y * w);
  return out;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

void validate_request(const ControlRequest& req, int num_levels) {
  require_space(req.photo, ColorSpace::RGB, "cartoonize");
  if (req.photo.height < 1 || req.photo.width < 1) throw ContractError("cartoonize: empty photo");
  nn::validate_levels(req.levels, num_levels, req.allow_extrapolation);
  for (const TextureRegion& r : req.regions) {
    check_mask(r.mask, req.photo.height, req.photo.width, "texture region");
    nn::validate_levels(r.levels, num_levels, req.allow_extrapolation);
  }
  for (const ColorEdit& e : req.color_edits) check_mask(e.mask, req.photo.height, req.photo.width, "color edit");
  if (req.superpixels < 0) throw ContractError("superpixels must be non-negative");
}

Image build_cue(const Image& photo, int superpixels) {
  const int n = superpixels > 0 ? std::min(superpixels, photo.height * photo.width)
                                : cue::default_segment_count(photo.height, photo.width);
  return cue::superpixel_colormap(photo, n);
}

Image apply_color_edits(const Image& cue_rgb, std::span<const ColorEdit> edits, bool skip_empty) {
  require_space(cue_rgb, ColorSpace::RGB, "apply_color_edits");
  Image out = cue_rgb;
  for (const ColorEdit& e : edits) {
    check_mask(e.mask, cue_rgb.height, cue_rgb.width, "color edit");
    if (all_zero(e.mask)) {
      if (skip_empty) continue;
      throw ContractError("color edit mask selects no pixels");
    }
    if (const Rgb* target = std::get_if<Rgb>(&e.edit)) {
      out = cue::palette_transfer(out, e.mask, *target);
      continue;
    }
    const Image shifted = cue::hsv_augment(out, std::get<cue::HsvAugParams>(e.edit));
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
      const double m = e.mask.data[i];
      if (m == 0.0) continue;
      double* q = out.pixel(i);
      const double* s = shifted.pixel(i);
      for (int c = 0; c < 3; ++c) q[c] = m == 1.0 ? s[c] : (1.0 - m) * q[c] + m * s[c];
    }
  }
  return out;
}

AlphaMaps composite_levels(std::span<const TextureRegion> regions, const nn::TextureLevels& base, int height,
                           int width) {
  AlphaMaps maps{Tensor(Shape{1, 1, height, width}, base.stroke),
                 Tensor(Shape{1, 1, height, width}, base.abstraction)};
  for (const TextureRegion& r : regions) {
    check_mask(r.mask, height, width, "texture region");
    double* s = maps.stroke.data();
    double* a = maps.abstraction.data();
    for (std::size_t i = 0; i < r.mask.data.size(); ++i) {
      const double m = r.mask.data[i];
      if (m == 0.0) continue;
      if (m == 1.0) {
        s[i] = r.levels.stroke;
        a[i] = r.levels.abstraction;
      } else {
        s[i] = (1.0 - m) * s[i] + m * r.levels.stroke;
        a[i] = (1.0 - m) * a[i] + m * r.levels.abstraction;
      }
    }
  }
  return maps;
}

AlphaMaps spatial_alpha_map(std::span<const TextureRegion> regions, const nn::TextureLevels& base, int height,
                            int width, int feat_h, int feat_w) {
  if (feat_h < 1 || feat_w < 1 || height % feat_h != 0 || width % feat_w != 0 ||
      height / feat_h != width / feat_w) {
    throw ContractError("spatial_alpha_map: image size is not an integer multiple of the feature size");
  }
  AlphaMaps full = composite_levels(regions, base, height, width);
  const int factor = height / feat_h;
  return {nn::downsample_area(full.stroke, factor), nn::downsample_area(full.abstraction, factor)};
}

Image pad_to_multiple(const Image& img, int multiple) {
  const int ph = round_up(img.height, multiple);
  const int pw = round_up(img.width, multiple);
  if (ph == img.height && pw == img.width) return img;
  Image out(ph, pw, img.space);
  const int c = img.channels();
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      for (int k = 0; k < c; ++k) out.at(y, x, k) = img.at(std::min(y, img.height - 1), std::min(x, img.width - 1), k);
  return out;
}

Channels cartoonize_channels(const nn::Cartooner& model, const ControlRequest& req, const Image& cue_rgb) {
  validate_request(req, model.num_levels());
  require_space(cue_rgb, ColorSpace::RGB, "cartoonize");
  if (cue_rgb.height != req.photo.height || cue_rgb.width != req.photo.width) {
    throw ContractError("cartoonize: cue and photo sizes differ");
  }
  const int h = req.photo.height;
  const int w = req.photo.width;
  const int k = nn::Cartooner::kDownsample;

  nn::NoGradGuard no_grad;
  const Tensor photo = color::to_net(color::rgb_to_lab(pad_to_multiple(req.photo, k)));
  const Tensor cue = color::to_net(color::rgb_to_lab(pad_to_multiple(cue_rgb, k)));
  const Var f = model.encode(Var::constant(photo));

  nn::TextureMix mix;
  if (req.regions.empty()) {
    mix = nn::TextureMix::global(req.levels, model.num_levels(), req.allow_extrapolation);
  } else {
    AlphaMaps full = composite_levels(req.regions, req.levels, h, w);
    const int ph = photo.shape().h;
    const int pw = photo.shape().w;
    const Tensor s = nn::downsample_area(pad_plane(full.stroke, ph, pw), k);
    const Tensor a = nn::downsample_area(pad_plane(full.abstraction, ph, pw), k);
    mix.stroke = nn::branch_mix(s, model.num_levels(), req.allow_extrapolation);
    mix.abstraction = nn::branch_mix(a, model.num_levels(), req.allow_extrapolation);
  }
  const Tensor out_l = crop_plane(model.decode_texture(f, mix).value(), h, w);
  const Tensor out_ab = crop_plane(model.decode_color(f, cue).value(), h, w);
  return {color::from_net(out_l), color::from_net(out_ab)};
}

Channels cartoonize_channels(const nn::Cartooner& model, const ControlRequest& req) {
  validate_request(req, model.num_levels());
  const Image cue_rgb = apply_color_edits(build_cue(req.photo, req.superpixels), req.color_edits, true);
  return cartoonize_channels(model, req, cue_rgb);
}

Image cartoonize(const nn::Cartooner& model, const ControlRequest& req) {
  const Channels ch = cartoonize_channels(model, req);
  return color::lab_to_rgb(color::merge_lab(ch.l, ch.ab));
}

cue::Palette reference_palette(const Image& reference, const RegionMask* ref_mask, int k, std::uint64_t seed) {
  if (ref_mask != nullptr) {
    check_mask(*ref_mask, reference.height, reference.width, "reference");
    if (all_zero(*ref_mask)) throw ContractError("reference mask selects no pixels");
  }
  return cue::extract_palette(reference, k, seed, ref_mask);
}

ReferenceResult reference_color_pipeline(const nn::Cartooner& model, const ControlRequest& req,
                                         const Image& reference, const RegionMask* ref_mask,
                                         const RegionMask& target_mask, int palette_index) {
  ReferenceResult r;
  r.palette = reference_palette(reference, ref_mask);
  if (palette_index < 0 || palette_index >= static_cast<int>(r.palette.colors.size())) {
    throw ContractError("palette index out of range");
  }
  r.chosen = r.palette.colors[palette_index];
  ControlRequest edited = req;
  edited.color_edits.push_back(ColorEdit{target_mask, r.chosen});
  r.output = cartoonize(model, edited);
  return r;
}

}  // namespace cartooner::infer
