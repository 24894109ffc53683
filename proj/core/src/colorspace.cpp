#include "cartooner/colorspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cartooner/error.hpp"

namespace cartooner {

int channels_for(ColorSpace space) {
  switch (space) {
    case ColorSpace::RGB:
    case ColorSpace::Lab:
    case ColorSpace::HSV:
      return 3;
    case ColorSpace::L:
      return 1;
    case ColorSpace::ab:
      return 2;
  }
  return 0;
}

std::string_view to_string(ColorSpace space) {
  switch (space) {
    case ColorSpace::RGB: return "RGB";
    case ColorSpace::Lab: return "Lab";
    case ColorSpace::HSV: return "HSV";
    case ColorSpace::L: return "L";
    case ColorSpace::ab: return "ab";
  }
  return "?";
}

Image::Image(int h, int w, ColorSpace s, double fill)
    : height(h), width(w), space(s),
      data(static_cast<std::size_t>(h) * w * channels_for(s), fill) {}

RegionMask::RegionMask(int h, int w, double fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

double RegionMask::sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

void require_space(const Image& img, ColorSpace expected, std::string_view op) {
  if (img.space != expected) {
    throw ContractError(std::string(op) + ": expected " + std::string(to_string(expected)) +
                        " image, got " + std::string(to_string(img.space)));
  }
  if (img.data.size() != img.pixel_count() * channels_for(expected)) {
    throw ContractError(std::string(op) + ": data size does not match dimensions");
  }
}

}  // namespace cartooner

namespace cartooner::color {
namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr Mat3 kRgbToXyz{{{0.4124564, 0.3575761, 0.1804375},
                          {0.2126729, 0.7151522, 0.0721750},
                          {0.0193339, 0.1191920, 0.9503041}}};

Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

const Mat3& xyz_to_rgb_matrix() {
  static const Mat3 inv = invert(kRgbToXyz);
  return inv;
}

// D65 white as the image of sRGB white, so (1, 1, 1) lands on a = b = 0.
const std::array<double, 3>& white() {
  static const std::array<double, 3> w = [] {
    std::array<double, 3> r{};
    for (int i = 0; i < 3; ++i) r[i] = kRgbToXyz[i][0] + kRgbToXyz[i][1] + kRgbToXyz[i][2];
    return r;
  }();
  return w;
}

constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  if (c <= 0.0031308) return 12.92 * c;
  return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double f) {
  return f > kDelta ? f * f * f : 3.0 * kDelta * kDelta * (f - 4.0 / 29.0);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool in_gamut(const Rgb& rgb) {
  constexpr double tol = 1e-9;
  return std::all_of(rgb.begin(), rgb.end(), [](double v) { return v >= -tol && v <= 1.0 + tol; });
}

template <typename PixelFn>
Image map_pixels(const Image& img, ColorSpace from, ColorSpace to, std::string_view op, PixelFn fn) {
  require_space(img, from, op);
  Image out(img.height, img.width, to);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double* p = img.pixel(i);
    const auto r = fn(std::array<double, 3>{p[0], p[1], p[2]});
    double* q = out.pixel(i);
    q[0] = r[0];
    q[1] = r[1];
    q[2] = r[2];
  }
  return out;
}

}  // namespace

Lab rgb_to_lab(const Rgb& rgb) {
  std::array<double, 3> lin{};
  for (int i = 0; i < 3; ++i) lin[i] = srgb_to_linear(clamp01(rgb[i]));
  std::array<double, 3> f{};
  for (int i = 0; i < 3; ++i) {
    const double xyz = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
    f[i] = lab_f(xyz / white()[i]);
  }
  const double l = 116.0 * f[1] - 16.0;
  const double a = 500.0 * (f[0] - f[1]);
  const double b = 200.0 * (f[1] - f[2]);
  return {std::clamp(l, 0.0, 100.0), std::clamp(a, -128.0, 127.0), std::clamp(b, -128.0, 127.0)};
}

Rgb lab_to_rgb_unclamped(const Lab& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const std::array<double, 3> xyz{lab_f_inv(fx) * white()[0], lab_f_inv(fy) * white()[1],
                                  lab_f_inv(fz) * white()[2]};
  const Mat3& m = xyz_to_rgb_matrix();
  Rgb rgb{};
  for (int i = 0; i < 3; ++i) {
    const double lin = m[i][0] * xyz[0] + m[i][1] * xyz[1] + m[i][2] * xyz[2];
    // Negative linear light has no sRGB encoding; mirror it so the transfer
    // function stays monotone and out-of-gamut detection still sees it.
    rgb[i] = lin < 0.0 ? -linear_to_srgb(-lin) : linear_to_srgb(lin);
  }
  return rgb;
}

Rgb lab_to_rgb(const Lab& lab) {
  Rgb rgb = lab_to_rgb_unclamped(lab);
  for (double& v : rgb) v = clamp01(v);
  return rgb;
}

Rgb lab_to_rgb_keep_lightness(const Lab& lab) {
  Rgb rgb = lab_to_rgb_unclamped(lab);
  if (!in_gamut(rgb)) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (in_gamut(lab_to_rgb_unclamped({lab[0], lab[1] * mid, lab[2] * mid}))) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    rgb = lab_to_rgb_unclamped({lab[0], lab[1] * lo, lab[2] * lo});
  }
  for (double& v : rgb) v = clamp01(v);
  return rgb;
}

Hsv rgb_to_hsv(const Rgb& rgb) {
  const double r = rgb[0], g = rgb[1], b = rgb[2];
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double chroma = mx - mn;
  const double v = mx;
  const double s = mx > 0.0 ? chroma / mx : 0.0;
  double h = 0.0;
  if (chroma > 0.0) {
    if (mx == r) {
      h = (g - b) / chroma;
    } else if (mx == g) {
      h = 2.0 + (b - r) / chroma;
    } else {
      h = 4.0 + (r - g) / chroma;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
    if (h >= 1.0) h -= 1.0;
  }
  return {h, s, v};
}

Rgb hsv_to_rgb(const Hsv& hsv) {
  double h = hsv[0] - std::floor(hsv[0]);
  const double s = clamp01(hsv[1]);
  const double v = clamp01(hsv[2]);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double frac = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * frac);
  const double t = v * (1.0 - s * (1.0 - frac));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Image rgb_to_lab(const Image& img) {
  return map_pixels(img, ColorSpace::RGB, ColorSpace::Lab, "rgb_to_lab",
                    [](const Rgb& p) { return rgb_to_lab(p); });
}

Image lab_to_rgb(const Image& img) {
  return map_pixels(img, ColorSpace::Lab, ColorSpace::RGB, "lab_to_rgb",
                    [](const Lab& p) { return lab_to_rgb(p); });
}

Image rgb_to_hsv(const Image& img) {
  return map_pixels(img, ColorSpace::RGB, ColorSpace::HSV, "rgb_to_hsv",
                    [](const Rgb& p) { return rgb_to_hsv(p); });
}

Image hsv_to_rgb(const Image& img) {
  return map_pixels(img, ColorSpace::HSV, ColorSpace::RGB, "hsv_to_rgb",
                    [](const Hsv& p) { return hsv_to_rgb(p); });
}

std::pair<Image, Image> split_lab(const Image& lab) {
  require_space(lab, ColorSpace::Lab, "split_lab");
  Image l(lab.height, lab.width, ColorSpace::L);
  Image ab(lab.height, lab.width, ColorSpace::ab);
  for (std::size_t i = 0; i < lab.pixel_count(); ++i) {
    const double* p = lab.pixel(i);
    l.data[i] = p[0];
    ab.data[2 * i] = p[1];
    ab.data[2 * i + 1] = p[2];
  }
  return {std::move(l), std::move(ab)};
}

Image merge_lab(const Image& l, const Image& ab) {
  require_space(l, ColorSpace::L, "merge_lab");
  require_space(ab, ColorSpace::ab, "merge_lab");
  if (l.height != ab.height || l.width != ab.width) {
    throw ContractError("merge_lab: L and ab dimensions differ");
  }
  Image lab(l.height, l.width, ColorSpace::Lab);
  for (std::size_t i = 0; i < l.pixel_count(); ++i) {
    double* q = lab.pixel(i);
    q[0] = l.data[i];
    q[1] = ab.data[2 * i];
    q[2] = ab.data[2 * i + 1];
  }
  return lab;
}

nn::Tensor to_net(const Image& img) {
  int first = 0;
  switch (img.space) {
    case ColorSpace::Lab:
    case ColorSpace::L:
      first = 0;
      break;
    case ColorSpace::ab:
      first = 1;
      break;
    default:
      throw ContractError("to_net: expected Lab, L or ab image, got " +
                          std::string(to_string(img.space)));
  }
  const int c = img.channels();
  nn::Tensor t(nn::Shape{1, c, img.height, img.width});
  for (int ch = 0; ch < c; ++ch) {
    const bool lightness = first + ch == 0;
    double* q = t.plane(0, ch);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      const double v = img.data[i * c + ch];
      q[i] = lightness ? v / kLightnessScale - 1.0 : v / kChromaScale;
    }
  }
  return t;
}

Image from_net(const nn::Tensor& t, int index) {
  const nn::Shape& s = t.shape();
  ColorSpace space{};
  int first = 0;
  switch (s.c) {
    case 3: space = ColorSpace::Lab; break;
    case 1: space = ColorSpace::L; break;
    case 2:
      space = ColorSpace::ab;
      first = 1;
      break;
    default:
      throw ContractError("from_net: unsupported channel count " + std::to_string(s.c));
  }
  if (index < 0 || index >= s.n) throw ContractError("from_net: batch index out of range");
  Image img(s.h, s.w, space);
  for (int ch = 0; ch < s.c; ++ch) {
    const bool lightness = first + ch == 0;
    const double* p = t.plane(index, ch);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      img.data[i * s.c + ch] = lightness
                                   ? std::clamp((p[i] + 1.0) * kLightnessScale, 0.0, 100.0)
                                   : std::clamp(p[i] * kChromaScale, -128.0, 127.0);
    }
  }
  return img;
}

}  // namespace cartooner::color
