#include "cartooner/colorcue.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "cartooner/colorspace.hpp"
#include "cartooner/error.hpp"

namespace cartooner::cue {

std::vector<std::array<double, 2>> slic_seeds(int height, int width, int n_segments) {
  const int cols = std::clamp(
      static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_segments) * width / height))), 1,
      std::min(width, n_segments));
  const int rows = std::clamp((n_segments + cols - 1) / cols, 1, height);
  std::vector<std::array<double, 2>> seeds;
  seeds.reserve(n_segments);
  for (int r = 0; r < rows; ++r) {
    const long long lo = static_cast<long long>(r) * n_segments / rows;
    const long long hi = static_cast<long long>(r + 1) * n_segments / rows;
    const int in_row = static_cast<int>(hi - lo);
    const double y = (r + 0.5) * height / rows;
    for (int j = 0; j < in_row; ++j) seeds.push_back({y, (j + 0.5) * width / in_row});
  }
  return seeds;
}

Segmentation slic(const Image& rgb, int n_segments, const SlicOptions& options) {
  require_space(rgb, ColorSpace::RGB, "slic");
  const int h = rgb.height, w = rgb.width;
  const auto pixels = static_cast<long long>(h) * w;
  if (n_segments < 1) throw ContractError("superpixel: n_segments must be >= 1");
  if (n_segments > pixels) {
    throw ContractError("superpixel: n_segments " + std::to_string(n_segments) +
                        " exceeds pixel count " + std::to_string(pixels));
  }
  const Image lab = color::rgb_to_lab(rgb);
  const double step = std::sqrt(static_cast<double>(pixels) / n_segments);
  const double spatial = options.compactness / step;

  struct Center {
    double l, a, b, y, x;
  };
  std::vector<Center> centers;
  for (const auto& [sy, sx] : slic_seeds(h, w, n_segments)) {
    const int py = std::clamp(static_cast<int>(sy), 0, h - 1);
    const int px = std::clamp(static_cast<int>(sx), 0, w - 1);
    const double* p = lab.pixel(static_cast<std::size_t>(py) * w + px);
    centers.push_back({p[0], p[1], p[2], sy, sx});
  }
  const int k = static_cast<int>(centers.size());

  auto distance = [&](const Center& c, int y, int x) {
    const double* p = lab.pixel(static_cast<std::size_t>(y) * w + x);
    const double dl = p[0] - c.l, da = p[1] - c.a, db = p[2] - c.b;
    const double dy = (y + 0.5 - c.y) * spatial, dx = (x + 0.5 - c.x) * spatial;
    return dl * dl + da * da + db * db + dy * dy + dx * dx;
  };

  Segmentation seg{h, w, k, std::vector<int>(static_cast<std::size_t>(pixels), -1)};
  std::vector<double> best(static_cast<std::size_t>(pixels));
  const int radius = static_cast<int>(std::ceil(step));
  for (int it = 0; it < std::max(1, options.iterations); ++it) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    std::fill(seg.labels.begin(), seg.labels.end(), -1);
    for (int ci = 0; ci < k; ++ci) {
      const Center& c = centers[ci];
      const int y0 = std::max(0, static_cast<int>(c.y) - radius);
      const int y1 = std::min(h - 1, static_cast<int>(c.y) + radius);
      const int x0 = std::max(0, static_cast<int>(c.x) - radius);
      const int x1 = std::min(w - 1, static_cast<int>(c.x) + radius);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const double d = distance(c, y, x);
          if (d < best[i]) {
            best[i] = d;
            seg.labels[i] = ci;
          }
        }
    }
    // Pixels outside every search window fall back to the global nearest.
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (seg.labels[i] >= 0) continue;
        for (int ci = 0; ci < k; ++ci) {
          const double d = distance(centers[ci], y, x);
          if (d < best[i]) {
            best[i] = d;
            seg.labels[i] = ci;
          }
        }
      }
    std::vector<Center> sums(k, Center{0, 0, 0, 0, 0});
    std::vector<int> counts(k, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const int ci = seg.labels[i];
        const double* p = lab.pixel(i);
        sums[ci].l += p[0];
        sums[ci].a += p[1];
        sums[ci].b += p[2];
        sums[ci].y += y + 0.5;
        sums[ci].x += x + 0.5;
        ++counts[ci];
      }
    for (int ci = 0; ci < k; ++ci) {
      if (counts[ci] == 0) continue;
      const double inv = 1.0 / counts[ci];
      centers[ci] = {sums[ci].l * inv, sums[ci].a * inv, sums[ci].b * inv, sums[ci].y * inv,
                     sums[ci].x * inv};
    }
  }
  return seg;
}

Image fill_segment_means(const Image& rgb, const Segmentation& seg) {
  require_space(rgb, ColorSpace::RGB, "fill_segment_means");
  if (seg.height != rgb.height || seg.width != rgb.width) {
    throw ContractError("fill_segment_means: segmentation does not match image");
  }
  std::vector<std::array<double, 3>> sums(seg.count, {0.0, 0.0, 0.0});
  std::vector<long long> counts(seg.count, 0);
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const int l = seg.labels[i];
    const double* p = rgb.pixel(i);
    for (int c = 0; c < 3; ++c) sums[l][c] += p[c];
    ++counts[l];
  }
  std::vector<std::array<double, 3>> means(seg.count);
  for (int l = 0; l < seg.count; ++l) {
    for (int c = 0; c < 3; ++c) {
      // Constant segments keep their exact value.
      means[l][c] = counts[l] > 0 ? sums[l][c] / static_cast<double>(counts[l]) : 0.0;
    }
  }
  Image out(rgb.height, rgb.width, ColorSpace::RGB);
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const auto& m = means[seg.labels[i]];
    double* q = out.pixel(i);
    q[0] = m[0];
    q[1] = m[1];
    q[2] = m[2];
  }
  // A segment whose pixels are all equal must reproduce that value exactly;
  // the running sum above can be off by an ulp, so patch those up.
  std::vector<char> uniform(seg.count, 1);
  std::vector<std::size_t> first(seg.count, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const int l = seg.labels[i];
    if (first[l] == std::numeric_limits<std::size_t>::max()) {
      first[l] = i;
      continue;
    }
    const double* p = rgb.pixel(i);
    const double* f = rgb.pixel(first[l]);
    if (p[0] != f[0] || p[1] != f[1] || p[2] != f[2]) uniform[l] = 0;
  }
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const int l = seg.labels[i];
    if (!uniform[l]) continue;
    const double* f = rgb.pixel(first[l]);
    double* q = out.pixel(i);
    q[0] = f[0];
    q[1] = f[1];
    q[2] = f[2];
  }
  return out;
}

int default_segment_count(int height, int width) {
  const double area = static_cast<double>(height) * width;
  const int n = static_cast<int>(std::lround(200.0 * area / (256.0 * 256.0)));
  return std::clamp(n, 1, std::max(1, height * width));
}

Image superpixel_colormap(const Image& photo, int n_segments) {
  return fill_segment_means(photo, slic(photo, n_segments));
}

Image hsv_augment(const Image& rgb, const HsvAugParams& p) {
  require_space(rgb, ColorSpace::RGB, "hsv_augment");
  if (!(p.sat_scale > 0.0) || !(p.val_scale > 0.0)) {
    throw ContractError("hsv_augment: saturation and value scales must be positive");
  }
  Image out(rgb.height, rgb.width, ColorSpace::RGB);
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const double* src = rgb.pixel(i);
    const Rgb original{src[0], src[1], src[2]};
    color::Hsv hsv = color::rgb_to_hsv(original);
    hsv[0] = hsv[0] + p.hue_shift;
    hsv[0] -= std::floor(hsv[0]);
    hsv[1] = std::clamp(hsv[1] * p.sat_scale, 0.0, 1.0);
    hsv[2] = std::clamp(hsv[2] * p.val_scale, 0.0, 1.0);
    color::Lab lab = color::rgb_to_lab(color::hsv_to_rgb(hsv));
    lab[0] = color::rgb_to_lab(original)[0];
    const Rgb res = color::lab_to_rgb_keep_lightness(lab);
    double* q = out.pixel(i);
    q[0] = res[0];
    q[1] = res[1];
    q[2] = res[2];
  }
  return out;
}

std::pair<Image, Image> hsv_augment(const Image& photo, const Image& cue, const HsvAugParams& p) {
  if (photo.height != cue.height || photo.width != cue.width) {
    throw ContractError("hsv_augment: photo and cue shapes differ");
  }
  return {hsv_augment(photo, p), hsv_augment(cue, p)};
}

HsvAugParams sample_hsv_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> hue(-0.5, 0.5);
  std::uniform_real_distribution<double> sat(kSatMin, kSatMax);
  std::uniform_real_distribution<double> val(kValMin, kValMax);
  HsvAugParams p;
  p.hue_shift = hue(rng);
  p.sat_scale = sat(rng);
  p.val_scale = val(rng);
  return p;
}

namespace {

double sq_dist(const Rgb& a, const Rgb& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

}  // namespace

Palette extract_palette(const Image& rgb, int k, std::uint64_t seed, const RegionMask* mask) {
  require_space(rgb, ColorSpace::RGB, "extract_palette");
  if (k < 1) throw ContractError("extract_palette: k must be >= 1");
  if (mask != nullptr && !mask->matches(rgb)) throw ContractError("extract_palette: mask size mismatch");

  // Collapse to weighted distinct colors; k-means runs on those.
  std::map<Rgb, double> distinct;
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const double wgt = mask != nullptr ? std::clamp(mask->data[i], 0.0, 1.0) : 1.0;
    if (wgt <= 0.0) continue;
    const double* p = rgb.pixel(i);
    distinct[Rgb{p[0], p[1], p[2]}] += wgt;
  }
  if (distinct.empty()) throw ContractError("extract_palette: empty region");
  std::vector<Rgb> points;
  std::vector<double> mass;
  double total = 0.0;
  for (const auto& [c, m] : distinct) {
    points.push_back(c);
    mass.push_back(m);
    total += m;
  }

  Palette pal;
  const int n = static_cast<int>(points.size());
  std::vector<Rgb> centers;
  std::vector<double> weights;
  if (n <= k) {
    centers = points;
    weights = mass;
  } else {
    std::mt19937_64 rng(seed);
    // k-means++ seeding weighted by pixel mass.
    std::discrete_distribution<int> first(mass.begin(), mass.end());
    centers.push_back(points[first(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const Rgb& c : centers) best = std::min(best, sq_dist(points[i], c));
        d2[i] = best * mass[i];
      }
      std::discrete_distribution<int> next(d2.begin(), d2.end());
      centers.push_back(points[next(rng)]);
    }
    std::vector<int> assign(n, -1);
    for (int it = 0; it < 100; ++it) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double d = sq_dist(points[i], centers[c]);
          if (d < best) {
            best = d;
            arg = c;
          }
        }
        if (assign[i] != arg) {
          assign[i] = arg;
          changed = true;
        }
      }
      std::vector<Rgb> sums(k, Rgb{0, 0, 0});
      std::vector<double> m(k, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) sums[assign[i]][c] += mass[i] * points[i][c];
        m[assign[i]] += mass[i];
      }
      for (int c = 0; c < k; ++c) {
        if (m[c] > 0.0) {
          for (int j = 0; j < 3; ++j) centers[c][j] = sums[c][j] / m[c];
        } else {
          // Re-seed an empty cluster at the point farthest from its center.
          int far = 0;
          double fd = -1.0;
          for (int i = 0; i < n; ++i) {
            const double d = sq_dist(points[i], centers[assign[i]]);
            if (d > fd) {
              fd = d;
              far = i;
            }
          }
          centers[c] = points[far];
          changed = true;
        }
      }
      if (!changed) break;
    }
    weights.assign(k, 0.0);
    for (int i = 0; i < n; ++i) weights[assign[i]] += mass[i];
  }

  std::vector<int> order(centers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (weights[a] != weights[b]) return weights[a] > weights[b];
    return centers[a] < centers[b];
  });
  for (int i : order) {
    Rgb c = centers[i];
    for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    pal.colors.push_back(c);
    pal.weights.push_back(weights[i] / total);
  }
  if (static_cast<int>(pal.colors.size()) < k) {
    pal.padded = true;
    const std::size_t real = pal.colors.size();
    for (std::size_t i = 0; static_cast<int>(pal.colors.size()) < k; ++i) {
      pal.colors.push_back(pal.colors[i % real]);
      pal.weights.push_back(0.0);
    }
  }
  return pal;
}

Rgb region_mean_color(const Image& rgb, const RegionMask& mask) {
  require_space(rgb, ColorSpace::RGB, "region_mean_color");
  if (!mask.matches(rgb)) throw ContractError("region_mean_color: mask size mismatch");
  Rgb sum{0, 0, 0};
  double wsum = 0.0;
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
    const double m = mask.data[i];
    if (m < 0.0 || m > 1.0) throw ContractError("region mask values must lie in [0, 1]");
    if (m == 0.0) continue;
    const double* p = rgb.pixel(i);
    for (int c = 0; c < 3; ++c) sum[c] += m * p[c];
    wsum += m;
  }
  if (wsum <= 0.0) throw ContractError("region mask selects no pixels");
  return {sum[0] / wsum, sum[1] / wsum, sum[2] / wsum};
}

Image palette_transfer(const Image& cue, const RegionMask& mask, const Rgb& target) {
  const Rgb mean = region_mean_color(cue, mask);
  const Rgb shift{target[0] - mean[0], target[1] - mean[1], target[2] - mean[2]};
  Image out = cue;
  for (std::size_t i = 0; i < cue.pixel_count(); ++i) {
    const double m = mask.data[i];
    if (m == 0.0) continue;
    double* q = out.pixel(i);
    for (int c = 0; c < 3; ++c) q[c] = std::clamp(q[c] + m * shift[c], 0.0, 1.0);
  }
  return out;
}

}  // namespace cartooner::cue
