#include "cartooner/metrics.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "cartooner/colorspace.hpp"
#include "cartooner/dataio.hpp"
#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"

namespace cartooner::metrics {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

FeatureStats::FeatureStats(int d)
    : dim(d), mean(static_cast<std::size_t>(d), 0.0), comoment(static_cast<std::size_t>(d) * d, 0.0) {}

FeatureStats FeatureStats::from_moments(std::int64_t n, std::vector<double> mean, std::span<const double> cov) {
  const int d = static_cast<int>(mean.size());
  if (cov.size() != static_cast<std::size_t>(d) * d) throw ContractError("from_moments: covariance size mismatch");
  if (n < 2) throw ContractError("from_moments: need n >= 2");
  FeatureStats s(d);
  s.n = n;
  s.mean = std::move(mean);
  for (std::size_t i = 0; i < cov.size(); ++i) s.comoment[i] = cov[i] * static_cast<double>(n - 1);
  return s;
}

void FeatureStats::add(std::span<const double> x) {
  if (dim == 0 && n == 0) *this = FeatureStats(static_cast<int>(x.size()));
  if (static_cast<int>(x.size()) != dim) throw ContractError("FeatureStats::add: dimension mismatch");
  ++n;
  std::vector<double> before(dim);
  for (int i = 0; i < dim; ++i) {
    before[i] = x[i] - mean[i];
    mean[i] += before[i] / static_cast<double>(n);
  }
  for (int i = 0; i < dim; ++i) {
    const double after = x[i] - mean[i];
    for (int j = 0; j < dim; ++j) comoment[static_cast<std::size_t>(i) * dim + j] += after * before[j];
  }
  // Keep the co-moment exactly symmetric.
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j) {
      const double v = 0.5 * (comoment[static_cast<std::size_t>(i) * dim + j] + comoment[static_cast<std::size_t>(j) * dim + i]);
      comoment[static_cast<std::size_t>(i) * dim + j] = v;
      comoment[static_cast<std::size_t>(j) * dim + i] = v;
    }
}

std::vector<double> FeatureStats::cov() const {
  if (n < 2) throw ContractError("covariance needs at least two samples");
  std::vector<double> c(comoment);
  for (double& v : c) v /= static_cast<double>(n - 1);
  return c;
}

FeatureStats merge(const FeatureStats& a, const FeatureStats& b) {
  if (a.n == 0) return b;
  if (b.n == 0) return a;
  if (a.dim != b.dim) throw ContractError("merge: dimension mismatch");
  const int d = a.dim;
  FeatureStats out(d);
  out.n = a.n + b.n;
  const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n), nt = static_cast<double>(out.n);
  std::vector<double> delta(d);
  for (int i = 0; i < d; ++i) {
    delta[i] = b.mean[i] - a.mean[i];
    out.mean[i] = a.mean[i] + delta[i] * nb / nt;
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * d + j;
      out.comoment[k] = a.comoment[k] + b.comoment[k] + delta[i] * delta[j] * na * nb / nt;
    }
  return out;
}

std::vector<double> image_features(const Image& rgb, const loss::FeatureExtractor& ext) {
  require_space(rgb, ColorSpace::RGB, "image_features");
  nn::Tensor t(nn::Shape{1, 3, rgb.height, rgb.width});
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = rgb.at(y, x, c);
  nn::NoGradGuard no_grad;
  const nn::Tensor f = ext.features_from_rgb(nn::Var::constant(std::move(t))).value();
  const nn::Shape& s = f.shape();
  std::vector<double> out(s.c, 0.0);
  for (int c = 0; c < s.c; ++c) {
    const double* p = f.plane(0, c);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    out[c] = acc / static_cast<double>(s.plane());
  }
  return out;
}

FeatureStats accumulate(std::span<const Image> images, const loss::FeatureExtractor& ext) {
  if (images.empty()) throw ContractError("accumulate: empty image set");
  FeatureStats s(ext.out_channels());
  for (const Image& img : images) s.add(image_features(img, ext));
  return s;
}

FeatureStats accumulate_dir(const std::filesystem::path& dir, const loss::FeatureExtractor& ext) {
  FeatureStats s(ext.out_channels());
  for (const auto& p : data::list_images(dir)) {
    try {
      s.add(image_features(data::load_image(p), ext));
    } catch (const std::exception& e) {
      spdlog::warn("skipping {}: {}", p.string(), e.what());
    }
  }
  if (s.n == 0) throw ContractError("no readable images in " + dir.string());
  return s;
}

namespace {

Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim != b.dim || a.dim == 0) throw ContractError("frechet_distance: dimension mismatch");
  const int d = a.dim;
  const std::vector<double> ca = a.cov();
  const std::vector<double> cb = b.cov();
  for (const auto* v : {&a.mean, &b.mean, &ca, &cb}) {
    for (double x : *v) {
      if (!std::isfinite(x)) throw ContractError("frechet_distance: non-finite statistics");
    }
  }
  const Mat sa = Eigen::Map<const Mat>(ca.data(), d, d);
  const Mat sb = Eigen::Map<const Mat>(cb.data(), d, d);
  const Mat ra = psd_sqrt(0.5 * (sa + sa.transpose()));
  Mat inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()[i]));

  double dist = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dm = a.mean[i] - b.mean[i];
    dist += dm * dm;
  }
  dist += sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

}  // namespace cartooner::metrics
