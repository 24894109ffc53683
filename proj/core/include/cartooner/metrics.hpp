#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cartooner/image.hpp"
#include "cartooner/losses.hpp"

namespace cartooner::metrics {

// Running mean and co-moment of D-dimensional feature vectors. Two stats
// merge exactly as if their samples had been accumulated together.
struct FeatureStats {
  std::int64_t n = 0;
  int dim = 0;
  std::vector<double> mean;
  std::vector<double> comoment;  // D x D row-major, sum of (x - mean)(x - mean)^T

  explicit FeatureStats(int d = 0);
  // Stats with the given covariance (n - 1 denominator).
  static FeatureStats from_moments(std::int64_t n, std::vector<double> mean, std::span<const double> cov);

  void add(std::span<const double> x);
  // Unbiased covariance, D x D row-major; requires n >= 2.
  [[nodiscard]] std::vector<double> cov() const;
};

FeatureStats merge(const FeatureStats& a, const FeatureStats& b);

// Global-average-pooled extractor features of an RGB image.
std::vector<double> image_features(const Image& rgb, const loss::FeatureExtractor& ext);

FeatureStats accumulate(std::span<const Image> images, const loss::FeatureExtractor& ext);
// Every readable image in a directory (sorted); unreadable files are skipped
// with a warning.
FeatureStats accumulate_dir(const std::filesystem::path& dir, const loss::FeatureExtractor& ext);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

}  // namespace cartooner::metrics
