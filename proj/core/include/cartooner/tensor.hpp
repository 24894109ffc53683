#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cartooner::nn {

// NCHW extents. Parameters reuse the same four slots
// (conv weight = out, in/groups, kh, kw; bias = 1, out, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense double-precision NCHW array with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] double& at(int n, int c, int h, int w) {
    return data_[index(n, c, h, w)];
  }
  [[nodiscard]] double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }
  // Pointer to the start of the (n, c) spatial plane.
  [[nodiscard]] double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  void fill(double v);
  // In-place this += other (same shape).
  void add_(const Tensor& other);
  void scale_(double s);

  [[nodiscard]] Tensor reshaped(Shape s) const;
  // Copy of images [first, first + count) along the batch axis.
  [[nodiscard]] Tensor batch_slice(int first, int count) const;
  [[nodiscard]] Tensor channel_slice(int first, int count) const;

  [[nodiscard]] double sum() const;
  [[nodiscard]] double max_abs() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Concatenate tensors of identical C,H,W along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

// Order-sensitive 64-bit FNV-1a over the raw bit patterns of the values.
std::uint64_t bit_hash(std::span<const double> values, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace cartooner::nn
