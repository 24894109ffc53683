#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cartooner/tensor.hpp"

namespace cartooner::nn {

struct Node;

// Handle to a value in a reverse-mode tape. Copies share the node.
//
// Leaves created with requires_grad accumulate gradients across backward
// passes until zero_grad(); intermediate nodes only live as long as some Var
// (or a downstream node) references them. Graph construction is skipped
// entirely while a NoGradGuard is active on the current thread.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  // Empty tensor when no gradient reached this node.
  [[nodiscard]] const Tensor& grad() const;
  [[nodiscard]] bool requires_grad() const;

  // Leaf-only mutators, used by optimizers and checkpoint loading.
  void set_requires_grad(bool on);
  [[nodiscard]] Tensor& mutable_value();
  void zero_grad();

  [[nodiscard]] Var detach() const;

  // Seeds d(self)/d(self) = 1; self must hold a single element.
  void backward() const;

  [[nodiscard]] Node* node() const { return node_.get(); }

 private:
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(Node&)>);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  // grad += g, allocating on first use.
  void accumulate(const Tensor& g);
  // Returns grad, allocating zeros on first use.
  Tensor& grad_buffer();
};

// Builds an op result. When grad mode is off or no input requires a
// gradient, inputs and the backward closure are dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

// ---- ops ---------------------------------------------------------------

// x: (N, Cin, H, W); weight: (Cout, Cin/groups, K, K); bias: (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec);

// Centered k x k window of a (Cout, Cin, K, K) kernel; gradients scatter back.
Var crop_kernel(const Var& weight, int k);

Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var softplus(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int first, int count);

// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var avg_pool(const Var& x, int k);
Var max_pool(const Var& x, int k);

// y[:, c] = scale[c] * x[:, source[c]] + offset[c]
Var channel_affine(const Var& x, std::span<const int> source, std::span<const double> scale,
                   std::span<const double> offset);

// sum_i weights[i] * items[i], accumulated in order (first term assigned).
Var blend(std::span<const Var> items, std::span<const double> weights);
// Per-pixel version; maps[i] is (1, 1, H, W). Zero weights are skipped per
// pixel so a map that is constant reproduces blend() bit for bit.
Var blend_spatial(std::span<const Var> items, std::span<const Tensor> maps);

// (N, C, H, W) -> (N, 1, C, C); G = F F^T / (C * H * W).
Var gram(const Var& features);

Var mean(const Var& x);
Var mean_abs_diff(const Var& a, const Var& b);
Var mse(const Var& a, const Var& b);
// mean |dx| + mean |dy| with forward differences; a missing direction
// (width or height of 1) contributes nothing.
Var total_variation(const Var& x);

}  // namespace cartooner::nn
