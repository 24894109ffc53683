#include "cartooner/autograd.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "cartooner/error.hpp"
#include "conv_kernels.hpp"

namespace cartooner::nn {

// ---- Tensor -------------------------------------------------------------

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ContractError("tensor value count " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ContractError("add_: shape " + other.shape_.str() + " vs " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

Tensor Tensor::reshaped(Shape s) const {
  if (s.size() != data_.size()) throw ContractError("reshape to " + s.str() + " from " + shape_.str());
  return Tensor(s, data_);
}

Tensor Tensor::batch_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) throw ContractError("batch_slice out of range");
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                        data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
  return Tensor(Shape{count, shape_.c, shape_.h, shape_.w}, std::move(v));
}

Tensor Tensor::channel_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.c) throw ContractError("channel_slice out of range");
  Tensor out(Shape{shape_.n, count, shape_.h, shape_.w});
  for (int n = 0; n < shape_.n; ++n) {
    std::copy_n(plane(n, first), static_cast<std::size_t>(count) * shape_.plane(), out.plane(n, 0));
  }
  return out;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ContractError("stack_batch: no items");
  const Shape first = items.front().shape();
  std::vector<double> v;
  v.reserve(first.size() * items.size());
  int n = 0;
  for (const Tensor& t : items) {
    const Shape& s = t.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ContractError("stack_batch: shape " + s.str() + " vs " + first.str());
    }
    v.insert(v.end(), t.values().begin(), t.values().end());
    n += s.n;
  }
  return Tensor(Shape{n, first.c, first.h, first.w}, std::move(v));
}

std::uint64_t bit_hash(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---- tape ----------------------------------------------------------------

namespace {
thread_local bool t_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
  } else {
    grad.add_(g);
  }
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

const Tensor& Var::value() const { return node_->value; }
const Tensor& Var::grad() const { return node_->grad; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }

void Var::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw ContractError("set_requires_grad on a non-leaf");
  node_->requires_grad = on;
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf) throw ContractError("mutable_value on a non-leaf");
  return node_->value;
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var Var::detach() const { return Var::constant(node_->value); }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  if (t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); })) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void Var::backward() const {
  if (node_->value.size() != 1) throw ContractError("backward() needs a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].node();
      if (child->requires_grad && !child->is_leaf && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate(Tensor(node_->value.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    if (n != node_.get()) n->grad = Tensor();
  }
}

// ---- ops -----------------------------------------------------------------

namespace {

Node& in(Node& self, std::size_t i) { return *self.inputs[i].node(); }

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor y(x.shape());
  const auto xs = x.value().values();
  auto ys = y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  return make_result(std::move(y), {x}, [deriv](Node& self) {
    Node& a = in(self, 0);
    if (!a.requires_grad) return;
    Tensor& ga = a.grad_buffer();
    const auto xs = a.value.values();
    const auto ys = self.value.values();
    const auto gy = self.grad.values();
    auto gx = ga.values();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += gy[i] * deriv(xs[i], ys[i]);
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (spec.groups < 1 || xs.c != ws.c * spec.groups || ws.n % spec.groups != 0 || ws.h != ws.w) {
    throw ContractError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str() +
                        " groups " + std::to_string(spec.groups));
  }
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ContractError("conv2d: bias size mismatch");
  }
  if (xs.h + 2 * spec.pad < ws.h || xs.w + 2 * spec.pad < ws.w) {
    throw ContractError("conv2d: kernel larger than padded input");
  }
  Tensor y = detail::conv2d_forward(x.value(), weight.value(),
                                    bias.defined() ? &bias.value() : nullptr, spec);
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(y), std::move(inputs), [spec](Node& self) {
    Node& nx = in(self, 0);
    Node& nw = in(self, 1);
    Tensor* gx = nx.requires_grad ? &nx.grad_buffer() : nullptr;
    Tensor* gw = nw.requires_grad ? &nw.grad_buffer() : nullptr;
    Tensor* gb = nullptr;
    if (self.inputs.size() > 2 && in(self, 2).requires_grad) gb = &in(self, 2).grad_buffer();
    detail::conv2d_backward(nx.value, nw.value, self.grad, spec, gx, gw, gb);
  });
}

Var crop_kernel(const Var& weight, int k) {
  const Shape& s = weight.shape();
  if (k < 1 || k > s.h || (s.h - k) % 2 != 0 || s.h != s.w) {
    throw ContractError("crop_kernel: cannot take a centered " + std::to_string(k) + " window of " +
                        s.str());
  }
  const int off = (s.h - k) / 2;
  Tensor y(Shape{s.n, s.c, k, k});
  for (int o = 0; o < s.n; ++o)
    for (int i = 0; i < s.c; ++i)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) y.at(o, i, ky, kx) = weight.value().at(o, i, ky + off, kx + off);
  return make_result(std::move(y), {weight}, [off, k](Node& self) {
    Node& w = in(self, 0);
    Tensor& gw = w.grad_buffer();
    const Shape& s = w.value.shape();
    for (int o = 0; o < s.n; ++o)
      for (int i = 0; i < s.c; ++i)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) gw.at(o, i, ky + off, kx + off) += self.grad.at(o, i, ky, kx);
  });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        // sigmoid(v), evaluated without overflow
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  y.add_(b.value());
  return make_result(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (in(self, i).requires_grad) in(self, i).accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  const auto bs = b.value().values();
  auto ys = y.values();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] -= bs[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) {
      Tensor g = self.grad;
      g.scale_(-1.0);
      in(self, 1).accumulate(g);
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor y = x.value();
  y.scale_(s);
  return make_result(std::move(y), {x}, [s](Node& self) {
    Tensor g = self.grad;
    g.scale_(s);
    in(self, 0).accumulate(g);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ContractError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().plane(n, 0), sa.c * sa.plane(), y.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), sb.c * sb.plane(), y.plane(n, sa.c));
  }
  const int ca = sa.c;
  return make_result(std::move(y), {a, b}, [ca](Node& self) {
    const Shape& s = self.value.shape();
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad.channel_slice(0, ca));
    if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad.channel_slice(ca, s.c - ca));
  });
}

Var slice_channels(const Var& x, int first, int count) {
  Tensor y = x.value().channel_slice(first, count);
  return make_result(std::move(y), {x}, [first, count](Node& self) {
    Tensor& g = in(self, 0).grad_buffer();
    const Shape& s = self.value.shape();
    for (int n = 0; n < s.n; ++n) {
      const double* src = self.grad.plane(n, 0);
      double* dst = g.plane(n, first);
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * s.plane(); ++i) dst[i] += src[i];
    }
  });
}

namespace {

struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> l0, l1;
};

Taps bilinear_taps(int in_size, int out_size) {
  Taps t;
  t.i0.resize(out_size);
  t.i1.resize(out_size);
  t.l0.resize(out_size);
  t.l1.resize(out_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = std::max((o + 0.5) * ratio - 0.5, 0.0);
    int i0 = std::min(static_cast<int>(src), in_size - 1);
    int i1 = std::min(i0 + 1, in_size - 1);
    double l1 = src - i0;
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.l1[o] = l1;
    t.l0[o] = 1.0 - l1;
  }
  return t;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1) throw ContractError("resize_bilinear: empty output");
  auto ty = std::make_shared<Taps>(bilinear_taps(s.h, out_h));
  auto tx = std::make_shared<Taps>(bilinear_taps(s.w, out_w));
  Tensor y(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* q = y.plane(n, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const double* r0 = p + static_cast<std::size_t>(ty->i0[oy]) * s.w;
        const double* r1 = p + static_cast<std::size_t>(ty->i1[oy]) * s.w;
        for (int ox = 0; ox < out_w; ++ox) {
          const int a = tx->i0[ox], b = tx->i1[ox];
          q[oy * out_w + ox] = ty->l0[oy] * (tx->l0[ox] * r0[a] + tx->l1[ox] * r0[b]) +
                               ty->l1[oy] * (tx->l0[ox] * r1[a] + tx->l1[ox] * r1[b]);
        }
      }
    }
  }
  return make_result(std::move(y), {x}, [ty, tx](Node& self) {
    Node& a = in(self, 0);
    Tensor& g = a.grad_buffer();
    const Shape& si = a.value.shape();
    const Shape& so = self.value.shape();
    for (int n = 0; n < si.n; ++n) {
      for (int c = 0; c < si.c; ++c) {
        const double* gy = self.grad.plane(n, c);
        double* gx = g.plane(n, c);
        for (int oy = 0; oy < so.h; ++oy) {
          double* r0 = gx + static_cast<std::size_t>(ty->i0[oy]) * si.w;
          double* r1 = gx + static_cast<std::size_t>(ty->i1[oy]) * si.w;
          for (int ox = 0; ox < so.w; ++ox) {
            const double v = gy[oy * so.w + ox];
            const int p = tx->i0[ox], q = tx->i1[ox];
            r0[p] += ty->l0[oy] * tx->l0[ox] * v;
            r0[q] += ty->l0[oy] * tx->l1[ox] * v;
            r1[p] += ty->l1[oy] * tx->l0[ox] * v;
            r1[q] += ty->l1[oy] * tx->l1[ox] * v;
          }
        }
      }
    }
  });
}

Var avg_pool(const Var& x, int k) {
  const Shape& s = x.shape();
  const int oh = s.h / k, ow = s.w / k;
  if (k < 1 || oh < 1 || ow < 1) throw ContractError("avg_pool: window larger than input");
  Tensor y(Shape{s.n, s.c, oh, ow});
  const double inv = 1.0 / (k * k);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* q = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) acc += p[(oy * k + dy) * s.w + ox * k + dx];
          q[oy * ow + ox] = acc * inv;
        }
    }
  return make_result(std::move(y), {x}, [k, inv](Node& self) {
    Node& a = in(self, 0);
    Tensor& g = a.grad_buffer();
    const Shape& si = a.value.shape();
    const Shape& so = self.value.shape();
    for (int n = 0; n < si.n; ++n)
      for (int c = 0; c < si.c; ++c) {
        const double* gy = self.grad.plane(n, c);
        double* gx = g.plane(n, c);
        for (int oy = 0; oy < so.h; ++oy)
          for (int ox = 0; ox < so.w; ++ox) {
            const double v = gy[oy * so.w + ox] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) gx[(oy * k + dy) * si.w + ox * k + dx] += v;
          }
      }
  });
}

Var max_pool(const Var& x, int k) {
  const Shape& s = x.shape();
  const int oh = s.h / k, ow = s.w / k;
  if (k < 1 || oh < 1 || ow < 1) throw ContractError("max_pool: window larger than input");
  Tensor y(Shape{s.n, s.c, oh, ow});
  auto argmax = std::make_shared<std::vector<int>>(y.size());
  std::size_t idx = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* q = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++idx) {
          int best = (oy * k) * s.w + ox * k;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int j = (oy * k + dy) * s.w + ox * k + dx;
              if (p[j] > p[best]) best = j;
            }
          (*argmax)[idx] = best;
          q[oy * ow + ox] = p[best];
        }
    }
  return make_result(std::move(y), {x}, [argmax](Node& self) {
    Node& a = in(self, 0);
    Tensor& g = a.grad_buffer();
    const Shape& so = self.value.shape();
    std::size_t idx = 0;
    for (int n = 0; n < so.n; ++n)
      for (int c = 0; c < so.c; ++c) {
        const double* gy = self.grad.plane(n, c);
        double* gx = g.plane(n, c);
        for (std::size_t i = 0; i < so.plane(); ++i, ++idx) gx[(*argmax)[idx]] += gy[i];
      }
  });
}

Var channel_affine(const Var& x, std::span<const int> source, std::span<const double> scale_by,
                   std::span<const double> offset) {
  const Shape& s = x.shape();
  const int co = static_cast<int>(source.size());
  if (scale_by.size() != source.size() || offset.size() != source.size()) {
    throw ContractError("channel_affine: mismatched table sizes");
  }
  for (int src : source) {
    if (src < 0 || src >= s.c) throw ContractError("channel_affine: bad source channel");
  }
  std::vector<int> src_v(source.begin(), source.end());
  std::vector<double> sc_v(scale_by.begin(), scale_by.end());
  Tensor y(Shape{s.n, co, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < co; ++c) {
      const double* p = x.value().plane(n, src_v[c]);
      double* q = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) q[i] = sc_v[c] * p[i] + offset[c];
    }
  return make_result(std::move(y), {x}, [src_v, sc_v](Node& self) {
    Tensor& g = in(self, 0).grad_buffer();
    const Shape& so = self.value.shape();
    for (int n = 0; n < so.n; ++n)
      for (int c = 0; c < so.c; ++c) {
        const double* gy = self.grad.plane(n, c);
        double* gx = g.plane(n, src_v[c]);
        for (std::size_t i = 0; i < so.plane(); ++i) gx[i] += sc_v[c] * gy[i];
      }
  });
}

Var blend(std::span<const Var> items, std::span<const double> weights) {
  if (items.empty() || items.size() != weights.size()) throw ContractError("blend: bad arguments");
  const Shape& s = items.front().shape();
  Tensor y(s);
  auto ys = y.values();
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (items[k].shape() != s) throw ContractError("blend: branch shapes differ");
    const auto xs = items[k].value().values();
    const double w = weights[k];
    if (k == 0) {
      for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = w * xs[i];
    } else {
      for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += w * xs[i];
    }
  }
  std::vector<double> wv(weights.begin(), weights.end());
  return make_result(std::move(y), std::vector<Var>(items.begin(), items.end()), [wv](Node& self) {
    for (std::size_t k = 0; k < wv.size(); ++k) {
      if (!in(self, k).requires_grad) continue;
      Tensor g = self.grad;
      g.scale_(wv[k]);
      in(self, k).accumulate(g);
    }
  });
}

Var blend_spatial(std::span<const Var> items, std::span<const Tensor> maps) {
  if (items.empty() || items.size() != maps.size()) throw ContractError("blend_spatial: bad arguments");
  const Shape& s = items.front().shape();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Shape& ms = maps[k].shape();
    if (items[k].shape() != s) throw ContractError("blend_spatial: branch shapes differ");
    if (ms.n != 1 || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
      throw ContractError("blend_spatial: weight map " + ms.str() + " does not cover " + s.str());
    }
  }
  Tensor y(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double* q = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        bool first = true;
        double acc = 0.0;
        for (std::size_t k = 0; k < items.size(); ++k) {
          const double w = maps[k].data()[i];
          if (w == 0.0) continue;
          const double term = w * items[k].value().plane(n, c)[i];
          acc = first ? term : acc + term;
          first = false;
        }
        q[i] = acc;
      }
    }
  auto mv = std::make_shared<std::vector<Tensor>>(maps.begin(), maps.end());
  return make_result(std::move(y), std::vector<Var>(items.begin(), items.end()), [mv](Node& self) {
    const Shape& s = self.value.shape();
    for (std::size_t k = 0; k < mv->size(); ++k) {
      if (!in(self, k).requires_grad) continue;
      Tensor& g = in(self, k).grad_buffer();
      const double* m = (*mv)[k].data();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double* gy = self.grad.plane(n, c);
          double* gx = g.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += m[i] * gy[i];
        }
    }
  });
}

Var gram(const Var& features) {
  const Shape& s = features.shape();
  if (s.size() == 0) throw ContractError("gram: empty feature map");
  Tensor y(Shape{s.n, 1, s.c, s.c});
  detail::gram_forward(features.value(), y);
  return make_result(std::move(y), {features}, [](Node& self) {
    Node& f = in(self, 0);
    detail::gram_backward(f.value, self.grad, f.grad_buffer());
  });
}

Var mean(const Var& x) {
  const std::size_t count = x.value().size();
  if (count == 0) throw ContractError("mean of an empty tensor");
  Tensor y(Shape{1, 1, 1, 1}, x.value().sum() / static_cast<double>(count));
  return make_result(std::move(y), {x}, [count](Node& self) {
    Tensor& g = in(self, 0).grad_buffer();
    const double v = self.grad.data()[0] / static_cast<double>(count);
    for (double& e : g.values()) e += v;
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const auto as = a.value().values();
  const auto bs = b.value().values();
  if (as.empty()) throw ContractError("mean_abs_diff of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) acc += std::abs(as[i] - bs[i]);
  const double n = static_cast<double>(as.size());
  return make_result(Tensor(Shape{1, 1, 1, 1}, acc / n), {a, b}, [n](Node& self) {
    const double gy = self.grad.data()[0] / n;
    const auto as = in(self, 0).value.values();
    const auto bs = in(self, 1).value.values();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!in(self, k).requires_grad) continue;
      const double sign_flip = k == 0 ? 1.0 : -1.0;
      auto g = in(self, k).grad_buffer().values();
      for (std::size_t i = 0; i < as.size(); ++i) {
        const double d = as[i] - bs[i];
        const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        g[i] += sign_flip * sg * gy;
      }
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const auto as = a.value().values();
  const auto bs = b.value().values();
  if (as.empty()) throw ContractError("mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) acc += (as[i] - bs[i]) * (as[i] - bs[i]);
  const double n = static_cast<double>(as.size());
  return make_result(Tensor(Shape{1, 1, 1, 1}, acc / n), {a, b}, [n](Node& self) {
    const double gy = self.grad.data()[0] * 2.0 / n;
    const auto as = in(self, 0).value.values();
    const auto bs = in(self, 1).value.values();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!in(self, k).requires_grad) continue;
      const double sign_flip = k == 0 ? 1.0 : -1.0;
      auto g = in(self, k).grad_buffer().values();
      for (std::size_t i = 0; i < as.size(); ++i) g[i] += sign_flip * (as[i] - bs[i]) * gy;
    }
  });
}

Var total_variation(const Var& x) {
  const Shape& s = x.shape();
  if (s.h < 2 && s.w < 2) throw ContractError("total_variation: degenerate 1-pixel image");
  const double nx = static_cast<double>(s.n) * s.c * s.h * (s.w - 1);
  const double ny = static_cast<double>(s.n) * s.c * (s.h - 1) * s.w;
  double sx = 0.0, sy = 0.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          if (w + 1 < s.w) sx += std::abs(p[h * s.w + w + 1] - p[h * s.w + w]);
          if (h + 1 < s.h) sy += std::abs(p[(h + 1) * s.w + w] - p[h * s.w + w]);
        }
    }
  double v = 0.0;
  if (nx > 0) v += sx / nx;
  if (ny > 0) v += sy / ny;
  return make_result(Tensor(Shape{1, 1, 1, 1}, v), {x}, [nx, ny](Node& self) {
    Node& a = in(self, 0);
    Tensor& g = a.grad_buffer();
    const Shape& s = a.value.shape();
    const double gy = self.grad.data()[0];
    auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* p = a.value.plane(n, c);
        double* q = g.plane(n, c);
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            const int i = h * s.w + w;
            if (w + 1 < s.w) {
              const double d = sgn(p[i + 1] - p[i]) * gy / nx;
              q[i + 1] += d;
              q[i] -= d;
            }
            if (h + 1 < s.h) {
              const double d = sgn(p[i + s.w] - p[i]) * gy / ny;
              q[i + s.w] += d;
              q[i] -= d;
            }
          }
      }
  });
}

}  // namespace cartooner::nn
