#include <gtest/gtest.h>

#include <cmath>

#include "cartooner/autograd.hpp"
#include "test_support.hpp"

namespace {

using namespace cartooner::nn;
using cartooner::testing::check_gradient;
using cartooner::testing::random_tensor;

constexpr double kTol = 1e-6;

TEST(Autograd, ConvGradients) {
  const Tensor x = random_tensor({2, 4, 6, 5}, 1);
  const Tensor w = random_tensor({6, 2, 3, 3}, 2, 0.3);
  const Tensor b = random_tensor({1, 6, 1, 1}, 3);
  const ConvSpec spec{2, 1, 2};
  auto loss = [&](const Var& xv, const Var& wv, const Var& bv) {
    return mean_abs_diff(conv2d(xv, wv, bv, spec), Var::constant(random_tensor({2, 6, 3, 3}, 4)));
  };
  EXPECT_LE(check_gradient([&](const Var& v) { return loss(v, Var::constant(w), Var::constant(b)); }, x, 60, 1)
                .max_rel_error,
            kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return loss(Var::constant(x), v, Var::constant(b)); }, w, 60, 2)
                .max_rel_error,
            kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return loss(Var::constant(x), Var::constant(w), v); }, b, 0, 3)
                .max_rel_error,
            kTol);
}

TEST(Autograd, ConvMatchesDirectSum) {
  const Tensor x = random_tensor({1, 2, 4, 4}, 5);
  const Tensor w = random_tensor({1, 2, 3, 3}, 6);
  const Var y = conv2d(Var::constant(x), Var::constant(w), Var(), {1, 1, 1});
  double want = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int iy = 1 + ky - 1, ix = 2 + kx - 1;
        want += w.at(0, c, ky, kx) * x.at(0, c, iy, ix);
      }
    }
  }
  EXPECT_NEAR(y.value().at(0, 0, 1, 2), want, 1e-12);
}

TEST(Autograd, ElementwiseGradients) {
  const Tensor x = random_tensor({1, 3, 4, 4}, 7);
  const Var t = Var::constant(random_tensor({1, 3, 4, 4}, 8));
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(leaky_relu(v, 0.2), t); }, x, 0, 1).max_rel_error, kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(tanh(v), t); }, x, 0, 1).max_rel_error, kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mean(softplus(v)); }, x, 0, 1).max_rel_error, kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(sub(scale(v, 3.0), t), t); }, x, 0, 1).max_rel_error,
            kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mean_abs_diff(v, t); }, x, 0, 1).max_rel_error, kTol);
}

TEST(Autograd, ShapeOpGradients) {
  const Tensor x = random_tensor({2, 4, 6, 6}, 9);
  const Var other = Var::constant(random_tensor({2, 2, 6, 6}, 10));
  auto target = [](Shape s) { return Var::constant(random_tensor(s, 11)); };
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(concat_channels(v, other), target({2, 6, 6, 6})); }, x,
                           80, 1)
                .max_rel_error,
            kTol);
  EXPECT_LE(
      check_gradient([&](const Var& v) { return mse(slice_channels(v, 1, 2), target({2, 2, 6, 6})); }, x, 80, 2)
          .max_rel_error,
      kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(resize_bilinear(v, 12, 9), target({2, 4, 12, 9})); },
                           x, 80, 3)
                .max_rel_error,
            kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(avg_pool(v, 2), target({2, 4, 3, 3})); }, x, 80, 4)
                .max_rel_error,
            kTol);
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(max_pool(v, 2), target({2, 4, 3, 3})); }, x, 80, 5)
                .max_rel_error,
            kTol);
}

TEST(Autograd, ChannelAffine) {
  const Tensor x = random_tensor({1, 3, 2, 2}, 12);
  const int src[3] = {2, 1, 0};
  const double sc[3] = {2.0, 3.0, 4.0};
  const double off[3] = {-1.0, 0.5, 7.0};
  const Var y = channel_affine(Var::constant(x), src, sc, off);
  EXPECT_NEAR(y.value().at(0, 0, 1, 1), 2.0 * x.at(0, 2, 1, 1) - 1.0, 1e-15);
  EXPECT_NEAR(y.value().at(0, 2, 0, 1), 4.0 * x.at(0, 0, 0, 1) + 7.0, 1e-15);
  const Var t = Var::constant(random_tensor({1, 3, 2, 2}, 13));
  EXPECT_LE(
      check_gradient([&](const Var& v) { return mse(channel_affine(v, src, sc, off), t); }, x, 0, 1).max_rel_error,
      kTol);
}

TEST(Autograd, CropKernel) {
  const Tensor w = random_tensor({2, 3, 7, 7}, 14);
  const Var c = crop_kernel(Var::constant(w), 3);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 3, 3}));
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 3; ++i) {
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) EXPECT_EQ(c.value().at(o, i, y, x), w.at(o, i, y + 2, x + 2));
      }
    }
  }
  const Var t = Var::constant(random_tensor({2, 3, 3, 3}, 15));
  EXPECT_LE(check_gradient([&](const Var& v) { return mse(crop_kernel(v, 3), t); }, w, 0, 1).max_rel_error, kTol);
}

TEST(Autograd, BlendAndSpatialBlend) {
  const Var a = Var::constant(random_tensor({1, 2, 3, 3}, 16));
  const Var b = Var::constant(random_tensor({1, 2, 3, 3}, 17));
  const Var items[2] = {a, b};
  const double w[2] = {0.3, 0.7};
  const Var y = blend(items, w);
  EXPECT_NEAR(y.value().at(0, 1, 2, 2), 0.3 * a.value().at(0, 1, 2, 2) + 0.7 * b.value().at(0, 1, 2, 2), 1e-15);

  const Tensor maps[2] = {Tensor({1, 1, 3, 3}, 0.3), Tensor({1, 1, 3, 3}, 0.7)};
  EXPECT_EQ(blend_spatial(items, maps).value(), y.value());

  const Tensor x = random_tensor({1, 2, 3, 3}, 18);
  const Tensor m0 = random_tensor({1, 1, 3, 3}, 19);
  const Tensor sm[2] = {m0, Tensor({1, 1, 3, 3}, 0.5)};
  const Var t = Var::constant(random_tensor({1, 2, 3, 3}, 20));
  EXPECT_LE(check_gradient(
                [&](const Var& v) {
                  const Var it[2] = {v, b};
                  return mse(blend_spatial(it, sm), t);
                },
                x, 0, 1)
                .max_rel_error,
            kTol);
}

TEST(Autograd, GramOfConstantFeature) {
  // 2 channels, 2x2, value v: every entry v^2 H W / (C H W) = v^2 / C.
  const double v = 1.5;
  const Var g = gram(Var::constant(Tensor({1, 2, 2, 2}, v)));
  ASSERT_EQ(g.shape(), (Shape{1, 1, 2, 2}));
  for (double e : g.value().values()) EXPECT_NEAR(e, v * v / 2.0, 1e-15);
}

TEST(Autograd, GramIsSymmetricPsd) {
  const Var g = gram(Var::constant(random_tensor({1, 3, 4, 5}, 21)));
  const Tensor& G = g.value();
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(G.at(0, 0, i, i), 0.0);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(G.at(0, 0, i, j), G.at(0, 0, j, i), 1e-15);
  }
  // 2x2 principal minors are non-negative for a PSD matrix.
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      EXPECT_GE(G.at(0, 0, i, i) * G.at(0, 0, j, j) - G.at(0, 0, i, j) * G.at(0, 0, j, i), -1e-12);
    }
  }
  const Var t = Var::constant(random_tensor({1, 1, 3, 3}, 22));
  EXPECT_LE(
      check_gradient([&](const Var& v) { return mse(gram(v), t); }, random_tensor({1, 3, 4, 5}, 23), 0, 1)
          .max_rel_error,
      kTol);
}

TEST(Autograd, TotalVariationCases) {
  EXPECT_EQ(total_variation(Var::constant(Tensor({1, 1, 5, 5}, 0.3))).value().values()[0], 0.0);
  const Var row = Var::constant(Tensor({1, 1, 1, 2}, std::vector<double>{0.2, 0.9}));
  EXPECT_NEAR(total_variation(row).value().values()[0], 0.7, 1e-15);
  // [[0, 1], [0, 1]]: x-diffs {1, 1}, y-diffs {0, 0}.
  const Var sq = Var::constant(Tensor({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1}));
  EXPECT_NEAR(total_variation(sq).value().values()[0], 1.0, 1e-15);
  EXPECT_LE(check_gradient([](const Var& v) { return total_variation(v); }, random_tensor({1, 1, 8, 8}, 24), 0, 1, 1e-5, 1e-3)
                .max_rel_error,
            kTol);
}

TEST(Autograd, NoGradGuardSkipsTape) {
  const Var x = Var::leaf(random_tensor({1, 1, 2, 2}, 25), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    const Var y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(scale(x, 2.0).requires_grad());
}

TEST(Autograd, DetachStopsGradient) {
  const Var x = Var::leaf(random_tensor({1, 1, 2, 2}, 26), true);
  const Var y = add(scale(x, 2.0), scale(x, 3.0).detach());
  mean(y).backward();
  for (double g : x.grad().values()) EXPECT_NEAR(g, 2.0 / 4.0, 1e-15);
}

TEST(Autograd, GradientsAccumulateUntilZeroed) {
  Var x = Var::leaf(Tensor({1, 1, 1, 1}, 1.0), true);
  mean(scale(x, 2.0)).backward();
  mean(scale(x, 2.0)).backward();
  EXPECT_EQ(x.grad().values()[0], 4.0);
  x.zero_grad();
  EXPECT_TRUE(x.grad().empty());
}

TEST(Autograd, FrozenLeafGetsNoGradient) {
  const Var x = Var::leaf(Tensor({1, 1, 1, 1}, 1.0), false);
  const Var y = Var::leaf(Tensor({1, 1, 1, 1}, 1.0), true);
  mean(add(x, y)).backward();
  EXPECT_TRUE(x.grad().empty());
  EXPECT_FALSE(y.grad().empty());
}

}  // namespace
