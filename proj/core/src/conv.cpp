#include "conv_kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace cartooner::nn::detail {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Geometry {
  int n, cin, h, w;
  int cout, cin_g, cout_g, k;
  int ho, wo;
  int stride, pad, groups;

  [[nodiscard]] int patch() const { return cin_g * k * k; }
  [[nodiscard]] int out_plane() const { return ho * wo; }
  [[nodiscard]] bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

Geometry geometry(const Shape& x, const Shape& wt, const ConvSpec& s) {
  Geometry g{};
  g.n = x.n;
  g.cin = x.c;
  g.h = x.h;
  g.w = x.w;
  g.cout = wt.n;
  g.cin_g = wt.c;
  g.k = wt.h;
  g.groups = s.groups;
  g.cout_g = wt.n / s.groups;
  g.stride = s.stride;
  g.pad = s.pad;
  g.ho = (x.h + 2 * s.pad - g.k) / s.stride + 1;
  g.wo = (x.w + 2 * s.pad - g.k) / s.stride + 1;
  return g;
}

// col[(c * k + ky) * k + kx][oy * wo + ox]
void im2col(const double* x, const Geometry& g, double* col) {
  const int plane = g.out_plane();
  for (int c = 0; c < g.cin_g; ++c) {
    const double* src = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* row = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            // Contiguous run [lo, hi) of valid output columns.
            const int lo = std::clamp(g.pad - kx, 0, g.wo);
            const int hi = std::clamp(g.w + g.pad - kx, lo, g.wo);
            std::fill(row, row + lo, 0.0);
            std::copy(srow + lo - g.pad + kx, srow + hi - g.pad + kx, row + lo);
            std::fill(row + hi, row + g.wo, 0.0);
          } else {
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              row[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const Geometry& g, double* x) {
  const int plane = g.out_plane();
  for (int c = 0; c < g.cin_g; ++c) {
    double* dst = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* row = src + static_cast<std::size_t>(oy) * g.wo;
          double* drow = dst + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Shape conv_output_shape(const Shape& x, const Shape& weight, const ConvSpec& spec) {
  const Geometry g = geometry(x, weight, spec);
  return {x.n, weight.n, g.ho, g.wo};
}

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      const ConvSpec& spec) {
  const Geometry g = geometry(x.shape(), weight.shape(), spec);
  Tensor y(Shape{g.n, g.cout, g.ho, g.wo});
  const int plane = g.out_plane();
  std::vector<double> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch()) * plane);

  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* xin = x.plane(n, grp * g.cin_g);
      const double* cols = xin;
      if (!g.pointwise()) {
        im2col(xin, g, col.data());
        cols = col.data();
      }
      ConstMapMat wmat(weight.data() + static_cast<std::size_t>(grp) * g.cout_g * g.patch(),
                       g.cout_g, g.patch());
      ConstMapMat cmat(cols, g.patch(), plane);
      MapMat ymat(y.plane(n, grp * g.cout_g), g.cout_g, plane);
      ymat.noalias() = wmat * cmat;
    }
    if (bias != nullptr) {
      for (int co = 0; co < g.cout; ++co) {
        const double b = bias->data()[co];
        double* p = y.plane(n, co);
        for (int i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                     const ConvSpec& spec, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
  const Geometry g = geometry(x.shape(), weight.shape(), spec);
  const int plane = g.out_plane();
  const std::size_t col_size = static_cast<std::size_t>(g.patch()) * plane;
  std::vector<double> col(g.pointwise() || grad_w == nullptr ? 0 : col_size);
  std::vector<double> dcol(g.pointwise() || grad_x == nullptr ? 0 : col_size);

  for (int n = 0; n < g.n; ++n) {
    if (grad_b != nullptr) {
      for (int co = 0; co < g.cout; ++co) {
        const double* p = grad_y.plane(n, co);
        double s = 0.0;
        for (int i = 0; i < plane; ++i) s += p[i];
        grad_b->data()[co] += s;
      }
    }
    for (int grp = 0; grp < g.groups; ++grp) {
      ConstMapMat gy(grad_y.plane(n, grp * g.cout_g), g.cout_g, plane);
      ConstMapMat wmat(weight.data() + static_cast<std::size_t>(grp) * g.cout_g * g.patch(),
                       g.cout_g, g.patch());
      if (grad_w != nullptr) {
        const double* cols = x.plane(n, grp * g.cin_g);
        if (!g.pointwise()) {
          im2col(cols, g, col.data());
          cols = col.data();
        }
        ConstMapMat cmat(cols, g.patch(), plane);
        MapMat gw(grad_w->data() + static_cast<std::size_t>(grp) * g.cout_g * g.patch(),
                  g.cout_g, g.patch());
        gw.noalias() += gy * cmat.transpose();
      }
      if (grad_x != nullptr) {
        double* gx = grad_x->plane(n, grp * g.cin_g);
        if (g.pointwise()) {
          MapMat gxm(gx, g.cin_g, plane);
          gxm.noalias() += wmat.transpose() * gy;
        } else {
          MapMat dc(dcol.data(), g.patch(), plane);
          dc.noalias() = wmat.transpose() * gy;
          col2im(dcol.data(), g, gx);
        }
      }
    }
  }
}

void gram_forward(const Tensor& f, Tensor& out) {
  const Shape& s = f.shape();
  const double norm = 1.0 / (static_cast<double>(s.c) * s.h * s.w);
  const int hw = static_cast<int>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    ConstMapMat fm(f.plane(n, 0), s.c, hw);
    MapMat gm(out.plane(n, 0), s.c, s.c);
    gm.noalias() = fm * fm.transpose();
    gm *= norm;
  }
}

void gram_backward(const Tensor& f, const Tensor& grad_out, Tensor& grad_f) {
  const Shape& s = f.shape();
  const double norm = 1.0 / (static_cast<double>(s.c) * s.h * s.w);
  const int hw = static_cast<int>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    ConstMapMat fm(f.plane(n, 0), s.c, hw);
    ConstMapMat go(grad_out.plane(n, 0), s.c, s.c);
    MapMat gf(grad_f.plane(n, 0), s.c, hw);
    const RowMat sym = (go + go.transpose()) * norm;
    gf.noalias() += sym * fm;
  }
}

}  // namespace cartooner::nn::detail
