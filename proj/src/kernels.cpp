#include "mfdp/kernels.hpp"

#include <algorithm>
#include <string>

namespace mfdp::kernels {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

// Range of output indices o with 0 <= o*stride - pad + k < extent.
struct Span1 {
  std::int64_t lo, hi;  // [lo, hi)
};

Span1 valid_range(std::int64_t out, std::int64_t extent, int stride, int pad, int k) {
  // o*stride >= pad - k  ->  o >= ceil((pad-k)/stride)
  std::int64_t lo = 0;
  const std::int64_t need = pad - k;
  if (need > 0) lo = (need + stride - 1) / stride;
  // o*stride <= extent - 1 + pad - k
  const std::int64_t top = extent - 1 + pad - k;
  std::int64_t hi = top < 0 ? 0 : top / stride + 1;
  hi = std::min(hi, out);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& w, const Conv2dOptions& o) {
  require(x.size() == 4, "conv2d: input must be N x C x H x W, got " + to_string(x));
  require(w.size() == 4, "conv2d: weight must be Cout x Cin/g x kh x kw, got " + to_string(w));
  require(o.groups > 0 && o.stride_h > 0 && o.stride_w > 0 && o.pad_h >= 0 && o.pad_w >= 0,
          "conv2d: invalid stride/padding/groups");
  require(x[1] % o.groups == 0, "conv2d: input channels (dim 1 = " + std::to_string(x[1]) +
                                    ") not divisible by groups " + std::to_string(o.groups));
  require(w[0] % o.groups == 0, "conv2d: output channels (weight dim 0 = " +
                                    std::to_string(w[0]) + ") not divisible by groups " +
                                    std::to_string(o.groups));
  require(w[1] == x[1] / o.groups, "conv2d: weight dim 1 = " + std::to_string(w[1]) +
                                       " does not match input channels per group " +
                                       std::to_string(x[1] / o.groups));
  const std::int64_t ho = (x[2] + 2 * o.pad_h - w[2]) / o.stride_h + 1;
  const std::int64_t wo = (x[3] + 2 * o.pad_w - w[3]) / o.stride_w + 1;
  require(x[2] + 2 * o.pad_h - w[2] >= 0 && ho > 0,
          "conv2d: output height non-positive for input height " + std::to_string(x[2]));
  require(x[3] + 2 * o.pad_w - w[3] >= 0 && wo > 0,
          "conv2d: output width non-positive for input width " + std::to_string(x[3]));
  return {x[0], w[0], ho, wo};
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& o) {
  const Shape ys = conv2d_output_shape(x.shape(), w.shape(), o);
  if (bias) {
    require(bias->shape() == Shape{w.dim(0)},
            "conv2d: bias must have shape [" + std::to_string(w.dim(0)) + "], got " +
                to_string(bias->shape()));
  }
  Tensor y(ys);
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::int64_t Ho = ys[2], Wo = ys[3];
  const std::int64_t cog = Co / o.groups;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t co = 0; co < Co; ++co) {
      const std::int64_t g = co / cog;
      double* out = y.ptr() + (n * Co + co) * Ho * Wo;
      for (std::int64_t cl = 0; cl < Cg; ++cl) {
        const std::int64_t ci = g * Cg + cl;
        const double* in = x.ptr() + (n * C + ci) * H * W;
        const double* wk = w.ptr() + (co * Cg + cl) * KH * KW;
        for (int ky = 0; ky < KH; ++ky) {
          const Span1 ry = valid_range(Ho, H, o.stride_h, o.pad_h, ky);
          for (int kx = 0; kx < KW; ++kx) {
            const Span1 rx = valid_range(Wo, W, o.stride_w, o.pad_w, kx);
            const double wv = wk[ky * KW + kx];
            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const double* row = in + (oy * o.stride_h - o.pad_h + ky) * W;
              double* orow = out + oy * Wo;
              if (o.stride_w == 1) {
                const double* src = row - o.pad_w + kx;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * src[ox];
              } else {
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox)
                  orow[ox] += wv * row[ox * o.stride_w - o.pad_w + kx];
              }
            }
          }
        }
      }
      if (bias) {
        const double b = (*bias)[static_cast<std::size_t>(co)];
        for (std::int64_t i = 0; i < Ho * Wo; ++i) out[i] += b;
      }
    }
  }
  return y;
}

Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, const Shape& x_shape,
                         const Conv2dOptions& o) {
  const Shape ys = conv2d_output_shape(x_shape, w.shape(), o);
  require(gy.shape() == ys, "conv2d backward: gradient shape " + to_string(gy.shape()) +
                                " does not match output shape " + to_string(ys));
  Tensor gx(x_shape);
  const std::int64_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
  const std::int64_t Co = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::int64_t Ho = ys[2], Wo = ys[3];
  const std::int64_t cog = Co / o.groups;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t ci = 0; ci < C; ++ci) {
      const std::int64_t g = ci / Cg;
      const std::int64_t cl = ci % Cg;
      double* gin = gx.ptr() + (n * C + ci) * H * W;
      for (std::int64_t co = g * cog; co < (g + 1) * cog; ++co) {
        const double* gout = gy.ptr() + (n * Co + co) * Ho * Wo;
        const double* wk = w.ptr() + (co * Cg + cl) * KH * KW;
        for (int ky = 0; ky < KH; ++ky) {
          const Span1 ry = valid_range(Ho, H, o.stride_h, o.pad_h, ky);
          for (int kx = 0; kx < KW; ++kx) {
            const Span1 rx = valid_range(Wo, W, o.stride_w, o.pad_w, kx);
            const double wv = wk[ky * KW + kx];
            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              double* row = gin + (oy * o.stride_h - o.pad_h + ky) * W;
              const double* grow = gout + oy * Wo;
              if (o.stride_w == 1) {
                double* dst = row - o.pad_w + kx;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * grow[ox];
              } else {
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox)
                  row[ox * o.stride_w - o.pad_w + kx] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
  return gx;
}

Tensor conv2d_grad_weight(const Tensor& gy, const Tensor& x, const Shape& w_shape,
                          const Conv2dOptions& o) {
  const Shape ys = conv2d_output_shape(x.shape(), w_shape, o);
  require(gy.shape() == ys, "conv2d backward: gradient shape " + to_string(gy.shape()) +
                                " does not match output shape " + to_string(ys));
  Tensor gw(w_shape);
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w_shape[0], Cg = w_shape[1], KH = w_shape[2], KW = w_shape[3];
  const std::int64_t Ho = ys[2], Wo = ys[3];
  const std::int64_t cog = Co / o.groups;
  for (std::int64_t co = 0; co < Co; ++co) {
    const std::int64_t g = co / cog;
    for (std::int64_t cl = 0; cl < Cg; ++cl) {
      const std::int64_t ci = g * Cg + cl;
      for (int ky = 0; ky < KH; ++ky) {
        const Span1 ry = valid_range(Ho, H, o.stride_h, o.pad_h, ky);
        for (int kx = 0; kx < KW; ++kx) {
          const Span1 rx = valid_range(Wo, W, o.stride_w, o.pad_w, kx);
          double acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* gout = gy.ptr() + (n * Co + co) * Ho * Wo;
            const double* in = x.ptr() + (n * C + ci) * H * W;
            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const double* row = in + (oy * o.stride_h - o.pad_h + ky) * W;
              const double* grow = gout + oy * Wo;
              for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox)
                acc += grow[ox] * row[ox * o.stride_w - o.pad_w + kx];
            }
          }
          gw[static_cast<std::size_t>(((co * Cg + cl) * KH + ky) * KW + kx)] = acc;
        }
      }
    }
  }
  return gw;
}

Tensor channel_sum(const Tensor& gy) {
  require(gy.rank() >= 2, "channel_sum: need at least N x C");
  const std::int64_t N = gy.dim(0), C = gy.dim(1);
  const std::int64_t inner = static_cast<std::int64_t>(gy.size()) / (N * C);
  Tensor gb(Shape{C});
  for (std::int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = gy.ptr() + (n * C + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
    }
    gb[static_cast<std::size_t>(c)] = acc;
  }
  return gb;
}

Shape conv_transpose2d_output_shape(const Shape& x, const Shape& w, const Conv2dOptions& o) {
  require(x.size() == 4, "conv_transpose2d: input must be N x C x H x W, got " + to_string(x));
  require(w.size() == 4, "conv_transpose2d: weight must be Cin x Cout x kh x kw, got " +
                             to_string(w));
  require(o.groups == 1, "conv_transpose2d: only groups = 1 is supported");
  require(w[0] == x[1], "conv_transpose2d: weight dim 0 = " + std::to_string(w[0]) +
                            " does not match input channels " + std::to_string(x[1]));
  const std::int64_t ho = (x[2] - 1) * o.stride_h + w[2] - 2 * o.pad_h;
  const std::int64_t wo = (x[3] - 1) * o.stride_w + w[3] - 2 * o.pad_w;
  require(ho > 0, "conv_transpose2d: output height non-positive");
  require(wo > 0, "conv_transpose2d: output width non-positive");
  const Shape out{x[0], w[1], ho, wo};
  // The forward conv of `out` must reproduce x's extents exactly.
  const Shape back = conv2d_output_shape(out, w, o);
  require(back[2] == x[2] && back[3] == x[3], "conv_transpose2d: inconsistent extents");
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* bias,
                        const Conv2dOptions& o) {
  const Shape ys = conv_transpose2d_output_shape(x.shape(), w.shape(), o);
  Tensor y = conv2d_grad_input(x, w, ys, o);
  if (bias) {
    require(bias->shape() == Shape{w.dim(1)}, "conv_transpose2d: bias must have shape [" +
                                                  std::to_string(w.dim(1)) + "]");
    const std::int64_t inner = ys[2] * ys[3];
    for (std::int64_t n = 0; n < ys[0]; ++n)
      for (std::int64_t c = 0; c < ys[1]; ++c) {
        double* p = y.ptr() + (n * ys[1] + c) * inner;
        const double b = (*bias)[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < inner; ++i) p[i] += b;
      }
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: operands must be 3-D, got " +
                                              to_string(a.shape()) + " and " +
                                              to_string(b.shape()));
  require(a.dim(0) == b.dim(0), "bmm: batch extents differ (" + std::to_string(a.dim(0)) +
                                    " vs " + std::to_string(b.dim(0)) + ")");
  const std::int64_t B = a.dim(0);
  const std::int64_t m = ta ? a.dim(2) : a.dim(1);
  const std::int64_t k = ta ? a.dim(1) : a.dim(2);
  const std::int64_t kb = tb ? b.dim(2) : b.dim(1);
  const std::int64_t n = tb ? b.dim(1) : b.dim(2);
  require(k == kb, "bmm: inner extents differ (" + std::to_string(k) + " vs " +
                       std::to_string(kb) + ")");
  Tensor c(Shape{B, m, n});
  const std::int64_t as1 = ta ? 1 : k, as2 = ta ? m : 1;   // a(i,p) = a[i*as1 + p*as2]
  const std::int64_t bs1 = tb ? 1 : n, bs2 = tb ? k : 1;   // b(p,j) = b[p*bs1 + j*bs2]
  for (std::int64_t bi = 0; bi < B; ++bi) {
    const double* A = a.ptr() + bi * m * k;
    const double* Bm = b.ptr() + bi * k * n;
    double* Cm = c.ptr() + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = Cm + i * n;
      // p outer, j inner: each c(i,j) accumulates over p in increasing order.
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = A[i * as1 + p * as2];
        const double* brow = Bm + p * bs1;
        if (bs2 == 1) {
          for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        } else {
          for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j * bs2];
        }
      }
    }
  }
  return c;
}

std::vector<int> inverse_permutation(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
  return inv;
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  require(static_cast<int>(axes.size()) == r, "permute: axes length must equal rank " +
                                                  std::to_string(r));
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int a : axes) {
    require(a >= 0 && a < r && !seen[static_cast<std::size_t>(a)], "permute: axes must be a permutation");
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r));
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] = s;
    s *= x.shape()[static_cast<std::size_t>(i)];
  }
  std::vector<std::int64_t> stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  Tensor y(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const std::int64_t last = out_shape.back();
  const std::int64_t last_stride = stride.back();
  const std::size_t total = y.size();
  std::int64_t base = 0;
  for (std::size_t o = 0; o < total; o += static_cast<std::size_t>(last)) {
    const double* src = x.ptr() + base;
    double* dst = y.ptr() + o;
    for (std::int64_t j = 0; j < last; ++j) dst[j] = src[j * last_stride];
    // advance the multi-index over all but the last axis
    for (int ax = r - 2; ax >= 0; --ax) {
      auto& i = idx[static_cast<std::size_t>(ax)];
      ++i;
      base += stride[static_cast<std::size_t>(ax)];
      if (i < out_shape[static_cast<std::size_t>(ax)]) break;
      base -= i * stride[static_cast<std::size_t>(ax)];
      i = 0;
    }
  }
  return y;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  require(x.rank() == 4, "pixel_shuffle: input must be N x C x H x W");
  require(r > 0 && x.dim(1) % (r * r) == 0,
          "pixel_shuffle: channel count " + std::to_string(x.dim(1)) +
              " not divisible by r^2 = " + std::to_string(r * r));
  const std::int64_t N = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
  Tensor y(Shape{N, C, H * r, W * r});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const std::int64_t cin = c * r * r + dy * r + dx;
          for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j)
              y.at(n, c, r * i + dy, r * j + dx) = x.at(n, cin, i, j);
        }
  return y;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  require(x.rank() == 4, "pixel_unshuffle: input must be N x C x H x W");
  require(r > 0 && x.dim(2) % r == 0 && x.dim(3) % r == 0,
          "pixel_unshuffle: spatial extents must be divisible by r = " + std::to_string(r));
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2) / r, W = x.dim(3) / r;
  Tensor y(Shape{N, C * r * r, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const std::int64_t cout = c * r * r + dy * r + dx;
          for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j)
              y.at(n, cout, i, j) = x.at(n, c, r * i + dy, r * j + dx);
        }
  return y;
}

}  // namespace mfdp::kernels
