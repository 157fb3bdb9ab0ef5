#pragma once

// Brute-force reference implementations used by the tests. Written
// independently of the library kernels (different loop order, no shared
// helpers).

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfdp/cfa.hpp"
#include "mfdp/tensor.hpp"

namespace mfdp::testing {

/// erf by its Maclaurin series; accurate to ~1e-15 for |x| <= 3.
inline double erf_series(double x) {
  double term = x, total = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const double add = term / (2 * n + 1);
    total += add;
    if (std::abs(add) < 1e-18) break;
  }
  return total * 2.0 / std::sqrt(3.14159265358979323846);
}

inline double gelu_oracle(double x) { return 0.5 * x * (1.0 + erf_series(x / std::sqrt(2.0))); }

/// Direct convolution: output-major with taps in column-major order.
inline Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                            int groups) {
  const auto N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const auto OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  const auto og = Cout / groups;
  (void)Cin;
  Tensor y(Shape{N, Cout, OH, OW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = b ? (*b)[static_cast<std::size_t>(co)] : 0.0;
          const std::int64_t g = co / og;
          for (std::int64_t j = 0; j < kw; ++j)
            for (std::int64_t i = 0; i < kh; ++i)
              for (std::int64_t c = 0; c < cg; ++c) {
                const std::int64_t iy = oy * stride + i - pad, ix = ox * stride + j - pad;
                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                acc += w.at(co, c, i, j) * x.at(n, g * cg + c, iy, ix);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

/// Nearest-neighbour demosaic by direct lookup of each 2x2 cell.
inline RgbImage nn_demosaic_oracle(const BayerMosaic& m) {
  RgbImage out = RgbImage::zeros(m.height(), m.width());
  for (std::int64_t y = 0; y < m.height(); ++y)
    for (std::int64_t x = 0; x < m.width(); ++x) {
      const std::int64_t by = y - y % 2, bx = x - x % 2;
      out.at(0, y, x) = m.at(by, bx);
      // green: G1 on the even row of the cell, G2 on the odd row
      out.at(1, y, x) = (y % 2 == 0) ? m.at(by, bx + 1) : m.at(by + 1, bx);
      out.at(2, y, x) = m.at(by + 1, bx + 1);
    }
  return out;
}

inline double psnr_oracle(const Tensor& a, const Tensor& b) {
  long double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  const double mse = static_cast<double>(se / a.size());
  return -10.0 * std::log10(mse);
}

/// Per-window SSIM statistics with the window weights recomputed inline.
struct WindowStats {
  double l, cs;
};

inline WindowStats ssim_window_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                      std::int64_t w, std::int64_t y0, std::int64_t x0) {
  const int K = 11;
  const double s = 1.5;
  double norm = 0, wts[K][K];
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      wts[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * s * s));
      norm += wts[i][j];
    }
  double ma = 0, mb = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      ma += wts[i][j] / norm * a[(y0 + i) * w + x0 + j];
      mb += wts[i][j] / norm * b[(y0 + i) * w + x0 + j];
    }
  double va = 0, vb = 0, cov = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double da = a[(y0 + i) * w + x0 + j] - ma, db = b[(y0 + i) * w + x0 + j] - mb;
      va += wts[i][j] / norm * da * da;
      vb += wts[i][j] / norm * db * db;
      cov += wts[i][j] / norm * da * db;
    }
  const double c1 = 0.0001, c2 = 0.0009;
  return {(2 * ma * mb + c1) / (ma * ma + mb * mb + c1), (2 * cov + c2) / (va + vb + c2)};
}

inline double ssim_plane_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                std::int64_t h, std::int64_t w, double* cs_mean = nullptr) {
  double total = 0, total_cs = 0;
  int count = 0;
  for (std::int64_t y = 0; y + 11 <= h; ++y)
    for (std::int64_t x = 0; x + 11 <= w; ++x) {
      const auto st = ssim_window_oracle(a, b, w, y, x);
      total += st.l * st.cs;
      total_cs += st.cs;
      ++count;
    }
  if (cs_mean) *cs_mean = total_cs / count;
  return total / count;
}

inline double ssim_oracle(const Tensor& a, const Tensor& b) {
  const auto C = a.dim(0), h = a.dim(1), w = a.dim(2);
  double total = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> pa(a.ptr() + c * h * w, a.ptr() + (c + 1) * h * w);
    std::vector<double> pb(b.ptr() + c * h * w, b.ptr() + (c + 1) * h * w);
    total += ssim_plane_oracle(pa, pb, h, w);
  }
  return total / C;
}

inline std::vector<double> plane(const Tensor& t, std::int64_t c) {
  const auto hw = t.dim(1) * t.dim(2);
  return {t.ptr() + c * hw, t.ptr() + (c + 1) * hw};
}

inline std::vector<double> pool2_oracle(const std::vector<double>& a, std::int64_t h, std::int64_t w) {
  std::vector<double> out;
  for (std::int64_t y = 0; y + 1 < h; y += 2)
    for (std::int64_t x = 0; x + 1 < w; x += 2)
      out.push_back((a[y * w + x] + a[y * w + x + 1] + a[(y + 1) * w + x] + a[(y + 1) * w + x + 1]) / 4);
  return out;
}

inline double ms_ssim_oracle(const Tensor& a, const Tensor& b, int levels) {
  const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double wsum = 0;
  for (int s = 0; s < levels; ++s) wsum += weights[s];
  double total = 0;
  for (std::int64_t c = 0; c < a.dim(0); ++c) {
    auto pa = plane(a, c), pb = plane(b, c);
    std::int64_t h = a.dim(1), w = a.dim(2);
    double v = 1;
    for (int s = 0; s < levels; ++s) {
      double cs = 0;
      const double full = ssim_plane_oracle(pa, pb, h, w, &cs);
      // negative similarities are floored before the fractional power
      v *= std::pow(std::max(s + 1 == levels ? full : cs, 1e-8), weights[s] / wsum);
      pa = pool2_oracle(pa, h, w);
      pb = pool2_oracle(pb, h, w);
      h /= 2;
      w /= 2;
    }
    total += v;
  }
  return total / a.dim(0);
}

}  // namespace mfdp::testing
