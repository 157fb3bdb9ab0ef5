#pragma once

// Image quality metrics (PSNR, SSIM, MS-SSIM) and the differentiable
// training loss (Gaussian-weighted L1 mixed with an MS-SSIM term).

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "mfdp/autodiff.hpp"
#include "mfdp/cfa.hpp"

namespace mfdp {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// (2r+1) x (2r+1) normalized Gaussian; radius < 0 means ceil(3 sigma).
Tensor gaussian_kernel(double sigma, int radius = -1);
/// 2r+1 taps of the normalized 1-D Gaussian.
std::vector<double> gaussian_taps(double sigma, int radius = -1);

struct SsimOptions {
  int window = 11;
  double window_sigma = 1.5;
  double k1 = 0.01, k2 = 0.03, range = 1.0;
  std::vector<double> scale_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
};

/// Images are C x H x W tensors (or RgbImage); values on a [0, range] scale.
double psnr(const Tensor& a, const Tensor& b, double range = 1.0);
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o = {});
/// Dyadic pyramid MS-SSIM. When the image is too small for every scale, the
/// coarsest scales are dropped, weights renormalized, and a note goes to
/// `warn` (if non-null).
double ms_ssim(const Tensor& a, const Tensor& b, const SsimOptions& o = {},
               std::ostream* warn = nullptr);
/// Scale count ms_ssim will use for a given smaller image side.
int ms_ssim_levels(std::int64_t min_side, const SsimOptions& o = {});

inline double psnr(const RgbImage& a, const RgbImage& b) { return psnr(a.tensor(), b.tensor()); }
inline double ssim(const RgbImage& a, const RgbImage& b) { return ssim(a.tensor(), b.tensor()); }

struct LossConfig {
  double alpha = 0.16;
  std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0, 8.0};
  double k1 = 0.01, k2 = 0.03, range = 1.0;
  std::vector<double> scale_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

  bool operator==(const LossConfig&) const = default;
  void validate() const;
};

/// Separable Gaussian "same" filtering (zero padding) of every channel.
Var gaussian_blur(const Var& x, double sigma);
/// mean(G_sigma_max * |pred - target|)
Var gaussian_l1(const Var& pred, const Var& target, const LossConfig& cfg);
/// Per-channel MS-SSIM over the sigma list, averaged over batch and channels.
Var ms_ssim_index(const Var& pred, const Var& target, const LossConfig& cfg);
/// alpha * gaussian_l1 + (1 - alpha) * (1 - ms_ssim_index). Inputs N x C x H x W.
Var mixed_loss(const Var& pred, const Var& target, const LossConfig& cfg = {});

struct MetricRow {
  std::string image;
  double sigma255 = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

struct MetricReport {
  std::string dataset;
  std::string method;
  std::vector<MetricRow> rows;

  /// Arithmetic means over rows (image field "mean"); for a fixed sigma
  /// when `sigma255` >= 0.
  MetricRow mean(double sigma255 = -1.0) const;
  /// Header: image,sigma255,psnr_db,ssim,ms_ssim
  std::string to_csv() const;
  std::string to_markdown() const;
};

}  // namespace mfdp
