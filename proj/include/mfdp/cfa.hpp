#pragma once

// Bayer capture simulation and the subband rearrangements around it.
//
// Phase is fixed to RGGB with 0-based indexing: R at (even row, even col),
// G1 at (even, odd), G2 at (odd, even), B at (odd, odd).

#include <cstdint>

#include "mfdp/tensor.hpp"

namespace mfdp {

/// 3 x 2H x 2W image, nominal range [0, 1].
class RgbImage {
 public:
  explicit RgbImage(Tensor t);
  static RgbImage zeros(std::int64_t height, std::int64_t width);

  std::int64_t height() const { return t_.dim(1); }
  std::int64_t width() const { return t_.dim(2); }
  const Tensor& tensor() const { return t_; }
  Tensor& tensor() { return t_; }
  double& at(int c, std::int64_t y, std::int64_t x) {
    return t_[static_cast<std::size_t>((c * height() + y) * width() + x)];
  }
  double at(int c, std::int64_t y, std::int64_t x) const {
    return t_[static_cast<std::size_t>((c * height() + y) * width() + x)];
  }
  /// Clamp to [0, 1]; used at I/O boundaries only.
  RgbImage clamped() const;

 private:
  Tensor t_;
};

/// 1 x 2H x 2W single-channel CFA capture.
class BayerMosaic {
 public:
  explicit BayerMosaic(Tensor t);
  std::int64_t height() const { return t_.dim(1); }
  std::int64_t width() const { return t_.dim(2); }
  const Tensor& tensor() const { return t_; }
  double& at(std::int64_t y, std::int64_t x) {
    return t_[static_cast<std::size_t>(y * width() + x)];
  }
  double at(std::int64_t y, std::int64_t x) const {
    return t_[static_cast<std::size_t>(y * width() + x)];
  }

 private:
  Tensor t_;
};

/// 4 x H x W subband stack, channels [r(R), g(G1), g(G2), b(B)].
class RggbStack {
 public:
  explicit RggbStack(Tensor t);
  std::int64_t height() const { return t_.dim(1); }
  std::int64_t width() const { return t_.dim(2); }
  const Tensor& tensor() const { return t_; }

 private:
  Tensor t_;
};

struct NoiseSpec {
  double sigma = 0.0;  // in [0, 1] units, i.e. sigma_255 / 255
  std::uint64_t seed = 0;
};

enum class Task { Demosaic, JointDenoise };

enum class CfaColor { Red = 0, Green = 1, Blue = 2 };
CfaColor cfa_color(std::int64_t y, std::int64_t x);

BayerMosaic mosaic(const RgbImage& rgb);
RggbStack pack_rggb(const BayerMosaic& bayer);
BayerMosaic unpack_rggb(const RggbStack& stack);
/// 12 x H x W: [r,r,r,r, g1,g1,g2,g2, b,b,b,b].
Tensor warm_start(const RggbStack& stack);
/// Nearest-neighbour demosaic, pixel_shuffle(warm_start(pack_rggb(X)), 2).
RgbImage demosaic_nn(const BayerMosaic& bayer);
BayerMosaic add_gaussian_noise(const BayerMosaic& bayer, const NoiseSpec& spec);
/// 8 x H x W: [r, s, g1, s, g2, s, b, s] with s the constant sigma map.
Tensor attach_noise_map(const RggbStack& stack, double sigma, Task task);

/// Channel indices of warm_start in terms of the 4 stack channels.
inline constexpr int kWarmStartChannels[12] = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 3, 3};

}  // namespace mfdp
