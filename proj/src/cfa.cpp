#include "mfdp/cfa.hpp"

#include <algorithm>

#include "mfdp/kernels.hpp"
#include "mfdp/rng.hpp"

namespace mfdp {

namespace {

void require_even(std::int64_t h, std::int64_t w, const char* what) {
  if (h % 2 != 0 || w % 2 != 0) {
    throw ContractError(std::string(what) + ": spatial extents must be even, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

RgbImage::RgbImage(Tensor t) : t_(std::move(t)) {
  if (t_.rank() != 3 || t_.dim(0) != 3) {
    throw ContractError("RgbImage must be 3 x H x W, got " + to_string(t_.shape()));
  }
  require_even(t_.dim(1), t_.dim(2), "RgbImage");
}

RgbImage RgbImage::zeros(std::int64_t height, std::int64_t width) {
  return RgbImage(Tensor(Shape{3, height, width}));
}

RgbImage RgbImage::clamped() const {
  Tensor c = t_;
  for (double& v : c.data()) v = std::clamp(v, 0.0, 1.0);
  return RgbImage(std::move(c));
}

BayerMosaic::BayerMosaic(Tensor t) : t_(std::move(t)) {
  if (t_.rank() != 3 || t_.dim(0) != 1) {
    throw ContractError("BayerMosaic must be 1 x H x W, got " + to_string(t_.shape()));
  }
  require_even(t_.dim(1), t_.dim(2), "BayerMosaic");
}

RggbStack::RggbStack(Tensor t) : t_(std::move(t)) {
  if (t_.rank() != 3 || t_.dim(0) != 4) {
    throw ContractError("RggbStack must be 4 x H x W, got " + to_string(t_.shape()));
  }
}

CfaColor cfa_color(std::int64_t y, std::int64_t x) {
  if (y % 2 == 0) return x % 2 == 0 ? CfaColor::Red : CfaColor::Green;
  return x % 2 == 0 ? CfaColor::Green : CfaColor::Blue;
}

BayerMosaic mosaic(const RgbImage& rgb) {
  const std::int64_t H = rgb.height(), W = rgb.width();
  Tensor out(Shape{1, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      out[static_cast<std::size_t>(y * W + x)] = rgb.at(static_cast<int>(cfa_color(y, x)), y, x);
  return BayerMosaic(std::move(out));
}

RggbStack pack_rggb(const BayerMosaic& bayer) {
  const Tensor& t = bayer.tensor();
  Tensor u = kernels::pixel_unshuffle(t.reshaped({1, 1, t.dim(1), t.dim(2)}), 2);
  return RggbStack(u.reshaped({4, u.dim(2), u.dim(3)}));
}

BayerMosaic unpack_rggb(const RggbStack& stack) {
  const Tensor& t = stack.tensor();
  Tensor s = kernels::pixel_shuffle(t.reshaped({1, 4, t.dim(1), t.dim(2)}), 2);
  return BayerMosaic(s.reshaped({1, s.dim(2), s.dim(3)}));
}

Tensor warm_start(const RggbStack& stack) {
  const std::int64_t H = stack.height(), W = stack.width();
  const std::int64_t plane = H * W;
  Tensor out(Shape{12, H, W});
  const Tensor& s = stack.tensor();
  for (int c = 0; c < 12; ++c)
    std::copy_n(s.ptr() + kWarmStartChannels[c] * plane, plane, out.ptr() + c * plane);
  return out;
}

RgbImage demosaic_nn(const BayerMosaic& bayer) {
  const Tensor ws = warm_start(pack_rggb(bayer));
  Tensor rgb = kernels::pixel_shuffle(ws.reshaped({1, 12, ws.dim(1), ws.dim(2)}), 2);
  return RgbImage(rgb.reshaped({3, rgb.dim(2), rgb.dim(3)}));
}

BayerMosaic add_gaussian_noise(const BayerMosaic& bayer, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) {
    throw ContractError("add_gaussian_noise: sigma must be >= 0, got " +
                        std::to_string(spec.sigma));
  }
  if (spec.sigma == 0.0) return bayer;
  Tensor t = bayer.tensor();
  Rng rng(spec.seed);
  for (double& v : t.data()) v += spec.sigma * rng.normal();
  return BayerMosaic(std::move(t));
}

Tensor attach_noise_map(const RggbStack& stack, double sigma, Task task) {
  if (task != Task::JointDenoise) {
    throw ContractError("attach_noise_map: noise maps are only used in joint denoising mode");
  }
  if (!(sigma >= 0.0)) throw ContractError("attach_noise_map: sigma must be >= 0");
  const std::int64_t H = stack.height(), W = stack.width(), plane = H * W;
  Tensor out(Shape{8, H, W});
  for (int c = 0; c < 4; ++c) {
    std::copy_n(stack.tensor().ptr() + c * plane, plane, out.ptr() + (2 * c) * plane);
    std::fill_n(out.ptr() + (2 * c + 1) * plane, plane, sigma);
  }
  return out;
}

}  // namespace mfdp
