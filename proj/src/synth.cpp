#include "mfdp/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "mfdp/rng.hpp"

namespace mfdp {

namespace {

using Rgb = std::array<double, 3>;

Rgb random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

double smoothstep_edge(double signed_dist) {
  // ~1px anti-aliased coverage
  return std::clamp(0.5 - signed_dist, 0.0, 1.0);
}

}  // namespace

RgbImage synth_texture(std::int64_t H, std::int64_t W, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img = RgbImage::zeros(H, W);
  const double pi = std::numbers::pi;

  // colour ramp
  const Rgb c0 = random_color(rng), c1 = random_color(rng);
  const double ra = rng.uniform(0.0, 2.0 * pi);
  const double span = std::abs(std::cos(ra)) * W + std::abs(std::sin(ra)) * H;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double t = std::clamp(0.5 + (std::cos(ra) * (x - W / 2.0) + std::sin(ra) * (y - H / 2.0)) / span, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] + t * (c1[c] - c0[c]);
    }

  // shapes: disks, rectangles and half-planes
  const int shapes = 4 + static_cast<int>(rng.below(5));
  for (int s = 0; s < shapes; ++s) {
    const Rgb col = random_color(rng);
    const int kind = static_cast<int>(rng.below(3));
    const double cy = rng.uniform(0.0, static_cast<double>(H));
    const double cx = rng.uniform(0.0, static_cast<double>(W));
    const double r = rng.uniform(0.08, 0.35) * static_cast<double>(std::min(H, W));
    const double hh = rng.uniform(0.05, 0.3) * static_cast<double>(H);
    const double a = rng.uniform(0.0, 2.0 * pi);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        double d;
        if (kind == 0) {
          d = std::hypot(dy, dx) - r;
        } else if (kind == 1) {
          const double u = std::cos(a) * dx + std::sin(a) * dy;
          const double v = -std::sin(a) * dx + std::cos(a) * dy;
          d = std::max(std::abs(u) - r, std::abs(v) - hh);
        } else {
          d = std::cos(a) * dx + std::sin(a) * dy;
        }
        const double cover = smoothstep_edge(d);
        if (cover <= 0.0) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += cover * (col[c] - img.at(c, y, x));
      }
  }

  // luminance gratings (shared across channels, so chroma stays smooth)
  const int gratings = 1 + static_cast<int>(rng.below(3));
  for (int g = 0; g < gratings; ++g) {
    const double f = rng.uniform(0.04, 0.3);  // cycles per pixel
    const double a = rng.uniform(0.0, pi);
    const double amp = rng.uniform(0.05, 0.2);
    const double phase = rng.uniform(0.0, 2.0 * pi);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double m = amp * std::sin(2.0 * pi * f * (std::cos(a) * x + std::sin(a) * y) + phase);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += m;
      }
  }

  for (double& v : img.tensor().data()) v = std::floor(255.0 * std::clamp(v, 0.0, 1.0) + 0.5) / 255.0;
  return img;
}

std::vector<RgbImage> synth_dataset(int count, std::int64_t height, std::int64_t width,
                                    std::uint64_t seed) {
  std::vector<RgbImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(synth_texture(height, width, Rng::stream(seed, static_cast<std::uint64_t>(i)).next()));
  }
  return out;
}

}  // namespace mfdp
