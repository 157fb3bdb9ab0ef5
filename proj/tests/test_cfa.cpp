#include <doctest.h>

#include <cmath>

#include "mfdp/cfa.hpp"
#include "mfdp/kernels.hpp"
#include "mfdp/metrics.hpp"
#include "mfdp/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mfdp;
using namespace mfdp::testing;

namespace {
RgbImage random_rgb(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng r(seed);
  return RgbImage(random_tensor({3, h, w}, r, 0.0, 1.0));
}
BayerMosaic random_mosaic(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng r(seed);
  return BayerMosaic(random_tensor({1, h, w}, r, 0.0, 1.0));
}
}  // namespace

TEST_CASE("mosaic of a constant colour") {
  RgbImage img = RgbImage::zeros(4, 6);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      img.at(0, y, x) = 0.2;
      img.at(1, y, x) = 0.4;
      img.at(2, y, x) = 0.6;
    }
  BayerMosaic m = mosaic(img);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      const double expect = (y % 2 == 0) ? (x % 2 == 0 ? 0.2 : 0.4) : (x % 2 == 0 ? 0.4 : 0.6);
      CHECK(m.at(y, x) == expect);
    }
}

TEST_CASE("pure red lands on red sites only") {
  RgbImage img = RgbImage::zeros(6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) img.at(0, y, x) = 1.0;
  BayerMosaic m = mosaic(img);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) CHECK((m.at(y, x) != 0.0) == (cfa_color(y, x) == CfaColor::Red));
}

TEST_CASE("mosaic keeps captured samples") {
  RgbImage img = random_rgb(8, 10, 3);
  BayerMosaic m = mosaic(img);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) CHECK(m.at(y, x) == img.at(static_cast<int>(cfa_color(y, x)), y, x));
}

TEST_CASE("odd extents are rejected") {
  CHECK_THROWS_AS(RgbImage(Tensor(Shape{3, 5, 4})), ContractError);
  CHECK_THROWS_AS(BayerMosaic(Tensor(Shape{1, 4, 3})), ContractError);
}

TEST_CASE("rggb packing") {
  BayerMosaic m(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
  CHECK(pack_rggb(m).tensor() == Tensor::from({4, 1, 1}, {1, 2, 3, 4}));
  BayerMosaic big = random_mosaic(4, 4, 1);
  RggbStack s = pack_rggb(big);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      CHECK(s.tensor()[static_cast<std::size_t>(i * 2 + j)] == big.at(2 * i, 2 * j));
      CHECK(s.tensor()[static_cast<std::size_t>(12 + i * 2 + j)] == big.at(2 * i + 1, 2 * j + 1));
    }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BayerMosaic x = random_mosaic(6, 10, seed);
    CHECK(unpack_rggb(pack_rggb(x)).tensor() == x.tensor());
  }
}

TEST_CASE("warm start layout") {
  RggbStack s(Tensor::from({4, 1, 1}, {0.1, 0.2, 0.3, 0.4}));
  CHECK(warm_start(s) == Tensor::from({12, 1, 1}, {0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.4, 0.4}));
}

TEST_CASE("nearest-neighbour demosaic matches the direct oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BayerMosaic m = random_mosaic(8, 12, seed);
    RgbImage a = demosaic_nn(m);
    CHECK(a.tensor() == nn_demosaic_oracle(m).tensor());
    const Tensor shuffled = kernels::pixel_shuffle(warm_start(pack_rggb(m)).reshaped({1, 12, 4, 6}), 2);
    CHECK(shuffled.reshaped({3, 8, 12}) == a.tensor());
    CHECK(mosaic(a).tensor() == m.tensor());
  }
  BayerMosaic c(Tensor(Shape{1, 4, 4}, 0.3));
  CHECK(demosaic_nn(c).tensor() == Tensor(Shape{3, 4, 4}, 0.3));
}

TEST_CASE("nearest-neighbour PSNR on a linear ramp") {
  RgbImage img = RgbImage::zeros(64, 64);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) img.at(c, y, x) = (x + 2.0 * y + 10.0 * c) / 230.0;
  const RgbImage nn = demosaic_nn(mosaic(img));
  const double p = psnr(nn, img);
  CHECK(std::isfinite(p));
  CHECK(std::abs(p - psnr_oracle(nn.tensor(), img.tensor())) < 1e-9);
}

TEST_CASE("gaussian noise") {
  BayerMosaic m = random_mosaic(256, 256, 2);
  CHECK(add_gaussian_noise(m, {0.0, 9}).tensor() == m.tensor());
  const double sigma = 10.0 / 255.0;
  BayerMosaic a = add_gaussian_noise(m, {sigma, 42});
  BayerMosaic b = add_gaussian_noise(m, {sigma, 42});
  CHECK(a.tensor() == b.tensor());
  double mean = 0, sq = 0;
  const double n = static_cast<double>(m.tensor().size());
  for (std::size_t i = 0; i < m.tensor().size(); ++i) mean += a.tensor()[i] - m.tensor()[i];
  mean /= n;
  for (std::size_t i = 0; i < m.tensor().size(); ++i) {
    const double d = a.tensor()[i] - m.tensor()[i] - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / (n - 1));
  CHECK(std::abs(mean) < 4 * sigma / 256);
  CHECK(std::abs(sd - sigma) < 0.05 * sigma);
  CHECK(add_gaussian_noise(m, {sigma, 43}).tensor() != a.tensor());
}

TEST_CASE("noise map interleaving") {
  RggbStack s = pack_rggb(random_mosaic(4, 6, 5));
  Tensor z = attach_noise_map(s, 0.0, Task::JointDenoise);
  CHECK(z.shape() == Shape{8, 2, 3});
  Tensor n = attach_noise_map(s, 0.02, Task::JointDenoise);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 6; ++i) {
      CHECK(z[static_cast<std::size_t>((2 * c + 1) * 6 + i)] == 0.0);
      CHECK(n[static_cast<std::size_t>((2 * c + 1) * 6 + i)] == 0.02);
      CHECK(n[static_cast<std::size_t>(2 * c * 6 + i)] == s.tensor()[static_cast<std::size_t>(c * 6 + i)]);
    }
  CHECK_THROWS_AS(attach_noise_map(s, 0.0, Task::Demosaic), ContractError);
}
