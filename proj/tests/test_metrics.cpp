#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mfdp/metrics.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mfdp;
using namespace mfdp::testing;

namespace {

/// Zero-padded "same" 2-D Gaussian filtering, weights evaluated directly.
std::vector<double> blur_oracle(const std::vector<double>& a, int h, int w, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0;
  for (int i = -r; i <= r; ++i) norm += std::exp(-i * i / (2 * sigma * sigma));
  std::vector<double> out(a.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const int yy = y + i, xx = x + j;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          acc += std::exp(-(i * i + j * j) / (2 * sigma * sigma)) / (norm * norm) * a[yy * w + xx];
        }
      out[y * w + x] = acc;
    }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

double loss_oracle(const Tensor& p, const Tensor& t, const LossConfig& cfg) {
  const int N = p.dim(0), C = p.dim(1), H = p.dim(2), W = p.dim(3);
  const double c1 = 1e-4, c2 = 9e-4;
  double l1 = 0, ms = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = static_cast<std::size_t>((n * C + c) * H * W);
      std::vector<double> a(p.ptr() + off, p.ptr() + off + H * W), b(t.ptr() + off, t.ptr() + off + H * W);
      std::vector<double> d(a.size()), aa(a.size()), bb(a.size()), ab(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        d[i] = std::abs(a[i] - b[i]);
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
      l1 += mean_of(blur_oracle(d, H, W, cfg.sigmas.back()));
      double prod = 1;
      for (std::size_t j = 0; j < cfg.sigmas.size(); ++j) {
        const double s = cfg.sigmas[j];
        const auto ma = blur_oracle(a, H, W, s), mb = blur_oracle(b, H, W, s);
        const auto saa = blur_oracle(aa, H, W, s), sbb = blur_oracle(bb, H, W, s),
                   sab = blur_oracle(ab, H, W, s);
        std::vector<double> cs(a.size()), l(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i];
          const double cov = sab[i] - ma[i] * mb[i];
          cs[i] = (2 * cov + c2) / (va + vb + c2);
          l[i] = (2 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
        }
        double term = std::pow(mean_of(cs), cfg.scale_weights[j]);
        if (j + 1 == cfg.sigmas.size()) term *= std::pow(mean_of(l), cfg.scale_weights[j]);
        prod *= term;
      }
      ms += prod;
    }
  l1 /= N * C;
  ms /= N * C;
  return cfg.alpha * l1 + (1 - cfg.alpha) * (1 - ms);
}

double loss_value(const Tensor& p, const Tensor& t, const LossConfig& cfg = {}) {
  Tape tape;
  return mixed_loss(tape.constant(p), tape.constant(t), cfg).value()[0];
}

}  // namespace

TEST_CASE("gaussian taps") {
  for (double s : {0.5, 1.0, 1.5, 8.0}) {
    const auto g = gaussian_taps(s);
    CHECK(g.size() == 2 * static_cast<std::size_t>(std::ceil(3 * s)) + 1);
    double total = 0;
    for (double v : g) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == g[g.size() - 1 - i]);
  }
  // sigma 0.5, radius 2: weights e^{-2i^2}
  const double z = 1 + 2 * std::exp(-2.0) + 2 * std::exp(-8.0);
  CHECK(gaussian_taps(0.5)[2] == doctest::Approx(1 / z).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_taps(0.0), ContractError);
  const Tensor k = gaussian_kernel(1.5, 5);
  CHECK(k.dim(0) == 11);
}

TEST_CASE("psnr") {
  Rng r(1);
  const Tensor a = random_tensor({3, 16, 16}, r, 0.0, 0.8);
  CHECK(psnr(a, a) == kPsnrIdentical);
  Tensor b = a;
  for (double& v : b.data()) v += 0.1;
  CHECK(std::abs(psnr(a, b) - 20.0) <= 1e-9);
  for (std::uint64_t seed = 2; seed < 7; ++seed) {
    Rng q(seed);
    const Tensor x = random_tensor({3, 16, 16}, q, 0.0, 1.0), y = random_tensor({3, 16, 16}, q, 0.0, 1.0);
    CHECK(std::abs(psnr(x, y) - psnr_oracle(x, y)) <= 1e-10);
  }
  CHECK_THROWS_AS(psnr(a, Tensor(Shape{3, 16, 15})), ContractError);
}

TEST_CASE("ssim against the scalar oracle") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    Rng r(seed);
    const Tensor x = random_tensor({3, 16, 16}, r, 0.0, 1.0);
    Tensor y = x;
    for (double& v : y.data()) v = std::clamp(v + r.uniform(-0.2, 0.2), 0.0, 1.0);
    CHECK(std::abs(ssim(x, y) - ssim_oracle(x, y)) <= 1e-10);
    CHECK(std::abs(ms_ssim(x, y) - ms_ssim_oracle(x, y, 1)) <= 1e-10);  // one scale at 16x16
    const Tensor z = random_tensor({3, 16, 16}, r, 0.0, 1.0);  // unrelated: SSIM near or below 0
    CHECK(std::abs(ms_ssim(x, z) - ms_ssim_oracle(x, z, 1)) <= 1e-10);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-14));
  }
}

TEST_CASE("ms-ssim against the scalar oracle") {
  Rng r(20);
  const Tensor x = random_tensor({2, 48, 52}, r, 0.0, 1.0);
  Tensor y = x;
  for (double& v : y.data()) v = std::clamp(v + r.uniform(-0.3, 0.3), 0.0, 1.0);
  CHECK(ms_ssim_levels(48) == 3);
  CHECK(std::abs(ms_ssim(x, y) - ms_ssim_oracle(x, y, 3)) <= 1e-10);
  CHECK(ms_ssim_levels(176) == 5);
  CHECK(ms_ssim_levels(175) == 4);
  CHECK(ms_ssim_levels(10) == 0);
  std::ostringstream warn;
  ms_ssim(x, y, {}, &warn);
  CHECK(warn.str().find("3 of 5") != std::string::npos);
  CHECK_THROWS_AS(ms_ssim(Tensor(Shape{1, 8, 8}), Tensor(Shape{1, 8, 8})), ContractError);
}

TEST_CASE("self-similarity and constants") {
  Rng r(30);
  const Tensor x = random_tensor({3, 180, 180}, r, 0.0, 1.0);
  CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
  CHECK(std::abs(ms_ssim(x, x) - 1.0) <= 1e-9);
  // two constant images: SSIM reduces to the luminance term
  const Tensor a(Shape{1, 16, 16}, 0.2), b(Shape{1, 16, 16}, 0.6);
  const double c1 = 1e-4;
  CHECK(ssim(a, b) == doctest::Approx((2 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1)).epsilon(1e-12));
}

TEST_CASE("mixed loss against the scalar oracle") {
  Rng r(40);
  const Tensor p = random_tensor({2, 2, 12, 12}, r, 0.0, 1.0), t = random_tensor({2, 2, 12, 12}, r, 0.0, 1.0);
  PrecisionGuard high(Precision::High);
  LossConfig cfg;
  cfg.sigmas = {0.5, 1.0, 2.0};
  cfg.scale_weights = {0.2, 0.3, 0.5};
  CHECK(std::abs(loss_value(p, t, cfg) - loss_oracle(p, t, cfg)) <= 1e-10);
  CHECK(std::abs(loss_value(p, t) - loss_oracle(p, t, LossConfig{})) <= 1e-10);
  CHECK(std::abs(loss_value(p, p)) <= 1e-12);
  LossConfig l1_only;
  l1_only.alpha = 1.0;
  Tape tape;
  const double l1 = gaussian_l1(tape.constant(p), tape.constant(t), l1_only).value()[0];
  CHECK(loss_value(p, t, l1_only) == doctest::Approx(l1).epsilon(1e-14));
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.scale_weights.pop_back();
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = LossConfig{};
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("loss gradients") {
  Rng r(50);
  const Tensor p = random_tensor({1, 2, 8, 8}, r, 0.2, 0.8), t = random_tensor({1, 2, 8, 8}, r, 0.2, 0.8);
  LossConfig cfg;
  cfg.sigmas = {0.5, 1.0};
  cfg.scale_weights = {0.4, 0.6};
  const auto blur = check_input_grads(
      [](Tape&, const std::vector<Var>& in) { return gaussian_blur(in[0], 1.0); }, {p}, 1);
  CHECK_MESSAGE(blur.ok, blur.worst);
  const auto ms = check_input_grads(
      [&](Tape&, const std::vector<Var>& in) { return ms_ssim_index(in[0], in[1], cfg); }, {p, t}, 2);
  CHECK_MESSAGE(ms.ok, ms.worst);
  const auto l1 = check_input_grads(
      [&](Tape&, const std::vector<Var>& in) { return gaussian_l1(in[0], in[1], cfg); }, {p, t}, 3);
  CHECK_MESSAGE(l1.ok, l1.worst);
  const auto mixed = check_input_grads(
      [](Tape&, const std::vector<Var>& in) { return mixed_loss(in[0], in[1]); }, {p, t}, 4);
  CHECK_MESSAGE(mixed.ok, mixed.worst);
}

TEST_CASE("metric report") {
  MetricReport rep{"kodak", "nn", {}};
  rep.rows.push_back({"a", 0, 30, 0.9, 0.95});
  rep.rows.push_back({"b", 0, 32, 0.8, 0.85});
  rep.rows.push_back({"a", 5, kPsnrIdentical, 1.0, 1.0});
  const MetricRow m = rep.mean(0);
  CHECK(m.psnr_db == 31);
  CHECK(m.ssim == doctest::Approx(0.85));
  CHECK(rep.mean(5).psnr_db == kPsnrIdentical);
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("image,sigma255,psnr_db,ssim,ms_ssim\n", 0) == 0);
  CHECK(csv.find("inf") != std::string::npos);
  CHECK(rep.to_markdown().find("| a |") != std::string::npos);
}
