#include "mfdp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mfdp {

std::vector<double> gaussian_taps(double sigma, int radius) {
  if (!(sigma > 0.0)) throw ContractError("gaussian kernel: sigma must be positive");
  if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> g(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    g[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : g) v /= total;
  return g;
}

Tensor gaussian_kernel(double sigma, int radius) {
  const auto g = gaussian_taps(sigma, radius);
  const auto k = static_cast<std::int64_t>(g.size());
  Tensor out(Shape{k, k});
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) out[i * g.size() + j] = g[i] * g[j];
  return out;
}

namespace {

struct Planes {
  std::int64_t count, h, w;
};

Planes planes_of(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                        to_string(b.shape()));
  }
  if (a.rank() < 2) throw ContractError(std::string(what) + ": need at least H x W");
  const std::int64_t h = a.dim(-2), w = a.dim(-1);
  return {static_cast<std::int64_t>(a.size()) / (h * w), h, w};
}

struct SsimStats {
  double ssim;  // mean of l * cs
  double cs;    // mean of cs
};

// Valid-mode Gaussian-window statistics of one plane pair.
SsimStats plane_ssim(const double* a, const double* b, std::int64_t h, std::int64_t w,
                     const Tensor& win, const SsimOptions& o) {
  const std::int64_t k = win.dim(0);
  const double c1 = (o.k1 * o.range) * (o.k1 * o.range);
  const double c2 = (o.k2 * o.range) * (o.k2 * o.range);
  double sum_ssim = 0.0, sum_cs = 0.0;
  const std::int64_t oh = h - k + 1, ow = w - k + 1;
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j) {
          const double g = win[static_cast<std::size_t>(i * k + j)];
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      saa -= ma * ma;
      sbb -= mb * mb;
      sab -= ma * mb;
      const double cs = (2 * sab + c2) / (saa + sbb + c2);
      const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      sum_ssim += l * cs;
      sum_cs += cs;
    }
  const double n = static_cast<double>(oh * ow);
  return {sum_ssim / n, sum_cs / n};
}

Tensor window_of(const SsimOptions& o) { return gaussian_kernel(o.window_sigma, o.window / 2); }

// 2x2 mean pooling; an odd trailing row/column is dropped.
std::vector<double> pool2(const double* p, std::int64_t h, std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x)
      out[static_cast<std::size_t>(y * ow + x)] =
          0.25 * (p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1] + p[(2 * y + 1) * w + 2 * x] +
                  p[(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double range) {
  planes_of(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrIdentical;
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(range * range / mse);
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o) {
  const Planes p = planes_of(a, b, "ssim");
  if (p.h < o.window || p.w < o.window) {
    throw ContractError("ssim: image " + std::to_string(p.h) + "x" + std::to_string(p.w) +
                        " smaller than the " + std::to_string(o.window) + "px window");
  }
  const Tensor win = window_of(o);
  double total = 0.0;
  for (std::int64_t c = 0; c < p.count; ++c)
    total += plane_ssim(a.ptr() + c * p.h * p.w, b.ptr() + c * p.h * p.w, p.h, p.w, win, o).ssim;
  return total / static_cast<double>(p.count);
}

int ms_ssim_levels(std::int64_t min_side, const SsimOptions& o) {
  int levels = 0;
  const int max_levels = static_cast<int>(o.scale_weights.size());
  while (levels < max_levels && (static_cast<std::int64_t>(o.window) << levels) <= min_side) ++levels;
  return levels;
}

double ms_ssim(const Tensor& a, const Tensor& b, const SsimOptions& o, std::ostream* warn) {
  const Planes p = planes_of(a, b, "ms_ssim");
  const int levels = ms_ssim_levels(std::min(p.h, p.w), o);
  if (levels == 0) {
    throw ContractError("ms_ssim: image " + std::to_string(p.h) + "x" + std::to_string(p.w) +
                        " smaller than the " + std::to_string(o.window) + "px window");
  }
  std::vector<double> weights(o.scale_weights.begin(), o.scale_weights.begin() + levels);
  if (levels < static_cast<int>(o.scale_weights.size())) {
    double s = 0.0;
    for (double w : weights) s += w;
    for (double& w : weights) w /= s;
    if (warn) {
      *warn << "warning: ms_ssim on " << p.h << "x" << p.w << " uses " << levels << " of "
            << o.scale_weights.size() << " scales\n";
    }
  }
  const Tensor win = window_of(o);
  double total = 0.0;
  for (std::int64_t c = 0; c < p.count; ++c) {
    std::vector<double> pa(a.ptr() + c * p.h * p.w, a.ptr() + (c + 1) * p.h * p.w);
    std::vector<double> pb(b.ptr() + c * p.h * p.w, b.ptr() + (c + 1) * p.h * p.w);
    std::int64_t h = p.h, w = p.w;
    double value = 1.0;
    for (int s = 0; s < levels; ++s) {
      const SsimStats st = plane_ssim(pa.data(), pb.data(), h, w, win, o);
      const double term = s + 1 == levels ? st.ssim : st.cs;
      value *= std::pow(std::max(term, 1e-8), weights[static_cast<std::size_t>(s)]);
      if (s + 1 < levels) {
        pa = pool2(pa.data(), h, w);
        pb = pool2(pb.data(), h, w);
        h /= 2;
        w /= 2;
      }
    }
    total += value;
  }
  return total / static_cast<double>(p.count);
}

// ---- loss -------------------------------------------------------------------

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("loss: alpha must be in [0, 1]");
  if (sigmas.empty()) throw ContractError("loss: sigmas must not be empty");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw ContractError("loss: sigmas must be positive");
    if (i && !(sigmas[i] > sigmas[i - 1])) throw ContractError("loss: sigmas must be ascending");
  }
  if (scale_weights.size() != sigmas.size()) {
    throw ContractError("loss: scale_weights and sigmas must have equal length");
  }
}

Var gaussian_blur(const Var& x, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const std::int64_t C = x.dim(1), k = static_cast<std::int64_t>(taps.size());
  const int r = static_cast<int>(k / 2);
  Tensor row(Shape{C, 1, 1, k}), col(Shape{C, 1, k, 1});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < k; ++i) {
      row[static_cast<std::size_t>(c * k + i)] = taps[static_cast<std::size_t>(i)];
      col[static_cast<std::size_t>(c * k + i)] = taps[static_cast<std::size_t>(i)];
    }
  Tape& t = *x.tape();
  Conv2dOptions horiz;
  horiz.pad_w = r;
  horiz.groups = static_cast<int>(C);
  Conv2dOptions vert;
  vert.pad_h = r;
  vert.groups = static_cast<int>(C);
  Var y = conv2d(x, t.constant(std::move(row)), std::nullopt, horiz);
  return conv2d(y, t.constant(std::move(col)), std::nullopt, vert);
}

namespace {
void check_pair(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape() || pred.shape().size() != 4) {
    throw ContractError("loss: expected equal N x C x H x W shapes, got " +
                        to_string(pred.shape()) + " and " + to_string(target.shape()));
  }
}
}  // namespace

Var gaussian_l1(const Var& pred, const Var& target, const LossConfig& cfg) {
  check_pair(pred, target);
  return mean(gaussian_blur(abs(sub(pred, target)), cfg.sigmas.back()));
}

Var ms_ssim_index(const Var& pred, const Var& target, const LossConfig& cfg) {
  check_pair(pred, target);
  cfg.validate();
  const double c1 = (cfg.k1 * cfg.range) * (cfg.k1 * cfg.range);
  const double c2 = (cfg.k2 * cfg.range) * (cfg.k2 * cfg.range);
  const Var aa = mul(pred, pred), bb = mul(target, target), ab = mul(pred, target);
  std::optional<Var> product;
  for (std::size_t j = 0; j < cfg.sigmas.size(); ++j) {
    const double s = cfg.sigmas[j];
    const Var mu_a = gaussian_blur(pred, s), mu_b = gaussian_blur(target, s);
    const Var mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
    const Var var_a = sub(gaussian_blur(aa, s), mu_aa);
    const Var var_b = sub(gaussian_blur(bb, s), mu_bb);
    const Var cov = sub(gaussian_blur(ab, s), mu_ab);
    const Var cs = div(add_scalar(scale(cov, 2.0), c2), add_scalar(add(var_a, var_b), c2));
    Var term = pow_scalar(clamp_min(spatial_mean(cs), 1e-8), cfg.scale_weights[j]);
    if (j + 1 == cfg.sigmas.size()) {
      const Var l = div(add_scalar(scale(mu_ab, 2.0), c1), add_scalar(add(mu_aa, mu_bb), c1));
      term = mul(term, pow_scalar(clamp_min(spatial_mean(l), 1e-8), cfg.scale_weights[j]));
    }
    product = product ? mul(*product, term) : term;
  }
  return mean(*product);
}

Var mixed_loss(const Var& pred, const Var& target, const LossConfig& cfg) {
  const Var l1 = gaussian_l1(pred, target, cfg);
  const Var ms = ms_ssim_index(pred, target, cfg);
  return add(scale(l1, cfg.alpha), scale(add_scalar(scale(ms, -1.0), 1.0), 1.0 - cfg.alpha));
}

// ---- report -----------------------------------------------------------------

MetricRow MetricReport::mean(double sigma255) const {
  MetricRow m;
  m.image = "mean";
  m.sigma255 = sigma255 < 0 ? 0.0 : sigma255;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (sigma255 >= 0 && r.sigma255 != sigma255) continue;
    m.psnr_db += r.psnr_db;
    m.ssim += r.ssim;
    m.ms_ssim += r.ms_ssim;
    ++n;
  }
  if (n) {
    m.psnr_db /= static_cast<double>(n);
    m.ssim /= static_cast<double>(n);
    m.ms_ssim /= static_cast<double>(n);
  }
  return m;
}

namespace {
std::string num(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}
}  // namespace

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "image,sigma255,psnr_db,ssim,ms_ssim\n";
  for (const auto& r : rows) {
    os << r.image << ',' << num(r.sigma255, 1) << ',' << num(r.psnr_db, 6) << ','
       << num(r.ssim, 6) << ',' << num(r.ms_ssim, 6) << '\n';
  }
  return os.str();
}

std::string MetricReport::to_markdown() const {
  std::ostringstream os;
  os << "# " << (dataset.empty() ? "evaluation" : dataset);
  if (!method.empty()) os << " (" << method << ")";
  os << "\n\n| image | sigma (/255) | PSNR (dB) | SSIM | MS-SSIM |\n|---|---|---|---|---|\n";
  std::vector<double> sigmas;
  for (const auto& r : rows) {
    os << "| " << r.image << " | " << num(r.sigma255, 0) << " | " << num(r.psnr_db, 2) << " | "
       << num(r.ssim, 4) << " | " << num(r.ms_ssim, 4) << " |\n";
    if (std::find(sigmas.begin(), sigmas.end(), r.sigma255) == sigmas.end()) sigmas.push_back(r.sigma255);
  }
  for (double s : sigmas) {
    const MetricRow m = mean(s);
    os << "| **mean** | " << num(s, 0) << " | " << num(m.psnr_db, 2) << " | " << num(m.ssim, 4)
       << " | " << num(m.ms_ssim, 4) << " |\n";
  }
  return os.str();
}

}  // namespace mfdp
