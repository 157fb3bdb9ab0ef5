#include "mfdp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mfdp {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (patch_size < 2 || patch_size % 2) fail("patch_size must be positive and even");
  if (!(lr.base >= 0.0)) fail("lr must be >= 0");
  if (!(lr.period_epochs > 0.0)) fail("lr_period_epochs must be positive");
  if (lr.steps_per_epoch < 1) fail("steps_per_epoch must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(noise_max255 >= 0.0)) fail("noise_max255 must be >= 0");
  if (val_every < 0 || checkpoint_every < 0) fail("intervals must be >= 0");
  if (val_patches < 0) fail("val_patches must be >= 0");
}

RgbImage augment(const RgbImage& img, int variant) {
  Tensor cur = img.tensor();
  for (int r = 0; r < variant % 4; ++r) {
    const std::int64_t h = cur.dim(1), w = cur.dim(2);
    Tensor out(Shape{3, w, h});
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < w; ++y)
        for (std::int64_t x = 0; x < h; ++x)
          out[static_cast<std::size_t>((c * w + y) * h + x)] =
              cur[static_cast<std::size_t>((c * h + x) * w + (w - 1 - y))];
    cur = std::move(out);
  }
  if (variant >= 4) {
    const std::int64_t h = cur.dim(1), w = cur.dim(2);
    Tensor out(cur.shape());
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          out[static_cast<std::size_t>((c * h + y) * w + x)] =
              cur[static_cast<std::size_t>((c * h + y) * w + (w - 1 - x))];
    cur = std::move(out);
  }
  return RgbImage(std::move(cur));
}

Batch sample_batch(const std::vector<RgbImage>& dataset, int count, int patch, bool aug,
                   bool denoise, double noise_max255, Rng& rng) {
  if (dataset.empty()) throw ContractError("sample_batch: empty dataset");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].height() < patch || dataset[i].width() < patch) {
      throw ContractError("sample_batch: image " + std::to_string(i) + " (" +
                          std::to_string(dataset[i].height()) + "x" +
                          std::to_string(dataset[i].width()) + ") is smaller than the " +
                          std::to_string(patch) + "px patch");
    }
  }
  const std::int64_t P = patch, plane = P * P;
  Batch b;
  b.bayer = Tensor(Shape{count, 1, P, P});
  b.target = Tensor(Shape{count, 3, P, P});
  for (int n = 0; n < count; ++n) {
    const std::size_t src = rng.below(dataset.size());
    const RgbImage& img = dataset[src];
    const auto oy = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(img.height() - P) / 2 + 1)) * 2;
    const auto ox = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(img.width() - P) / 2 + 1)) * 2;
    const int variant = aug ? static_cast<int>(rng.below(8)) : 0;
    RgbImage crop = RgbImage::zeros(P, P);
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < P; ++y)
        for (std::int64_t x = 0; x < P; ++x) crop.at(c, y, x) = img.at(c, oy + y, ox + x);
    if (variant) crop = augment(crop, variant);
    BayerMosaic m = mosaic(crop);
    if (denoise) {
      const double sigma = rng.uniform(0.0, noise_max255) / 255.0;
      m = add_gaussian_noise(m, NoiseSpec{sigma, rng.next()});
      b.sigmas.push_back(sigma);
    }
    std::copy(crop.tensor().ptr(), crop.tensor().ptr() + 3 * plane, b.target.ptr() + n * 3 * plane);
    std::copy(m.tensor().ptr(), m.tensor().ptr() + plane, b.bayer.ptr() + n * plane);
    b.variants.push_back(variant);
    b.sources.push_back(src);
  }
  return b;
}

Batch sample_batch(const std::vector<RgbImage>& dataset, const TrainConfig& cfg, bool denoise,
                   Rng& rng) {
  return sample_batch(dataset, cfg.batch_size, cfg.patch_size, cfg.augment, denoise,
                      cfg.noise_max255, rng);
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "step,lr,loss,val_psnr\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr << ',' << r.loss << ',';
    if (!std::isnan(r.val_psnr)) os << r.val_psnr;
    os << '\n';
  }
  return os.str();
}

namespace {

std::string first_non_finite(const MfdpModel& model) {
  for (const ParamLeaf* p : model.parameters()) {
    if (!p->value.all_finite()) return p->name;
  }
  for (const ParamLeaf* p : model.parameters()) {
    if (!p->grad.all_finite()) return p->name + " (gradient)";
  }
  return "";
}

}  // namespace

double train_step(MfdpModel& model, const Batch& batch, const LossConfig& loss, double lr,
                  const AdamWConfig& adam, AdamWState& state) {
  model.zero_grad();
  double value = 0.0;
  try {
    Tape t;
    const Var pred = model.forward(t, batch.bayer, batch.sigmas);
    const Var l = mixed_loss(pred, t.constant(batch.target), loss);
    value = l.value()[0];
    t.backward(l);
  } catch (const NumericError& e) {
    const std::string where = first_non_finite(model);
    throw TrainingDiverged(std::string("non-finite value during step ") +
                               std::to_string(state.step + 1) + ": " + e.what() +
                               (where.empty() ? "" : "; first bad parameter: " + where),
                           where);
  }
  const auto params = model.parameters();
  adamw_step(params, state, lr, adam);
  const std::string bad = first_non_finite(model);
  if (!bad.empty()) {
    throw TrainingDiverged("parameter became non-finite at step " + std::to_string(state.step) +
                               ": " + bad,
                           bad);
  }
  return value;
}

double evaluate_psnr(MfdpModel& model, const Batch& batch) {
  Tape t;
  t.set_grad_enabled(false);
  const Var pred = model.forward(t, batch.bayer, batch.sigmas);
  const std::int64_t N = batch.bayer.dim(0), H = batch.bayer.dim(2), W = batch.bayer.dim(3);
  const std::int64_t n3 = 3 * H * W;
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    Tensor a(Shape{3, H, W}), b(Shape{3, H, W});
    for (std::int64_t i = 0; i < n3; ++i) {
      a[static_cast<std::size_t>(i)] =
          std::clamp(pred.value()[static_cast<std::size_t>(n * n3 + i)], 0.0, 1.0);
      b[static_cast<std::size_t>(i)] = batch.target[static_cast<std::size_t>(n * n3 + i)];
    }
    total += psnr(a, b);
  }
  return total / static_cast<double>(N);
}

TrainResult train(MfdpModel& model, const std::vector<RgbImage>& train_set,
                  const std::vector<RgbImage>& val_set, const TrainConfig& cfg,
                  const LossConfig& loss, AdamWState optimizer, const TrainHooks& hooks,
                  std::int64_t stop_after) {
  cfg.validate();
  loss.validate();
  const bool denoise = model.config().denoise;
  const std::int64_t multiple = model.config().bayer_multiple();
  if (cfg.patch_size % multiple != 0) {
    throw ContractError("train config: patch_size " + std::to_string(cfg.patch_size) +
                        " must be a multiple of " + std::to_string(multiple));
  }
  PrecisionGuard guard(cfg.standard_precision ? Precision::Standard : Precision::High);

  Batch val;
  const bool validate = cfg.val_every > 0 && cfg.val_patches > 0;
  if (validate) {
    Rng vr = Rng::stream(cfg.seed, std::numeric_limits<std::uint64_t>::max());
    val = sample_batch(val_set.empty() ? train_set : val_set, cfg.val_patches, cfg.patch_size,
                       false, denoise, cfg.noise_max255, vr);
  }

  TrainResult result;
  std::int64_t end = cfg.total_steps();
  if (stop_after > 0) end = std::min(end, optimizer.step + stop_after);
  while (optimizer.step < end) {
    const std::int64_t step = optimizer.step;
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(step));
    const Batch batch = sample_batch(train_set, cfg, denoise, rng);
    const double lr = lr_at_step(step, cfg.lr);
    HistoryRow row;
    row.lr = lr;
    row.loss = train_step(model, batch, loss, lr, cfg.adam, optimizer);
    row.step = optimizer.step;
    row.val_psnr = std::numeric_limits<double>::quiet_NaN();
    if (validate && (row.step % cfg.val_every == 0 || row.step == end)) {
      row.val_psnr = evaluate_psnr(model, val);
    }
    result.history.push_back(row);
    if (hooks.progress) hooks.progress(row);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0 &&
        row.step != end) {
      hooks.checkpoint(row.step, model, optimizer);
    }
  }
  if (hooks.checkpoint) hooks.checkpoint(optimizer.step, model, optimizer);
  result.optimizer = std::move(optimizer);
  return result;
}

}  // namespace mfdp
