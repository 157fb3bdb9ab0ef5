#pragma once

// Patch sampling with augment-then-mosaic, and the AdamW training loop with
// periodic validation, checkpoints and bit-exact resume.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfdp/metrics.hpp"
#include "mfdp/model.hpp"
#include "mfdp/optim.hpp"

namespace mfdp {

struct TrainConfig {
  int batch_size = 4;
  int patch_size = 64;  // Bayer pixels
  LrSchedule lr{2e-4, 1000, 1};
  AdamWConfig adam;
  std::int64_t epochs = 1000;  // total steps = epochs * lr.steps_per_epoch
  std::uint64_t seed = 0;
  bool augment = true;
  double noise_max255 = 15.0;  // denoise training: sigma ~ U[0, max] / 255
  std::int64_t val_every = 100;
  int val_patches = 8;
  std::int64_t checkpoint_every = 0;  // 0 = only at the end
  bool standard_precision = true;     // float32-rounded ops while training

  bool operator==(const TrainConfig&) const = default;
  std::int64_t total_steps() const { return epochs * lr.steps_per_epoch; }
  void validate() const;
};

/// Rotation by 90 * (v % 4) degrees counter-clockwise, then a horizontal
/// flip when v >= 4.
RgbImage augment(const RgbImage& img, int variant);

struct Batch {
  Tensor bayer;   // N x 1 x P x P
  Tensor target;  // N x 3 x P x P
  std::vector<double> sigmas;  // per sample, empty unless denoising
  std::vector<int> variants;
  std::vector<std::size_t> sources;
};

/// Crops, augments and mosaics `count` patches. Reproducible from `rng`.
Batch sample_batch(const std::vector<RgbImage>& dataset, int count, int patch, bool augment,
                   bool denoise, double noise_max255, Rng& rng);
Batch sample_batch(const std::vector<RgbImage>& dataset, const TrainConfig& cfg, bool denoise,
                   Rng& rng);

struct HistoryRow {
  std::int64_t step = 0;  // 1-based count of completed updates
  double lr = 0.0;
  double loss = 0.0;
  double val_psnr = 0.0;  // NaN when not evaluated at this step
};

std::string history_csv(const std::vector<HistoryRow>& rows);

/// Thrown when the loss or a parameter stops being finite.
struct TrainingDiverged : NumericError {
  TrainingDiverged(const std::string& what, std::string param)
      : NumericError(what), parameter(std::move(param)) {}
  std::string parameter;
};

struct TrainHooks {
  /// Called with (step, model, optimizer) at checkpoint steps and at the end.
  std::function<void(std::int64_t, const MfdpModel&, const AdamWState&)> checkpoint;
  std::function<void(const HistoryRow&)> progress;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  AdamWState optimizer;
};

/// Runs from optimizer.step up to cfg.total_steps() (or `stop_after` steps
/// when positive). Batches depend only on (seed, step), so resuming from a
/// saved state continues the exact trajectory.
TrainResult train(MfdpModel& model, const std::vector<RgbImage>& train_set,
                  const std::vector<RgbImage>& val_set, const TrainConfig& cfg,
                  const LossConfig& loss, AdamWState optimizer = {}, const TrainHooks& hooks = {},
                  std::int64_t stop_after = 0);

/// One optimization step on a batch; returns the loss. Exposed for tests.
double train_step(MfdpModel& model, const Batch& batch, const LossConfig& loss, double lr,
                  const AdamWConfig& adam, AdamWState& state);

/// Mean PSNR of the model on a batch.
double evaluate_psnr(MfdpModel& model, const Batch& batch);

}  // namespace mfdp
