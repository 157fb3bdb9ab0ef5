#pragma once

// AdamW with decoupled weight decay and the step-halving learning-rate
// schedule.

#include <cstdint>
#include <vector>

#include "mfdp/autodiff.hpp"

namespace mfdp {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  bool operator==(const AdamWConfig&) const = default;
};

struct AdamWState {
  std::int64_t step = 0;  // completed updates
  std::vector<Tensor> m, v;
  bool operator==(const AdamWState&) const = default;
};

/// One update of every leaf from its accumulated grad:
///   theta <- theta - lr * wd * theta, then the bias-corrected Adam step.
/// The state is lazily sized on first use.
void adamw_step(const std::vector<ParamLeaf*>& params, AdamWState& state, double lr,
                const AdamWConfig& cfg);

struct LrSchedule {
  double base = 2e-4;
  double period_epochs = 800;  // halve every this many epochs
  std::int64_t steps_per_epoch = 1;
  bool operator==(const LrSchedule&) const = default;
};

/// base * 2^-floor(epoch / period)
double lr_at_epoch(double epoch, const LrSchedule& s);
double lr_at_step(std::int64_t step, const LrSchedule& s);

}  // namespace mfdp
