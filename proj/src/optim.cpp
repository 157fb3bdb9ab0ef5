#include "mfdp/optim.hpp"

#include <cmath>

namespace mfdp {

void adamw_step(const std::vector<ParamLeaf*>& params, AdamWState& state, double lr,
                const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (const ParamLeaf* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adamw: optimizer state has " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(params.size()) + " parameters");
  }
  const std::int64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamLeaf& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (m.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ContractError("adamw: shape mismatch for " + p.name);
    }
    double* w = p.value.ptr();
    const double* g = p.grad.ptr();
    double* mp = m.ptr();
    double* vp = v.ptr();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      mp[k] = cfg.beta1 * mp[k] + (1.0 - cfg.beta1) * g[k];
      vp[k] = cfg.beta2 * vp[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = mp[k] / bc1;
      const double vhat = vp[k] / bc2;
      w[k] = w[k] * decay - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double lr_at_epoch(double epoch, const LrSchedule& s) {
  return s.base * std::pow(2.0, -std::floor(epoch / s.period_epochs));
}

double lr_at_step(std::int64_t step, const LrSchedule& s) {
  return lr_at_epoch(static_cast<double>(step / s.steps_per_epoch), s);
}

}  // namespace mfdp
