#pragma once

// Central-difference gradient checks against the tape.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mfdp/autodiff.hpp"
#include "mfdp/rng.hpp"

namespace mfdp::testing {

struct GradCheckResult {
  bool ok = true;
  int checked = 0;
  double worst_rel = 0.0;
  std::string worst;  // description of the worst entry
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-6;
  int max_entries = 48;  // per tensor; entries are sampled when larger
};

inline bool grad_close(double analytic, double numeric, const GradCheckOptions& o, double* rel) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  *rel = scale > 0 ? diff / scale : 0.0;
  return diff <= o.abs_floor || diff <= o.rel_tol * scale;
}

inline std::vector<std::size_t> pick_entries(std::size_t n, int max_entries, Rng& rng) {
  std::vector<std::size_t> idx;
  if (n <= static_cast<std::size_t>(max_entries)) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (int i = 0; i < max_entries; ++i) idx.push_back(rng.below(n));
  }
  return idx;
}

/// Weights the output with a fixed random tensor so that every output
/// element contributes with a distinct sign and size.
inline Var project(Tape& t, const Var& out, std::uint64_t seed) {
  Rng r(seed);
  Tensor w(out.shape());
  for (double& v : w.data()) v = r.uniform(-1.0, 1.0);
  return sum(mul(out, t.constant(std::move(w))));
}

using InputFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Gradient of sum(R * f(inputs)) w.r.t. every input tensor.
inline GradCheckResult check_input_grads(const InputFn& f, std::vector<Tensor> inputs,
                                         std::uint64_t seed, GradCheckOptions o = {}) {
  PrecisionGuard high(Precision::High);
  auto eval = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(t.variable(x));
    const Var loss = project(t, f(t, vars), seed);
    const double v = loss.value()[0];
    if (grads) {
      t.backward(loss);
      for (const auto& var : vars) grads->push_back(t.grad(var));
    }
    return v;
  };
  std::vector<Tensor> analytic;
  eval(inputs, &analytic);
  GradCheckResult res;
  Rng pick(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : pick_entries(inputs[k].size(), o.max_entries, pick)) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + o.eps;
      const double up = eval(inputs, nullptr);
      inputs[k][i] = x0 - o.eps;
      const double down = eval(inputs, nullptr);
      inputs[k][i] = x0;
      const double numeric = (up - down) / (2 * o.eps);
      double rel = 0.0;
      const bool ok = grad_close(analytic[k][i], numeric, o, &rel);
      ++res.checked;
      if (!ok) res.ok = false;
      if (!ok && rel >= res.worst_rel) {
        res.worst_rel = rel;
        std::ostringstream os;
        os << "input " << k << " entry " << i << ": analytic " << analytic[k][i] << " numeric "
           << numeric;
        res.worst = os.str();
      }
    }
  }
  return res;
}

/// Gradient of sum(R * f()) w.r.t. parameter leaves; `entries` random
/// (leaf, index) pairs when positive, else up to max_entries per leaf.
inline GradCheckResult check_param_grads(const std::function<Var(Tape&)>& f,
                                         const std::vector<ParamLeaf*>& params,
                                         std::uint64_t seed, GradCheckOptions o = {},
                                         int entries = 0) {
  PrecisionGuard high(Precision::High);
  auto eval = [&](bool backward) {
    Tape t;
    const Var loss = project(t, f(t), seed);
    if (backward) t.backward(loss);
    return loss.value()[0];
  };
  for (ParamLeaf* p : params) p->zero_grad();
  eval(true);
  std::vector<std::pair<std::size_t, std::size_t>> todo;
  Rng pick(seed ^ 0x51ed2701ULL);
  if (entries > 0) {
    for (int i = 0; i < entries; ++i) {
      const std::size_t leaf = pick.below(params.size());
      todo.emplace_back(leaf, pick.below(params[leaf]->size()));
    }
  } else {
    for (std::size_t l = 0; l < params.size(); ++l)
      for (std::size_t i : pick_entries(params[l]->size(), o.max_entries, pick)) todo.emplace_back(l, i);
  }
  GradCheckResult res;
  for (const auto& [l, i] : todo) {
    ParamLeaf& p = *params[l];
    const double analytic = p.grad[i];
    const double x0 = p.value[i];
    p.value[i] = x0 + o.eps;
    const double up = eval(false);
    p.value[i] = x0 - o.eps;
    const double down = eval(false);
    p.value[i] = x0;
    const double numeric = (up - down) / (2 * o.eps);
    double rel = 0.0;
    const bool ok = grad_close(analytic, numeric, o, &rel);
    ++res.checked;
    if (!ok) res.ok = false;
    if (!ok && rel >= res.worst_rel) {
      res.worst_rel = rel;
      std::ostringstream os;
      os << p.name << "[" << i << "]: analytic " << analytic << " numeric " << numeric;
      res.worst = os.str();
    }
  }
  return res;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Fills every leaf with small random values (zero-initialized leaves such
/// as offsets and biases included) so checks avoid degenerate points.
inline void jitter(const std::vector<ParamLeaf*>& params, Rng& rng, double amount = 0.1) {
  for (ParamLeaf* p : params)
    for (double& v : p->value.data()) v += rng.uniform(-amount, amount);
}

}  // namespace mfdp::testing
