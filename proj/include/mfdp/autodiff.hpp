#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Tape owns every value produced while evaluating a graph. Ops append a node
// holding the forward value and a backward rule; Tape::backward replays the
// rules in reverse recording order. Parameters live outside the tape as
// ParamLeaf values and receive accumulated (+=) gradients.

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfdp/kernels.hpp"
#include "mfdp/tensor.hpp"

namespace mfdp {

struct ParamLeaf {
  std::string name;  // hierarchical path, e.g. "enc1.scem3.dw.weight"
  Tensor value;
  Tensor grad;

  ParamLeaf() = default;
  ParamLeaf(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Passed to backward rules: read the saved values, accumulate input grads.
class BackwardContext {
 public:
  const Tensor& input(std::size_t i) const;
  const Tensor& output() const;
  bool needs_grad(std::size_t i) const;
  /// Lazily zero-initialised gradient buffer of input `i`.
  Tensor& grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& t, int node) : tape_(t), node_(node) {}
  Tape& tape_;
  int node_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, BackwardContext& ctx)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Free input whose gradient can be read back with grad().
  Var variable(Tensor value);
  /// Parameter leaf; backward() adds into leaf.grad.
  Var param(ParamLeaf& leaf);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

  /// Reverse sweep from a one-element output recorded on this tape.
  void backward(const Var& loss);

  const Tensor& value(const Var& v) const;
  /// Gradient of the last backward() w.r.t. v; all zeros when v was unreached.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }
  /// When false, ops record values only (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  friend class BackwardContext;
  struct Node {
    Tensor value;
    Tensor grad;  // empty until reached during backward
    std::vector<int> inputs;
    BackwardFn backward;
    ParamLeaf* leaf = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };
  const Node& node(const Var& v) const;
  Tensor& grad_buffer(int id);

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

using kernels::Conv2dOptions;

// ---- convolution family -------------------------------------------------
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Conv2dOptions& o = {});
/// `w` is Cin x Cout x kh x kw.
Var conv_transpose2d(const Var& x, const Var& w, const std::optional<Var>& bias,
                     const Conv2dOptions& o = {});

/// Samples x (N x C x H x W) at fractional (y, x) coords (N x P x 2) -> N x C x P.
/// Coordinates are clamped to [0, H-1] x [0, W-1]; no gradient flows through
/// a clamped coordinate.
Var bilinear_sample(const Var& x, const Var& coords);

// ---- normalisation / activations ---------------------------------------
/// Normalises over axis 1 (channels) independently for every other index.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);  // exact erf form
Var sigmoid(const Var& x);
Var softmax(const Var& x, int axis = -1);
Var abs(const Var& x);
/// max(x, floor) with zero gradient where clamped.
Var clamp_min(const Var& x, double floor);
Var pow_scalar(const Var& x, double exponent);  // x > 0 expected

// ---- elementwise --------------------------------------------------------
// Binary ops accept same-rank operands where every extent of b equals a's
// extent or 1 (b broadcasts into a).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

// ---- reductions ---------------------------------------------------------
Var sum(const Var& x);
Var mean(const Var& x);
/// Mean over axes 2.. of N x C x ... -> N x C x 1 x 1 (same rank).
Var global_avg_pool(const Var& x);
/// Mean over all axes except 0 and 1: N x C x ... -> N x C.
Var spatial_mean(const Var& x);

// ---- shape --------------------------------------------------------------
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, std::vector<int> axes);
Var concat(const std::vector<Var>& xs, int axis);
/// Contiguous sub-range [start, start+length) along `axis`.
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length);
std::vector<Var> split(const Var& x, int axis, const std::vector<std::int64_t>& sizes);
/// out.flat[i] = x.flat[indices[i]]; backward scatter-adds.
Var take(const Var& x, std::vector<std::int64_t> indices, Shape out_shape);
Var pixel_shuffle(const Var& x, int r);
Var pixel_unshuffle(const Var& x, int r);
/// Zero padding of the two trailing axes.
Var pad2d(const Var& x, int top, int bottom, int left, int right);
/// Reflect padding (no edge repeat) of the two trailing axes.
Var reflect_pad2d(const Var& x, int top, int bottom, int left, int right);

Var bmm(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

}  // namespace mfdp
