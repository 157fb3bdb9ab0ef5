#include "mfdp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mfdp {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

Tape& tape_of(const Var& v) {
  require(v.valid(), "operation on an unrecorded (default-constructed) Var");
  return *v.tape();
}

Tape& common_tape(std::initializer_list<const Var*> vs) {
  Tape* t = nullptr;
  for (const Var* v : vs) {
    Tape& tv = tape_of(*v);
    require(t == nullptr || t == &tv, "operands recorded on different tapes");
    t = &tv;
  }
  return *t;
}

void round_to_precision(Tensor& t) {
  if (precision() != Precision::Standard) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

// ---- broadcasting ---------------------------------------------------------

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  bool ok = a.size() == b.size();
  for (std::size_t i = 0; ok && i < a.size(); ++i) ok = b[i] == a[i] || b[i] == 1;
  require(ok, std::string(op) + ": shape " + to_string(b) + " does not broadcast into " +
                  to_string(a));
}

// Offset into b for every flat index of a.
std::vector<std::int64_t> broadcast_index(const Shape& a, const Shape& b) {
  const std::size_t r = a.size();
  std::vector<std::int64_t> bstride(r);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    bstride[i] = b[i] == 1 ? 0 : s;
    s *= b[i];
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(numel(a)));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += bstride[ax];
      if (idx[ax] < a[ax]) break;
      off -= idx[ax] * bstride[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <class F, class GA, class GB>
Var binary(const Var& a, const Var& b, const char* op, F f, GA ga, GB gb) {
  Tape& t = common_tape({&a, &b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_broadcast(av.shape(), bv.shape(), op);
  Tensor out(av.shape());
  const bool same = same_shape(av.shape(), bv.shape());
  std::vector<std::int64_t> bi;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    bi = broadcast_index(av.shape(), bv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = f(av[i], bv[static_cast<std::size_t>(bi[i])]);
  }
  return t.record(
      std::move(out), {a, b},
      [same, bi = std::move(bi), ga, gb](const Tensor& g, BackwardContext& ctx) {
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.input(1);
        auto bidx = [&](std::size_t i) { return same ? i : static_cast<std::size_t>(bi[i]); };
        if (ctx.needs_grad(0)) {
          Tensor& gx = ctx.grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += ga(g[i], x[i], y[bidx(i)]);
        }
        if (ctx.needs_grad(1)) {
          Tensor& gy = ctx.grad(1);
          for (std::size_t i = 0; i < g.size(); ++i) gy[bidx(i)] += gb(g[i], x[i], y[bidx(i)]);
        }
      },
      op);
}

template <class F, class D>
Var unary(const Var& x, const char* op, F f, D d) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return t.record(
      std::move(out), {x},
      [d](const Tensor& g, BackwardContext& ctx) {
        const Tensor& in = ctx.input(0);
        const Tensor& y = ctx.output();
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(in[i], y[i]);
      },
      op);
}

// [outer, axis, inner] decomposition of a shape around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

const Tensor& BackwardContext::input(std::size_t i) const {
  const auto& n = tape_.nodes_[static_cast<std::size_t>(node_)];
  return tape_.nodes_[static_cast<std::size_t>(n.inputs[i])].value;
}

const Tensor& BackwardContext::output() const {
  return tape_.nodes_[static_cast<std::size_t>(node_)].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
  const auto& n = tape_.nodes_[static_cast<std::size_t>(node_)];
  return tape_.nodes_[static_cast<std::size_t>(n.inputs[i])].requires_grad;
}

Tensor& BackwardContext::grad(std::size_t i) {
  const auto& n = tape_.nodes_[static_cast<std::size_t>(node_)];
  return tape_.grad_buffer(n.inputs[i]);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  n.op = "variable";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(ParamLeaf& leaf) {
  Node n;
  n.value = leaf.value;
  n.requires_grad = grad_enabled_;
  n.leaf = &leaf;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
  round_to_precision(value);
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  bool rg = false;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    require(v.tape() == this, std::string(op) + ": input recorded on a different tape");
    n.inputs.push_back(v.id());
    rg = rg || nodes_[static_cast<std::size_t>(v.id())].requires_grad;
  }
  n.requires_grad = rg && grad_enabled_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tape::Node& Tape::node(const Var& v) const {
  require(v.tape() == this && v.id() >= 0 && static_cast<std::size_t>(v.id()) < nodes_.size(),
          "Var is not recorded on this tape");
  return nodes_[static_cast<std::size_t>(v.id())];
}

const Tensor& Tape::value(const Var& v) const { return node(v).value; }

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  const Node& ln = node(loss);
  require(ln.value.size() == 1, "backward: loss must have exactly one element, got shape " +
                                    to_string(ln.value.shape()));
  require(!backward_done_, "backward: tape already consumed by a previous backward()");
  require(ln.requires_grad, "backward: loss does not depend on any parameter or variable");
  backward_done_ = true;
  grad_buffer(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) {
      BackwardContext ctx(*this, id);
      n.backward(n.grad, ctx);
    }
    if (n.leaf) n.leaf->grad += n.grad;
  }
}

// ---- convolution family ---------------------------------------------------

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const Conv2dOptions& o) {
  Tape& t = bias ? common_tape({&x, &w, &*bias}) : common_tape({&x, &w});
  const Tensor* bv = bias ? &bias->value() : nullptr;
  Tensor y = kernels::conv2d(x.value(), w.value(), bv, o);
  std::vector<Var> ins{x, w};
  if (bias) ins.push_back(*bias);
  const bool has_bias = bias.has_value();
  return t.record(
      std::move(y), std::move(ins),
      [o, has_bias](const Tensor& g, BackwardContext& ctx) {
        const Tensor& xv = ctx.input(0);
        const Tensor& wv = ctx.input(1);
        if (ctx.needs_grad(0)) ctx.grad(0) += kernels::conv2d_grad_input(g, wv, xv.shape(), o);
        if (ctx.needs_grad(1)) ctx.grad(1) += kernels::conv2d_grad_weight(g, xv, wv.shape(), o);
        if (has_bias && ctx.needs_grad(2)) ctx.grad(2) += kernels::channel_sum(g);
      },
      "conv2d");
}

Var conv_transpose2d(const Var& x, const Var& w, const std::optional<Var>& bias,
                     const Conv2dOptions& o) {
  Tape& t = bias ? common_tape({&x, &w, &*bias}) : common_tape({&x, &w});
  const Tensor* bv = bias ? &bias->value() : nullptr;
  Tensor y = kernels::conv_transpose2d(x.value(), w.value(), bv, o);
  std::vector<Var> ins{x, w};
  if (bias) ins.push_back(*bias);
  const bool has_bias = bias.has_value();
  return t.record(
      std::move(y), std::move(ins),
      [o, has_bias](const Tensor& g, BackwardContext& ctx) {
        const Tensor& xv = ctx.input(0);
        const Tensor& wv = ctx.input(1);
        // Adjoint of the transposed conv is the forward conv with the same weight.
        if (ctx.needs_grad(0)) ctx.grad(0) += kernels::conv2d(g, wv, nullptr, o);
        if (ctx.needs_grad(1)) ctx.grad(1) += kernels::conv2d_grad_weight(xv, g, wv.shape(), o);
        if (has_bias && ctx.needs_grad(2)) ctx.grad(2) += kernels::channel_sum(g);
      },
      "conv_transpose2d");
}

namespace {

struct BilinearTap {
  std::int64_t y0, y1, x0, x1;
  double wy, wx;
  bool y_free, x_free;  // coordinate strictly inside the clamp range
};

BilinearTap bilinear_tap(double y, double x, std::int64_t H, std::int64_t W) {
  BilinearTap t{};
  const double ymax = static_cast<double>(H - 1), xmax = static_cast<double>(W - 1);
  t.y_free = y >= 0.0 && y <= ymax;
  t.x_free = x >= 0.0 && x <= xmax;
  const double yc = std::clamp(y, 0.0, ymax);
  const double xc = std::clamp(x, 0.0, xmax);
  t.y0 = static_cast<std::int64_t>(std::floor(yc));
  t.x0 = static_cast<std::int64_t>(std::floor(xc));
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.wy = yc - static_cast<double>(t.y0);
  t.wx = xc - static_cast<double>(t.x0);
  return t;
}

}  // namespace

Var bilinear_sample(const Var& x, const Var& coords) {
  Tape& t = common_tape({&x, &coords});
  const Tensor& xv = x.value();
  const Tensor& cv = coords.value();
  require(xv.rank() == 4, "bilinear_sample: input must be N x C x H x W, got " +
                              to_string(xv.shape()));
  require(cv.rank() == 3 && cv.dim(0) == xv.dim(0) && cv.dim(2) == 2,
          "bilinear_sample: coords must be N x P x 2 with N = " + std::to_string(xv.dim(0)) +
              ", got " + to_string(cv.shape()));
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t P = cv.dim(1);
  Tensor out(Shape{N, C, P});
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < P; ++p) {
      const double* c = cv.ptr() + (n * P + p) * 2;
      const BilinearTap tp = bilinear_tap(c[0], c[1], H, W);
      const double w00 = (1 - tp.wy) * (1 - tp.wx), w01 = (1 - tp.wy) * tp.wx;
      const double w10 = tp.wy * (1 - tp.wx), w11 = tp.wy * tp.wx;
      for (std::int64_t ch = 0; ch < C; ++ch) {
        const double* plane = xv.ptr() + (n * C + ch) * H * W;
        out[static_cast<std::size_t>((n * C + ch) * P + p)] =
            w00 * plane[tp.y0 * W + tp.x0] + w01 * plane[tp.y0 * W + tp.x1] +
            w10 * plane[tp.y1 * W + tp.x0] + w11 * plane[tp.y1 * W + tp.x1];
      }
    }
  }
  return t.record(
      std::move(out), {x, coords},
      [](const Tensor& g, BackwardContext& ctx) {
        const Tensor& xv = ctx.input(0);
        const Tensor& cv = ctx.input(1);
        const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::int64_t P = cv.dim(1);
        const bool gx_on = ctx.needs_grad(0), gc_on = ctx.needs_grad(1);
        Tensor* gx = gx_on ? &ctx.grad(0) : nullptr;
        Tensor* gc = gc_on ? &ctx.grad(1) : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t p = 0; p < P; ++p) {
            const double* c = cv.ptr() + (n * P + p) * 2;
            const BilinearTap tp = bilinear_tap(c[0], c[1], H, W);
            const double w00 = (1 - tp.wy) * (1 - tp.wx), w01 = (1 - tp.wy) * tp.wx;
            const double w10 = tp.wy * (1 - tp.wx), w11 = tp.wy * tp.wx;
            double dy = 0.0, dx = 0.0;
            for (std::int64_t ch = 0; ch < C; ++ch) {
              const double go = g[static_cast<std::size_t>((n * C + ch) * P + p)];
              const std::int64_t base = (n * C + ch) * H * W;
              if (gx) {
                double* gp = gx->ptr() + base;
                gp[tp.y0 * W + tp.x0] += w00 * go;
                gp[tp.y0 * W + tp.x1] += w01 * go;
                gp[tp.y1 * W + tp.x0] += w10 * go;
                gp[tp.y1 * W + tp.x1] += w11 * go;
              }
              if (gc) {
                const double* plane = xv.ptr() + base;
                const double v00 = plane[tp.y0 * W + tp.x0], v01 = plane[tp.y0 * W + tp.x1];
                const double v10 = plane[tp.y1 * W + tp.x0], v11 = plane[tp.y1 * W + tp.x1];
                dy += go * ((1 - tp.wx) * (v10 - v00) + tp.wx * (v11 - v01));
                dx += go * ((1 - tp.wy) * (v01 - v00) + tp.wy * (v11 - v10));
              }
            }
            if (gc) {
              double* gp = gc->ptr() + (n * P + p) * 2;
              if (tp.y_free) gp[0] += dy;
              if (tp.x_free) gp[1] += dx;
            }
          }
        }
      },
      "bilinear_sample");
}

// ---- normalisation / activations -----------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = common_tape({&x, &gamma, &beta});
  const Tensor& xv = x.value();
  require(xv.rank() >= 2, "layer_norm: input must have a channel axis");
  const std::int64_t N = xv.dim(0), C = xv.dim(1);
  const std::int64_t S = static_cast<std::int64_t>(xv.size()) / (N * C);
  require(gamma.value().shape() == Shape{C} && beta.value().shape() == Shape{C},
          "layer_norm: gamma/beta must have shape [" + std::to_string(C) + "]");

  // Per-token statistics: mean and reciprocal std, laid out N x S.
  auto stats = [N, C, S, eps](const Tensor& in, std::vector<double>& mu, std::vector<double>& rs) {
    mu.assign(static_cast<std::size_t>(N * S), 0.0);
    rs.assign(static_cast<std::size_t>(N * S), 0.0);
    for (std::int64_t n = 0; n < N; ++n) {
      double* m = mu.data() + n * S;
      double* r = rs.data() + n * S;
      for (std::int64_t c = 0; c < C; ++c) {
        const double* p = in.ptr() + (n * C + c) * S;
        for (std::int64_t s = 0; s < S; ++s) m[s] += p[s];
      }
      for (std::int64_t s = 0; s < S; ++s) m[s] /= static_cast<double>(C);
      for (std::int64_t c = 0; c < C; ++c) {
        const double* p = in.ptr() + (n * C + c) * S;
        for (std::int64_t s = 0; s < S; ++s) {
          const double d = p[s] - m[s];
          r[s] += d * d;
        }
      }
      for (std::int64_t s = 0; s < S; ++s)
        r[s] = 1.0 / std::sqrt(r[s] / static_cast<double>(C) + eps);
    }
  };

  std::vector<double> mu, rs;
  stats(xv, mu, rs);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor y(xv.shape());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* p = xv.ptr() + (n * C + c) * S;
      double* q = y.ptr() + (n * C + c) * S;
      const double* m = mu.data() + n * S;
      const double* r = rs.data() + n * S;
      const double gc = gv[static_cast<std::size_t>(c)], bc = bv[static_cast<std::size_t>(c)];
      for (std::int64_t s = 0; s < S; ++s) q[s] = gc * (p[s] - m[s]) * r[s] + bc;
    }
  return t.record(
      std::move(y), {x, gamma, beta},
      [N, C, S, stats](const Tensor& g, BackwardContext& ctx) {
        const Tensor& xv = ctx.input(0);
        const Tensor& gv = ctx.input(1);
        std::vector<double> mu, rs;
        stats(xv, mu, rs);
        const bool gx_on = ctx.needs_grad(0);
        Tensor* gg = ctx.needs_grad(1) ? &ctx.grad(1) : nullptr;
        Tensor* gb = ctx.needs_grad(2) ? &ctx.grad(2) : nullptr;
        std::vector<double> a(static_cast<std::size_t>(S)), b(static_cast<std::size_t>(S));
        for (std::int64_t n = 0; n < N; ++n) {
          const double* m = mu.data() + n * S;
          const double* r = rs.data() + n * S;
          std::fill(a.begin(), a.end(), 0.0);  // sum_c dxhat
          std::fill(b.begin(), b.end(), 0.0);  // sum_c dxhat * xhat
          for (std::int64_t c = 0; c < C; ++c) {
            const double* p = xv.ptr() + (n * C + c) * S;
            const double* go = g.ptr() + (n * C + c) * S;
            const double gc = gv[static_cast<std::size_t>(c)];
            double sg = 0.0, sb = 0.0;
            for (std::int64_t s = 0; s < S; ++s) {
              const double xh = (p[s] - m[s]) * r[s];
              const double dxh = go[s] * gc;
              a[static_cast<std::size_t>(s)] += dxh;
              b[static_cast<std::size_t>(s)] += dxh * xh;
              sg += go[s] * xh;
              sb += go[s];
            }
            if (gg) (*gg)[static_cast<std::size_t>(c)] += sg;
            if (gb) (*gb)[static_cast<std::size_t>(c)] += sb;
          }
          if (!gx_on) continue;
          Tensor& gx = ctx.grad(0);
          const double invc = 1.0 / static_cast<double>(C);
          for (std::int64_t c = 0; c < C; ++c) {
            const double* p = xv.ptr() + (n * C + c) * S;
            const double* go = g.ptr() + (n * C + c) * S;
            double* q = gx.ptr() + (n * C + c) * S;
            const double gc = gv[static_cast<std::size_t>(c)];
            for (std::int64_t s = 0; s < S; ++s) {
              const double xh = (p[s] - m[s]) * r[s];
              q[s] += r[s] * (go[s] * gc - a[static_cast<std::size_t>(s)] * invc -
                              xh * b[static_cast<std::size_t>(s)] * invc);
            }
          }
        }
      },
      "layer_norm");
}

Var gelu(const Var& x) {
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(const Var& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var clamp_min(const Var& x, double floor) {
  return unary(
      x, "clamp_min", [floor](double v) { return v < floor ? floor : v; },
      [floor](double v, double) { return v < floor ? 0.0 : 1.0; });
}

Var pow_scalar(const Var& x, double e) {
  return unary(
      x, "pow", [e](double v) { return std::pow(v, e); },
      [e](double v, double) { return e * std::pow(v, e - 1.0); });
}

Var softmax(const Var& x, int axis) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  axis = normalize_axis(axis, xv.rank(), "softmax");
  const AxisSplit sp = split_axis(xv.shape(), axis);
  Tensor y(xv.shape());
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const double* p = xv.ptr() + o * sp.len * sp.inner + i;
      double* q = y.ptr() + o * sp.len * sp.inner + i;
      double mx = p[0];
      for (std::int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, p[l * sp.inner]);
      double s = 0.0;
      for (std::int64_t l = 0; l < sp.len; ++l) {
        q[l * sp.inner] = std::exp(p[l * sp.inner] - mx);
        s += q[l * sp.inner];
      }
      for (std::int64_t l = 0; l < sp.len; ++l) q[l * sp.inner] /= s;
    }
  return t.record(
      std::move(y), {x},
      [sp](const Tensor& g, BackwardContext& ctx) {
        const Tensor& y = ctx.output();
        Tensor& gx = ctx.grad(0);
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.len * sp.inner + i;
            double dot = 0.0;
            for (std::int64_t l = 0; l < sp.len; ++l) {
              const auto k = static_cast<std::size_t>(base + l * sp.inner);
              dot += g[k] * y[k];
            }
            for (std::int64_t l = 0; l < sp.len; ++l) {
              const auto k = static_cast<std::size_t>(base + l * sp.inner);
              gx[k] += y[k] * (g[k] - dot);
            }
          }
      },
      "softmax");
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Var scale(const Var& x, double s) {
  return unary(
      x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

// ---- reductions -------------------------------------------------------------

Var sum(const Var& x) {
  Tape& t = tape_of(x);
  return t.record(
      Tensor::scalar(x.value().sum()), {x},
      [](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      },
      "sum");
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  Tape& t = tape_of(x);
  return t.record(
      Tensor::scalar(x.value().sum() / n), {x},
      [n](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] / n;
      },
      "mean");
}

namespace {

Var channel_mean(const Var& x, Shape out_shape, const char* op) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require(xv.rank() >= 3, std::string(op) + ": input must be N x C x spatial...");
  const std::int64_t NC = xv.dim(0) * xv.dim(1);
  const std::int64_t S = static_cast<std::int64_t>(xv.size()) / NC;
  Tensor y(std::move(out_shape));
  for (std::int64_t i = 0; i < NC; ++i) {
    double s = 0.0;
    const double* p = xv.ptr() + i * S;
    for (std::int64_t k = 0; k < S; ++k) s += p[k];
    y[static_cast<std::size_t>(i)] = s / static_cast<double>(S);
  }
  return t.record(
      std::move(y), {x},
      [NC, S](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::int64_t i = 0; i < NC; ++i) {
          const double v = g[static_cast<std::size_t>(i)] / static_cast<double>(S);
          double* p = gx.ptr() + i * S;
          for (std::int64_t k = 0; k < S; ++k) p[k] += v;
        }
      },
      op);
}

}  // namespace

Var global_avg_pool(const Var& x) {
  Shape s = x.shape();
  for (std::size_t i = 2; i < s.size(); ++i) s[i] = 1;
  return channel_mean(x, std::move(s), "global_avg_pool");
}

Var spatial_mean(const Var& x) {
  return channel_mean(x, Shape{x.dim(0), x.dim(1)}, "spatial_mean");
}

// ---- shape ------------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor y = x.value().reshaped(std::move(shape));
  return t.record(
      std::move(y), {x},
      [](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Var permute(const Var& x, std::vector<int> axes) {
  Tape& t = tape_of(x);
  Tensor y = kernels::permute(x.value(), axes);
  return t.record(
      std::move(y), {x},
      [axes = std::move(axes)](const Tensor& g, BackwardContext& ctx) {
        ctx.grad(0) += kernels::permute(g, kernels::inverse_permutation(axes));
      },
      "permute");
}

Var concat(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), "concat: need at least one input");
  Tape& t = tape_of(xs[0]);
  const Shape& s0 = xs[0].shape();
  axis = normalize_axis(axis, static_cast<int>(s0.size()), "concat");
  Shape out_shape = s0;
  std::int64_t total = 0;
  for (const Var& v : xs) {
    require(v.tape() == &t, "concat: inputs recorded on different tapes");
    const Shape& s = v.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = static_cast<int>(i) == axis || s[i] == s0[i];
    require(ok, "concat: shape " + to_string(s) + " incompatible with " + to_string(s0) +
                    " along axis " + std::to_string(axis));
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor y(out_shape);
  std::vector<std::int64_t> lens;
  std::int64_t off = 0;
  for (const Var& v : xs) {
    const std::int64_t len = v.shape()[static_cast<std::size_t>(axis)];
    lens.push_back(len);
    const Tensor& xv = v.value();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(xv.ptr() + o * len * sp.inner, len * sp.inner,
                  y.ptr() + (o * total + off) * sp.inner);
    off += len;
  }
  return t.record(
      std::move(y), xs,
      [sp, lens, total](const Tensor& g, BackwardContext& ctx) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
          const std::int64_t len = lens[k];
          if (ctx.needs_grad(k)) {
            Tensor& gx = ctx.grad(k);
            for (std::int64_t o = 0; o < sp.outer; ++o) {
              const double* src = g.ptr() + (o * total + off) * sp.inner;
              double* dst = gx.ptr() + o * len * sp.inner;
              for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
          }
          off += len;
        }
      },
      "concat");
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<int>(s.size()), "slice");
  const std::int64_t ext = s[static_cast<std::size_t>(axis)];
  require(start >= 0 && length > 0 && start + length <= ext,
          "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") out of bounds for extent " + std::to_string(ext));
  const AxisSplit sp = split_axis(s, axis);
  Shape os = s;
  os[static_cast<std::size_t>(axis)] = length;
  Tensor y(os);
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.value().ptr() + (o * ext + start) * sp.inner, length * sp.inner,
                y.ptr() + o * length * sp.inner);
  return t.record(
      std::move(y), {x},
      [sp, ext, start, length](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          const double* src = g.ptr() + o * length * sp.inner;
          double* dst = gx.ptr() + (o * ext + start) * sp.inner;
          for (std::int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

std::vector<Var> split(const Var& x, int axis, const std::vector<std::int64_t>& sizes) {
  axis = normalize_axis(axis, static_cast<int>(x.shape().size()), "split");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  require(total == x.shape()[static_cast<std::size_t>(axis)],
          "split: sizes sum to " + std::to_string(total) + " but axis extent is " +
              std::to_string(x.shape()[static_cast<std::size_t>(axis)]));
  std::vector<Var> out;
  std::int64_t start = 0;
  for (auto s : sizes) {
    out.push_back(slice(x, axis, start, s));
    start += s;
  }
  return out;
}

Var take(const Var& x, std::vector<std::int64_t> indices, Shape out_shape) {
  Tape& t = tape_of(x);
  require(numel(out_shape) == static_cast<std::int64_t>(indices.size()),
          "take: output shape " + to_string(out_shape) + " does not match index count");
  const Tensor& xv = x.value();
  Tensor y(std::move(out_shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && static_cast<std::size_t>(indices[i]) < xv.size(),
            "take: index out of range");
    y[i] = xv[static_cast<std::size_t>(indices[i])];
  }
  return t.record(
      std::move(y), {x},
      [indices = std::move(indices)](const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < indices.size(); ++i)
          gx[static_cast<std::size_t>(indices[i])] += g[i];
      },
      "take");
}

Var pixel_shuffle(const Var& x, int r) {
  Tape& t = tape_of(x);
  return t.record(
      kernels::pixel_shuffle(x.value(), r), {x},
      [r](const Tensor& g, BackwardContext& ctx) { ctx.grad(0) += kernels::pixel_unshuffle(g, r); },
      "pixel_shuffle");
}

Var pixel_unshuffle(const Var& x, int r) {
  Tape& t = tape_of(x);
  return t.record(
      kernels::pixel_unshuffle(x.value(), r), {x},
      [r](const Tensor& g, BackwardContext& ctx) { ctx.grad(0) += kernels::pixel_shuffle(g, r); },
      "pixel_unshuffle");
}

namespace {

// Source index along one axis for padded position i; -1 means zero fill.
using IndexMap = std::vector<std::int64_t>;

IndexMap zero_pad_map(std::int64_t ext, int before, int after) {
  IndexMap m(static_cast<std::size_t>(ext + before + after), -1);
  for (std::int64_t i = 0; i < ext; ++i) m[static_cast<std::size_t>(i + before)] = i;
  return m;
}

IndexMap reflect_pad_map(std::int64_t ext, int before, int after) {
  require(before < ext && after < ext,
          "reflect_pad2d: padding must be smaller than the extent " + std::to_string(ext));
  IndexMap m(static_cast<std::size_t>(ext + before + after));
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m.size()); ++i) {
    std::int64_t s = i - before;
    if (s < 0) s = -s;
    if (s >= ext) s = 2 * (ext - 1) - s;
    m[static_cast<std::size_t>(i)] = s;
  }
  return m;
}

Var pad_with(const Var& x, IndexMap my, IndexMap mx, const char* op) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  require(xv.rank() >= 2, std::string(op) + ": need at least 2 axes");
  const std::int64_t H = xv.dim(-2), W = xv.dim(-1);
  const std::int64_t planes = static_cast<std::int64_t>(xv.size()) / (H * W);
  const std::int64_t Ho = static_cast<std::int64_t>(my.size());
  const std::int64_t Wo = static_cast<std::int64_t>(mx.size());
  Shape os = xv.shape();
  os[os.size() - 2] = Ho;
  os[os.size() - 1] = Wo;
  Tensor y(os);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < Ho; ++i) {
      const std::int64_t si = my[static_cast<std::size_t>(i)];
      if (si < 0) continue;
      for (std::int64_t j = 0; j < Wo; ++j) {
        const std::int64_t sj = mx[static_cast<std::size_t>(j)];
        if (sj < 0) continue;
        y[static_cast<std::size_t>((p * Ho + i) * Wo + j)] =
            xv[static_cast<std::size_t>((p * H + si) * W + sj)];
      }
    }
  return t.record(
      std::move(y), {x},
      [my = std::move(my), mx = std::move(mx), planes, H, W, Ho, Wo](const Tensor& g,
                                                                     BackwardContext& ctx) {
        Tensor& gx = ctx.grad(0);
        for (std::int64_t p = 0; p < planes; ++p)
          for (std::int64_t i = 0; i < Ho; ++i) {
            const std::int64_t si = my[static_cast<std::size_t>(i)];
            if (si < 0) continue;
            for (std::int64_t j = 0; j < Wo; ++j) {
              const std::int64_t sj = mx[static_cast<std::size_t>(j)];
              if (sj < 0) continue;
              gx[static_cast<std::size_t>((p * H + si) * W + sj)] +=
                  g[static_cast<std::size_t>((p * Ho + i) * Wo + j)];
            }
          }
      },
      op);
}

}  // namespace

Var pad2d(const Var& x, int top, int bottom, int left, int right) {
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad2d: negative padding");
  return pad_with(x, zero_pad_map(x.dim(-2), top, bottom), zero_pad_map(x.dim(-1), left, right),
                  "pad2d");
}

Var reflect_pad2d(const Var& x, int top, int bottom, int left, int right) {
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "reflect_pad2d: negative padding");
  return pad_with(x, reflect_pad_map(x.dim(-2), top, bottom),
                  reflect_pad_map(x.dim(-1), left, right), "reflect_pad2d");
}

Var bmm(const Var& a, const Var& b, bool ta, bool tb) {
  Tape& t = common_tape({&a, &b});
  Tensor c = kernels::bmm(a.value(), b.value(), ta, tb);
  return t.record(
      std::move(c), {a, b},
      [ta, tb](const Tensor& g, BackwardContext& ctx) {
        const Tensor& av = ctx.input(0);
        const Tensor& bv = ctx.input(1);
        // C = op(A) op(B).  dop(A) = G op(B)^T, dop(B) = op(A)^T G.
        if (ctx.needs_grad(0)) {
          if (!ta) ctx.grad(0) += kernels::bmm(g, bv, false, !tb);
          else ctx.grad(0) += kernels::bmm(bv, g, tb, true);
        }
        if (ctx.needs_grad(1)) {
          if (!tb) ctx.grad(1) += kernels::bmm(av, g, !ta, false);
          else ctx.grad(1) += kernels::bmm(g, av, true, ta);
        }
      },
      "bmm");
}

}  // namespace mfdp
