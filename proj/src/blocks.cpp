#include "mfdp/blocks.hpp"

#include <cmath>

namespace mfdp {

namespace {

Tensor init_tensor(Shape shape, Init init, std::int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  if (init == Init::TruncNormal002) {
    for (double& v : t.data()) v = rng.truncated_normal(0.02);
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
  }
  return t;
}

Var conv1x1(Tape& t, const Var& x, ParamLeaf& w) { return conv2d(x, t.param(w), std::nullopt); }

// Const traversal reuses the mutable one; visitors only read.
template <class Block>
void visit_const(const Block& b, const ConstParamVisitor& f) {
  const_cast<Block&>(b).visit(ParamVisitor([&f](ParamLeaf& p) { f(p); }));
}

}  // namespace

std::vector<std::int64_t> relative_position_index(int heads, int window) {
  const int M = window, T = M * M, span = 2 * M - 1;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(heads) * T * T);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) {
        const int dy = i / M - j / M + M - 1;
        const int dx = i % M - j % M + M - 1;
        idx[(static_cast<std::size_t>(h) * T + i) * T + j] =
            static_cast<std::int64_t>(h) * span * span + dy * span + dx;
      }
  return idx;
}

// ---- Conv2dLayer ------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                         Rng& rng, Conv2dOptions o, bool with_bias, Init init)
    : opts(o) {
  if (in % o.groups != 0 || out % o.groups != 0) {
    throw ContractError(name + ": channels " + std::to_string(in) + "->" + std::to_string(out) +
                        " not divisible by groups " + std::to_string(o.groups));
  }
  const std::int64_t cin_g = in / o.groups;
  weight = ParamLeaf(name + ".weight",
                     init_tensor({out, cin_g, kernel, kernel}, init, cin_g * kernel * kernel, rng));
  if (with_bias) bias = ParamLeaf(name + ".bias", Tensor(Shape{out}));
}

Conv2dLayer Conv2dLayer::same(const std::string& name, std::int64_t in, std::int64_t out,
                              int kernel, Rng& rng, int groups, bool with_bias, Init init) {
  Conv2dOptions o;
  o.pad_h = o.pad_w = kernel / 2;
  o.groups = groups;
  return Conv2dLayer(name, in, out, kernel, rng, o, with_bias, init);
}

Var Conv2dLayer::forward(Tape& t, const Var& x) {
  std::optional<Var> b;
  if (bias) b = t.param(*bias);
  return conv2d(x, t.param(weight), b, opts);
}

void Conv2dLayer::visit(const ParamVisitor& f) {
  f(weight);
  if (bias) f(*bias);
}
void Conv2dLayer::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- ConvTranspose2dLayer ---------------------------------------------------

ConvTranspose2dLayer::ConvTranspose2dLayer(const std::string& name, std::int64_t in,
                                           std::int64_t out, int kernel, int stride, Rng& rng) {
  opts.stride_h = opts.stride_w = stride;
  // fan-in of a transposed conv: input channels times taps hitting one output.
  const std::int64_t fan_in = in * (kernel / stride) * (kernel / stride);
  weight = ParamLeaf(name + ".weight",
                     init_tensor({in, out, kernel, kernel}, Init::KaimingFanIn, fan_in, rng));
  bias = ParamLeaf(name + ".bias", Tensor(Shape{out}));
}

Var ConvTranspose2dLayer::forward(Tape& t, const Var& x) {
  return conv_transpose2d(x, t.param(weight), t.param(bias), opts);
}

void ConvTranspose2dLayer::visit(const ParamVisitor& f) {
  f(weight);
  f(bias);
}
void ConvTranspose2dLayer::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- LayerNormLayer ---------------------------------------------------------

LayerNormLayer::LayerNormLayer(const std::string& name, std::int64_t channels)
    : gamma(name + ".gamma", Tensor(Shape{channels}, 1.0)),
      beta(name + ".beta", Tensor(Shape{channels}, 0.0)) {}

Var LayerNormLayer::forward(Tape& t, const Var& x) {
  return layer_norm(x, t.param(gamma), t.param(beta), eps);
}

void LayerNormLayer::visit(const ParamVisitor& f) {
  f(gamma);
  f(beta);
}
void LayerNormLayer::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- DeformableGroupedConv --------------------------------------------------

DeformableGroupedConv::DeformableGroupedConv(const std::string& name, std::int64_t in,
                                             std::int64_t out, int g, int k, Rng& rng)
    : in_channels(in), out_channels(out), groups(g), kernel(k) {
  if (in % g != 0 || out % g != 0) {
    throw ContractError(name + ": channels " + std::to_string(in) + "->" + std::to_string(out) +
                        " not divisible by groups " + std::to_string(g));
  }
  if (k % 2 != 1) throw ContractError(name + ": kernel size must be odd");
  const std::int64_t cg = in / g;
  weight = ParamLeaf(name + ".weight", init_tensor({out, cg, k, k}, Init::KaimingFanIn,
                                                   cg * k * k, rng));
  bias = ParamLeaf(name + ".bias", Tensor(Shape{out}));
  const std::int64_t off_ch = static_cast<std::int64_t>(g) * 2 * k * k;
  offset_weight = ParamLeaf(name + ".offset.weight", Tensor(Shape{off_ch, cg, k, k}));
  offset_bias = ParamLeaf(name + ".offset.bias", Tensor(Shape{off_ch}));
}

Var DeformableGroupedConv::offsets(Tape& t, const Var& x) {
  Conv2dOptions o;
  o.pad_h = o.pad_w = kernel / 2;
  o.groups = groups;
  return conv2d(x, t.param(offset_weight), t.param(offset_bias), o);
}

Var DeformableGroupedConv::forward(Tape& t, const Var& x) {
  return forward_with_offsets(t, x, offsets(t, x));
}

Var DeformableGroupedConv::forward_with_offsets(Tape& t, const Var& x, const Var& off) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != in_channels) {
    throw ContractError("deformable conv: expected N x " + std::to_string(in_channels) +
                        " x H x W input, got " + to_string(xs));
  }
  const std::int64_t N = xs[0], H = xs[2], W = xs[3];
  const int k = kernel, taps = k * k, pad = k / 2;
  const std::int64_t cg = in_channels / groups, cog = out_channels / groups;
  if (off.shape() != Shape{N, static_cast<std::int64_t>(groups) * 2 * taps, H, W}) {
    throw ContractError("deformable conv: offsets must be N x g*2*k*k x H x W, got " +
                        to_string(off.shape()));
  }
  const std::int64_t P = H * W * taps;

  // Sampling lattice in the zero-padded frame: output (y, x), tap (ky, kx)
  // reads padded (y + ky, x + kx).
  Tensor base(Shape{1, P, 2});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t xx = 0; xx < W; ++xx)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t p = (y * W + xx) * taps + ky * k + kx;
          base[static_cast<std::size_t>(2 * p)] = static_cast<double>(y + ky);
          base[static_cast<std::size_t>(2 * p + 1)] = static_cast<double>(xx + kx);
        }
  const Var grid = t.constant(std::move(base));
  const Var xp = pad2d(x, pad, pad, pad, pad);
  const Var w = t.param(weight);
  const Var b = t.param(bias);

  std::vector<Var> outs;
  for (int g = 0; g < groups; ++g) {
    Var xg = slice(xp, 1, g * cg, cg);
    Var og = slice(off, 1, static_cast<std::int64_t>(g) * 2 * taps, 2 * taps);
    og = reshape(og, {N, taps, 2, H, W});
    og = permute(og, {0, 3, 4, 1, 2});  // N x H x W x taps x 2
    og = reshape(og, {N, P, 2});
    Var coords = add(og, grid);
    Var s = bilinear_sample(xg, coords);  // N x cg x (H*W*taps)
    s = reshape(s, {N, cg, H, W, taps});
    s = permute(s, {0, 1, 4, 2, 3});  // N x cg x taps x H x W
    s = reshape(s, {N, cg * taps, H, W});
    Var wg = reshape(slice(w, 0, g * cog, cog), {cog, cg * taps, 1, 1});
    Var bg = slice(b, 0, g * cog, cog);
    outs.push_back(conv2d(s, wg, bg));
  }
  return groups == 1 ? outs[0] : concat(outs, 1);
}

void DeformableGroupedConv::visit(const ParamVisitor& f) {
  f(weight);
  f(bias);
  f(offset_weight);
  f(offset_bias);
}
void DeformableGroupedConv::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- LocalTransformerUnit ---------------------------------------------------

LocalTransformerUnit::LocalTransformerUnit(const std::string& name, std::int64_t d, int h,
                                           int m, int r, Rng& rng)
    : dim(d), heads(h), window(m), expansion(r) {
  if (d % h != 0) {
    throw ContractError(name + ": dimension " + std::to_string(d) +
                        " not divisible by heads " + std::to_string(h));
  }
  auto mat = [&](const std::string& n, std::int64_t out, std::int64_t in) {
    return ParamLeaf(name + "." + n, init_tensor({out, in, 1, 1}, Init::TruncNormal002, in, rng));
  };
  norm_in = LayerNormLayer(name + ".norm_in", d);
  wq = mat("wq", d, d);
  wk = mat("wk", d, d);
  wv = mat("wv", d, d);
  const std::int64_t span = 2 * m - 1;
  rel_bias = ParamLeaf(name + ".rel_bias", Tensor(Shape{h, span * span}));
  z0 = mat("z0", d, d);
  norm_mlp = LayerNormLayer(name + ".norm_mlp", d);
  z1 = mat("z1", r * d, d);
  z2 = mat("z2", d, r * d);
  rel_index = relative_position_index(h, m);
}

Var LocalTransformerUnit::attention(Tape& t, const Var& x, Var* weights) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != dim) {
    throw ContractError("LTU: expected N x " + std::to_string(dim) + " x H x W, got " +
                        to_string(xs));
  }
  const std::int64_t N = xs[0], H = xs[2], W = xs[3], M = window;
  if (H % M != 0 || W % M != 0) {
    throw ContractError("LTU: spatial extents " + std::to_string(H) + "x" + std::to_string(W) +
                        " not divisible by window " + std::to_string(M));
  }
  const std::int64_t hb = H / M, wb = W / M, d = head_dim(), T = M * M;
  const std::int64_t B = N * hb * wb * heads;

  Var y = norm_in.forward(t, x);
  auto to_windows = [&](const Var& v) {
    Var r = reshape(v, {N, heads, d, hb, M, wb, M});
    r = permute(r, {0, 3, 5, 1, 4, 6, 2});  // N, hb, wb, heads, M, M, d
    return reshape(r, {B, T, d});
  };
  Var q = to_windows(conv1x1(t, y, wq));
  Var k = to_windows(conv1x1(t, y, wk));
  Var v = to_windows(conv1x1(t, y, wv));

  Var scores = scale(bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
  scores = reshape(scores, {N * hb * wb, heads, T, T});
  Var bias = take(t.param(rel_bias), rel_index, {1, heads, T, T});
  Var attn = softmax(add(scores, bias), -1);
  if (weights) *weights = attn;
  Var o = bmm(reshape(attn, {B, T, T}), v);  // B x T x d
  o = reshape(o, {N, hb, wb, heads, M, M, d});
  o = permute(o, {0, 3, 6, 1, 4, 2, 5});  // N, heads, d, hb, M, wb, M
  return reshape(o, {N, dim, H, W});
}

Var LocalTransformerUnit::forward(Tape& t, const Var& x) {
  Var a = conv1x1(t, attention(t, x), z0);
  a = norm_mlp.forward(t, a);
  a = gelu(conv1x1(t, a, z1));
  return conv1x1(t, a, z2);
}

Var LocalTransformerUnit::apply(Tape& t, const Var& x) { return add(x, forward(t, x)); }

void LocalTransformerUnit::visit(const ParamVisitor& f) {
  norm_in.visit(f);
  f(wq);
  f(wk);
  f(wv);
  f(rel_bias);
  f(z0);
  norm_mlp.visit(f);
  f(z1);
  f(z2);
}
void LocalTransformerUnit::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- MobileNetV3Unit --------------------------------------------------------

MobileNetV3Unit::MobileNetV3Unit(const std::string& name, std::int64_t d, int k, Rng& rng)
    : dim(d), kappa(k) {
  if (k <= 0 || d % k != 0) {
    throw ContractError(name + ": dimension " + std::to_string(d) +
                        " not divisible by squeeze factor " + std::to_string(k));
  }
  norm0 = LayerNormLayer(name + ".norm0", d);
  pw_in = Conv2dLayer::same(name + ".pw_in", d, d, 1, rng);
  norm1 = LayerNormLayer(name + ".norm1", d);
  dw = Conv2dLayer::same(name + ".dw", d, d, 5, rng, static_cast<int>(d));
  norm2 = LayerNormLayer(name + ".norm2", d);
  se_reduce = Conv2dLayer::same(name + ".se_reduce", d, d / k, 1, rng);
  se_expand = Conv2dLayer::same(name + ".se_expand", d / k, d, 1, rng);
  pw_out = Conv2dLayer::same(name + ".pw_out", d, d, 1, rng);
}

Var MobileNetV3Unit::features(Tape& t, const Var& x) {
  Var f = pw_in.forward(t, norm0.forward(t, x));
  f = gelu(norm1.forward(t, f));
  f = dw.forward(t, f);
  return gelu(norm2.forward(t, f));
}

Var MobileNetV3Unit::squeeze_excite(Tape& t, const Var& f_tilde) {
  Var z = se_reduce.forward(t, global_avg_pool(f_tilde));
  z = sigmoid(se_expand.forward(t, gelu(z)));
  return mul(f_tilde, z);
}

Var MobileNetV3Unit::forward(Tape& t, const Var& x) {
  return add(x, pw_out.forward(t, squeeze_excite(t, features(t, x))));
}

void MobileNetV3Unit::visit(const ParamVisitor& f) {
  norm0.visit(f);
  pw_in.visit(f);
  norm1.visit(f);
  dw.visit(f);
  norm2.visit(f);
  se_reduce.visit(f);
  se_expand.visit(f);
  pw_out.visit(f);
}
void MobileNetV3Unit::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- Scem -------------------------------------------------------------------

Scem::Scem(const std::string& name, std::int64_t d, int r, int kappa, Rng& rng)
    : dim(d),
      dw(Conv2dLayer::same(name + ".dw", d, d, 3, rng, static_cast<int>(d))),
      mobile(name + ".mobile", d, kappa, rng),
      expand(Conv2dLayer::same(name + ".expand", d, r * d, 1, rng, 1, true, Init::TruncNormal002)),
      revert(Conv2dLayer::same(name + ".revert", r * d, d, 1, rng, 1, true, Init::TruncNormal002)) {}

Var Scem::forward(Tape& t, const Var& x) {
  Var f_dw = add(dw.forward(t, x), x);
  // The unit carries its own skip, so this is F_m = m(F_dw) with m(F) = F + ...
  Var f_m = mobile.forward(t, f_dw);
  return add(revert.forward(t, gelu(expand.forward(t, f_m))), f_m);
}

void Scem::visit(const ParamVisitor& f) {
  dw.visit(f);
  mobile.visit(f);
  expand.visit(f);
  revert.visit(f);
}
void Scem::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- ResidualConv / SpatialMixer -------------------------------------------

ResidualConv::ResidualConv(const std::string& name, std::int64_t d, Rng& rng)
    : conv(Conv2dLayer::same(name + ".conv", d, d, 3, rng)) {}

Var ResidualConv::forward(Tape& t, const Var& x) { return add(x, gelu(conv.forward(t, x))); }

void ResidualConv::visit(const ParamVisitor& f) { conv.visit(f); }
void ResidualConv::visit(const ConstParamVisitor& f) const { conv.visit(f); }

SpatialMixer SpatialMixer::attention(const std::string& name, std::int64_t dim, int heads,
                                     int window, int expansion, Rng& rng) {
  SpatialMixer m;
  m.ltu.emplace(name, dim, heads, window, expansion, rng);
  return m;
}

SpatialMixer SpatialMixer::plain(const std::string& name, std::int64_t dim, Rng& rng) {
  SpatialMixer m;
  m.conv.emplace(name, dim, rng);
  return m;
}

Var SpatialMixer::forward(Tape& t, const Var& x) {
  if (ltu) return ltu->apply(t, x);
  return conv->forward(t, x);
}

void SpatialMixer::visit(const ParamVisitor& f) {
  if (ltu) ltu->visit(f);
  if (conv) conv->visit(f);
}
void SpatialMixer::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- Sceb -------------------------------------------------------------------

Sceb::Sceb(const std::string& name, const CellOptions& o, Rng& rng) {
  for (int i = 0; i < o.modules; ++i) {
    const std::string n = name + ".scem" + std::to_string(i + 1);
    if (o.use_scem) scems.emplace_back(n, o.dim, o.expansion, o.kappa, rng);
    else plain.emplace_back(n, o.dim, rng);
  }
  mix = Conv2dLayer::same(name + ".mix", o.dim, o.dim, o.mix_kernel, rng);
  mixer = o.use_ltu ? SpatialMixer::attention(name + ".ltu", o.dim, o.heads, o.window,
                                              o.expansion, rng)
                    : SpatialMixer::plain(name + ".ltu", o.dim, rng);
}

Var Sceb::cascade(Tape& t, const Var& x) {
  Var y = x;
  for (auto& s : scems) y = s.forward(t, y);
  for (auto& p : plain) y = p.forward(t, y);
  return y;
}

Var Sceb::forward(Tape& t, const Var& x) {
  Var z = gelu(add(mix.forward(t, cascade(t, x)), x));
  return mixer.forward(t, z);
}

void Sceb::visit(const ParamVisitor& f) {
  for (auto& s : scems) s.visit(f);
  for (auto& p : plain) p.visit(f);
  mix.visit(f);
  mixer.visit(f);
}
void Sceb::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

// ---- samplers ---------------------------------------------------------------

DownSampler::DownSampler(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng) {
  Conv2dOptions o;
  o.stride_h = o.stride_w = 2;
  conv = Conv2dLayer(name + ".conv", in, out, 2, rng, o);
}

UpSampler::UpSampler(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng)
    : up(name + ".up", in, out, 2, 2, rng),
      fuse(Conv2dLayer::same(name + ".fuse", 2 * out, out, 1, rng)) {}

Var UpSampler::forward(Tape& t, const Var& x, const Var& skip) {
  return fuse.forward(t, concat({up.forward(t, x), skip}, 1));
}

void UpSampler::visit(const ParamVisitor& f) {
  up.visit(f);
  fuse.visit(f);
}
void UpSampler::visit(const ConstParamVisitor& f) const { visit_const(*this, f); }

}  // namespace mfdp
