#pragma once

// Network building blocks: grouped deformable convolution, the window
// attention unit, the modified MobileNetV3 unit, spectral communication
// modules/blocks and the stride-2 samplers.
//
// Every block owns its ParamLeafs by value; copying a block deep-copies its
// parameters. Layout is N x C x H x W throughout.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfdp/autodiff.hpp"
#include "mfdp/rng.hpp"

namespace mfdp {

using ParamVisitor = std::function<void(ParamLeaf&)>;
using ConstParamVisitor = std::function<void(const ParamLeaf&)>;

enum class Init { KaimingFanIn, TruncNormal002 };

struct Conv2dLayer {
  ParamLeaf weight;
  std::optional<ParamLeaf> bias;
  Conv2dOptions opts;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, std::int64_t in, std::int64_t out, int kernel, Rng& rng,
              Conv2dOptions opts = {}, bool with_bias = true, Init init = Init::KaimingFanIn);
  /// Stride-1 "same" convolution with padding kernel/2.
  static Conv2dLayer same(const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                          Rng& rng, int groups = 1, bool with_bias = true,
                          Init init = Init::KaimingFanIn);

  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

struct ConvTranspose2dLayer {
  ParamLeaf weight;  // Cin x Cout x k x k
  ParamLeaf bias;
  Conv2dOptions opts;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                       int stride, Rng& rng);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

struct LayerNormLayer {
  ParamLeaf gamma;
  ParamLeaf beta;
  double eps = 1e-5;

  LayerNormLayer() = default;
  LayerNormLayer(const std::string& name, std::int64_t channels);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Grouped deformable convolution (stride 1, "same" output). One offset
/// field per group, predicted by an ordinary grouped conv that starts at zero.
struct DeformableGroupedConv {
  std::int64_t in_channels = 0, out_channels = 0;
  int groups = 1, kernel = 3;
  ParamLeaf weight;         // Cout x Cin/g x k x k
  ParamLeaf bias;           // Cout
  ParamLeaf offset_weight;  // g*2*k*k x Cin/g x k x k
  ParamLeaf offset_bias;    // g*2*k*k; channel 2t is dy, 2t+1 is dx of tap t

  DeformableGroupedConv() = default;
  DeformableGroupedConv(const std::string& name, std::int64_t in, std::int64_t out, int groups,
                        int kernel, Rng& rng);
  Var forward(Tape& t, const Var& x);
  /// Forward with externally supplied offsets (N x g*2*k*k x H x W).
  Var forward_with_offsets(Tape& t, const Var& x, const Var& offsets);
  Var offsets(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Non-overlapping window multi-head self-attention with relative position
/// bias, followed by LN -> expansion -> GELU -> reversion. forward() returns
/// the transform only; callers add the skip (see apply()).
struct LocalTransformerUnit {
  std::int64_t dim = 0;
  int heads = 1, window = 1, expansion = 4;
  LayerNormLayer norm_in;
  ParamLeaf wq, wk, wv;  // D x D x 1 x 1; head h owns output channels [h*d, (h+1)*d)
  ParamLeaf rel_bias;    // heads x (2M-1)^2
  ParamLeaf z0;          // D x D x 1 x 1
  LayerNormLayer norm_mlp;
  ParamLeaf z1;  // rD x D x 1 x 1
  ParamLeaf z2;  // D x rD x 1 x 1
  std::vector<std::int64_t> rel_index;  // heads*M^2*M^2 entries into rel_bias

  LocalTransformerUnit() = default;
  LocalTransformerUnit(const std::string& name, std::int64_t dim, int heads, int window,
                       int expansion, Rng& rng);

  int head_dim() const { return static_cast<int>(dim / heads); }
  /// Merged multi-head attention output before Z0 (N x D x H x W). When
  /// `weights` is non-null it receives the softmaxed attention
  /// ((N * windows) x heads x M^2 x M^2).
  Var attention(Tape& t, const Var& x, Var* weights = nullptr);
  Var forward(Tape& t, const Var& x);
  /// x + forward(x)
  Var apply(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Modified MobileNetV3 unit: LN, pointwise, LN+GELU, 5x5 depthwise,
/// LN+GELU, squeeze-excitation (factor kappa), pointwise, residual.
struct MobileNetV3Unit {
  std::int64_t dim = 0;
  int kappa = 16;
  LayerNormLayer norm0, norm1, norm2;
  Conv2dLayer pw_in, dw, se_reduce, se_expand, pw_out;

  MobileNetV3Unit() = default;
  MobileNetV3Unit(const std::string& name, std::int64_t dim, int kappa, Rng& rng);
  /// F~ = GELU(LN(dw(GELU(LN(pw(LN(F)))))))
  Var features(Tape& t, const Var& x);
  /// F^ = F~ * sigmoid(pw(GELU(pw(pool(F~)))))
  Var squeeze_excite(Tape& t, const Var& f_tilde);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Spectral communication enhancement module: residual depthwise conv,
/// MobileNetV3 unit, residual expansion/reversion MLP.
struct Scem {
  std::int64_t dim = 0;
  Conv2dLayer dw;
  MobileNetV3Unit mobile;
  Conv2dLayer expand, revert;

  Scem() = default;
  Scem(const std::string& name, std::int64_t dim, int expansion, int kappa, Rng& rng);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Residual 3x3 full-mixing conv, x + GELU(conv(x)); stands in for a SCEM or
/// an attention unit in ablated models.
struct ResidualConv {
  Conv2dLayer conv;

  ResidualConv() = default;
  ResidualConv(const std::string& name, std::int64_t dim, Rng& rng);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Window attention unit or its ablation stand-in, applied with the skip.
struct SpatialMixer {
  std::optional<LocalTransformerUnit> ltu;
  std::optional<ResidualConv> conv;

  static SpatialMixer attention(const std::string& name, std::int64_t dim, int heads, int window,
                                int expansion, Rng& rng);
  static SpatialMixer plain(const std::string& name, std::int64_t dim, Rng& rng);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

struct CellOptions {
  std::int64_t dim = 64;
  int modules = 0;  // m_s
  int heads = 8;
  int window = 8;
  int expansion = 4;
  int kappa = 16;
  int mix_kernel = 1;
  bool use_scem = true;
  bool use_ltu = true;
};

/// Encoding/decoding cell: SCEM cascade, full-mixing conv, block skip, GELU,
/// then the window attention unit with its skip.
struct Sceb {
  std::vector<Scem> scems;
  std::vector<ResidualConv> plain;  // used instead of scems when ablated
  Conv2dLayer mix;
  SpatialMixer mixer;

  Sceb() = default;
  Sceb(const std::string& name, const CellOptions& o, Rng& rng);
  Var cascade(Tape& t, const Var& x);
  Var forward(Tape& t, const Var& x);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// 2x2 stride-2 conv; halves the spatial extents.
struct DownSampler {
  Conv2dLayer conv;
  DownSampler() = default;
  DownSampler(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng);
  Var forward(Tape& t, const Var& x) { return conv.forward(t, x); }
  void visit(const ParamVisitor& f) { conv.visit(f); }
  void visit(const ConstParamVisitor& f) const { conv.visit(f); }
};

/// 2x2 stride-2 transposed conv, skip concatenation, pointwise 2C -> C.
struct UpSampler {
  ConvTranspose2dLayer up;
  Conv2dLayer fuse;
  UpSampler() = default;
  UpSampler(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng);
  Var forward(Tape& t, const Var& x, const Var& skip);
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
};

/// Relative-position index map: entry (h, i, j) of a heads x M^2 x M^2
/// array points into a heads x (2M-1)^2 table.
std::vector<std::int64_t> relative_position_index(int heads, int window);

}  // namespace mfdp
