#pragma once

// The full demosaicking network: deformable intra-spectral features, an
// inter-spectral attention stage, a U-shaped stack of SCEB cells and a
// warm-started pixel-shuffle predictor.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfdp/blocks.hpp"
#include "mfdp/cfa.hpp"

namespace mfdp {

struct AblationFlags {
  bool use_deformable_input = true;
  bool use_scem = true;
  bool use_ltu = true;
  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  std::string name = "MFDP";
  int scales = 3;                                          // S; 2S-1 cells
  std::vector<int> modules{6, 3, 0, 3, 6};                 // m_s
  std::vector<std::int64_t> channels{64, 192, 256, 192, 64};  // C_s
  int window = 8;                                          // M
  int heads = 8;
  int expansion = 4;  // r
  int kappa = 16;     // SE squeeze factor
  int deform_kernel = 3;
  int mix_kernel = 1;  // per-cell full-mixing conv
  bool denoise = false;
  AblationFlags ablation;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig tiny();
  /// "MFDP", "MFDP-1", "MFDP-2", "MFDP-3" (ablation models).
  static ModelConfig preset(const std::string& name);

  int cells() const { return 2 * scales - 1; }
  std::int64_t base_channels() const { return channels.front(); }
  int input_channels() const { return denoise ? 8 : 4; }
  /// Bayer extents are padded internally to a multiple of this.
  std::int64_t bayer_multiple() const;
  /// Throws ContractError naming the offending field.
  void validate() const;
};

class MfdpModel {
 public:
  MfdpModel() = default;
  static MfdpModel build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// bayer: N x 1 x H x W with H, W even. sigmas (in [0,1] units, one per
  /// sample) are required iff the model is in denoise mode. Returns the
  /// N x 3 x H x W prediction.
  Var forward(Tape& t, const Tensor& bayer, const std::vector<double>& sigmas = {});
  RgbImage demosaic(const BayerMosaic& bayer, std::optional<double> sigma = std::nullopt);

  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
  std::vector<ParamLeaf*> parameters();
  std::vector<const ParamLeaf*> parameters() const;
  ParamLeaf* find(const std::string& name);
  void zero_grad();

  std::int64_t param_count() const;
  /// Element counts grouped by top-level module, in build order.
  std::vector<std::pair<std::string, std::int64_t>> param_table() const;

  /// The last conv of the residual path; zeroing it gives F_r = 0.
  Conv2dLayer& predictor_conv() { return pred_conv_; }

 private:
  Var features(Tape& t, const Var& x);

  ModelConfig config_;
  std::optional<DeformableGroupedConv> intra_deform_;
  std::optional<Conv2dLayer> intra_plain_;
  LayerNormLayer intra_norm_;
  Conv2dLayer inter_;
  SpatialMixer inter_mixer_;
  std::vector<Sceb> cells_;
  std::vector<DownSampler> downs_;
  std::vector<UpSampler> ups_;
  SpatialMixer pred_mixer_;
  Conv2dLayer pred_conv_;
};

/// Renders param_table() as aligned text with a total row.
std::string format_param_table(const MfdpModel& model);

}  // namespace mfdp
