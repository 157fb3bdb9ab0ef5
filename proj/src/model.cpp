#include "mfdp/model.hpp"

#include <iomanip>
#include <sstream>

namespace mfdp {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.name = "tiny";
  c.modules = {2, 1, 0, 1, 2};
  c.channels = {16, 32, 64, 32, 16};
  c.heads = 4;
  c.window = 4;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "MFDP") return c;
  if (name == "tiny") return tiny();
  c.ablation.use_deformable_input = false;
  if (name == "MFDP-1") return c;
  c.ablation.use_scem = false;
  if (name == "MFDP-2") {
    c.channels = {72, 200, 256, 200, 72};
    return c;
  }
  c.ablation.use_ltu = false;
  if (name == "MFDP-3") {
    c.channels = {80, 208, 256, 208, 80};
    return c;
  }
  throw ContractError("unknown model preset '" + name + "' (MFDP, MFDP-1, MFDP-2, MFDP-3, tiny)");
}

std::int64_t ModelConfig::bayer_multiple() const {
  return 2 * static_cast<std::int64_t>(window) * (std::int64_t{1} << (scales - 1));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("model config: " + field + " " + why);
  };
  if (scales < 1 || scales > 8) fail("scales", "must be in [1, 8]");
  const auto n = static_cast<std::size_t>(cells());
  if (modules.size() != n) fail("modules", "must have 2*scales-1 entries");
  if (channels.size() != n) fail("channels", "must have 2*scales-1 entries");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string at = "[" + std::to_string(i) + "]";
    if (modules[i] < 0) fail("modules" + at, "must be >= 0");
    if (channels[i] <= 0) fail("channels" + at, "must be positive");
    if (channels[i] != channels[n - 1 - i]) fail("channels" + at, "must be symmetric");
    if (heads <= 0 || channels[i] % heads != 0) fail("channels" + at, "not divisible by heads");
    if (ablation.use_scem && (kappa <= 0 || channels[i] % kappa != 0)) fail("channels" + at, "not divisible by kappa");
  }
  if (window < 1) fail("window", "must be >= 1");
  if (heads < 1) fail("heads", "must be >= 1");
  if (expansion < 1) fail("expansion", "must be >= 1");
  if (deform_kernel < 1 || deform_kernel % 2 == 0) fail("deform_kernel", "must be odd");
  if (mix_kernel < 1 || mix_kernel % 2 == 0) fail("mix_kernel", "must be odd");
  if (ablation.use_deformable_input && channels.front() % 4 != 0) fail("channels[0]", "must be divisible by 4 (one group per spectrum)");
}

MfdpModel MfdpModel::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MfdpModel m;
  m.config_ = cfg;
  Rng rng(seed);
  const std::int64_t C = cfg.base_channels();
  const bool ltu = cfg.ablation.use_ltu;
  auto mixer = [&](const std::string& name, std::int64_t dim) {
    return ltu ? SpatialMixer::attention(name, dim, cfg.heads, cfg.window, cfg.expansion, rng)
               : SpatialMixer::plain(name, dim, rng);
  };

  if (cfg.ablation.use_deformable_input) {
    m.intra_deform_.emplace("intra", cfg.input_channels(), C, 4, cfg.deform_kernel, rng);
  } else {
    m.intra_plain_ = Conv2dLayer::same("intra", cfg.input_channels(), C, 3, rng);
  }
  m.intra_norm_ = LayerNormLayer("intra.norm", C);
  m.inter_ = Conv2dLayer::same("inter.conv", C, C, 3, rng);
  m.inter_mixer_ = mixer("inter.ltu", C);

  const int S = cfg.scales;
  for (int i = 0; i < cfg.cells(); ++i) {
    CellOptions o;
    o.dim = cfg.channels[static_cast<std::size_t>(i)];
    o.modules = cfg.modules[static_cast<std::size_t>(i)];
    o.heads = cfg.heads;
    o.window = cfg.window;
    o.expansion = cfg.expansion;
    o.kappa = cfg.kappa;
    o.mix_kernel = cfg.mix_kernel;
    o.use_scem = cfg.ablation.use_scem;
    o.use_ltu = ltu;
    const std::string name = i < S ? "enc" + std::to_string(i + 1) : "dec" + std::to_string(i - S + 1);
    m.cells_.emplace_back(name, o, rng);
  }
  for (int i = 0; i + 1 < S; ++i) {
    const auto a = static_cast<std::size_t>(i);
    m.downs_.emplace_back("down" + std::to_string(i + 1), cfg.channels[a], cfg.channels[a + 1], rng);
  }
  for (int i = S - 1; i + 1 < cfg.cells(); ++i) {
    const auto a = static_cast<std::size_t>(i);
    m.ups_.emplace_back("up" + std::to_string(i - S + 2), cfg.channels[a], cfg.channels[a + 1], rng);
  }
  m.pred_mixer_ = mixer("pred.ltu", C);
  m.pred_conv_ = Conv2dLayer::same("pred.conv", C, 12, 3, rng);
  return m;
}

Var MfdpModel::features(Tape& t, const Var& x) {
  Var f = intra_deform_ ? intra_deform_->forward(t, x) : intra_plain_->forward(t, x);
  f = gelu(intra_norm_.forward(t, f));
  f = gelu(inter_.forward(t, f));
  return inter_mixer_.forward(t, f);
}

Var MfdpModel::forward(Tape& t, const Tensor& bayer, const std::vector<double>& sigmas) {
  const Shape& s = bayer.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw ContractError("model input must be N x 1 x H x W with even H, W; got " + to_string(s));
  }
  const std::int64_t N = s[0], h = s[2] / 2, w = s[3] / 2;
  if (config_.denoise && sigmas.size() != static_cast<std::size_t>(N)) {
    throw ContractError("denoise model needs one sigma per sample (" + std::to_string(N) +
                        "), got " + std::to_string(sigmas.size()));
  }
  if (!config_.denoise && !sigmas.empty()) {
    throw ContractError("sigma given to a demosaic-only model");
  }

  const Tensor stack = kernels::pixel_unshuffle(bayer, 2);  // N x 4 x h x w
  Tensor input = stack;
  if (config_.denoise) {
    input = Tensor(Shape{N, 8, h, w});
    const std::int64_t plane = h * w;
    for (std::int64_t n = 0; n < N; ++n)
      for (int c = 0; c < 4; ++c) {
        const double* src = stack.ptr() + (n * 4 + c) * plane;
        double* dst = input.ptr() + (n * 8 + 2 * c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          dst[i] = src[i];
          dst[plane + i] = sigmas[static_cast<std::size_t>(n)];
        }
      }
  }

  const std::int64_t mult = config_.bayer_multiple() / 2;
  const int pb = static_cast<int>((mult - h % mult) % mult);
  const int pr = static_cast<int>((mult - w % mult) % mult);
  Var x = t.constant(std::move(input));
  if (pb || pr) x = reflect_pad2d(x, 0, pb, 0, pr);

  const Var f_inter = features(t, x);
  const int S = config_.scales;
  std::vector<Var> skips;
  Var y = f_inter;
  for (int i = 0; i < S; ++i) {
    y = cells_[static_cast<std::size_t>(i)].forward(t, y);
    if (i + 1 < S) {
      skips.push_back(y);
      y = downs_[static_cast<std::size_t>(i)].forward(t, y);
    }
  }
  for (int i = S; i < config_.cells(); ++i) {
    const Var& skip = skips[static_cast<std::size_t>(2 * S - 2 - i)];
    y = ups_[static_cast<std::size_t>(i - S)].forward(t, y, skip);
    y = cells_[static_cast<std::size_t>(i)].forward(t, y);
  }

  Var f_d = add(f_inter, y);
  Var f_r = pred_conv_.forward(t, pred_mixer_.forward(t, f_d));
  if (pb || pr) f_r = slice(slice(f_r, 2, 0, h), 3, 0, w);

  Tensor init(Shape{N, 12, h, w});
  const std::int64_t plane = h * w;
  for (std::int64_t n = 0; n < N; ++n)
    for (int c = 0; c < 12; ++c) {
      const double* src = stack.ptr() + (n * 4 + kWarmStartChannels[c]) * plane;
      std::copy(src, src + plane, init.ptr() + (n * 12 + c) * plane);
    }
  Var f_p = add(f_r, t.constant(std::move(init)));
  return pixel_shuffle(f_p, 2);
}

RgbImage MfdpModel::demosaic(const BayerMosaic& bayer, std::optional<double> sigma) {
  Tape t;
  t.set_grad_enabled(false);
  const Tensor& b = bayer.tensor();
  std::vector<double> sigmas;
  if (sigma) sigmas.push_back(*sigma);
  Var out = forward(t, b.reshaped({1, 1, b.dim(1), b.dim(2)}), sigmas);
  return RgbImage(out.value().reshaped({3, b.dim(1), b.dim(2)}));
}

void MfdpModel::visit(const ParamVisitor& f) {
  if (intra_deform_) intra_deform_->visit(f);
  if (intra_plain_) intra_plain_->visit(f);
  intra_norm_.visit(f);
  inter_.visit(f);
  inter_mixer_.visit(f);
  const int S = config_.scales;
  for (int i = 0; i < config_.cells(); ++i) {
    if (i >= S) ups_[static_cast<std::size_t>(i - S)].visit(f);
    cells_[static_cast<std::size_t>(i)].visit(f);
    if (i + 1 < S) downs_[static_cast<std::size_t>(i)].visit(f);
  }
  pred_mixer_.visit(f);
  pred_conv_.visit(f);
}

void MfdpModel::visit(const ConstParamVisitor& f) const {
  const_cast<MfdpModel*>(this)->visit(ParamVisitor([&f](ParamLeaf& p) { f(p); }));
}

std::vector<ParamLeaf*> MfdpModel::parameters() {
  std::vector<ParamLeaf*> out;
  visit(ParamVisitor([&out](ParamLeaf& p) { out.push_back(&p); }));
  return out;
}

std::vector<const ParamLeaf*> MfdpModel::parameters() const {
  std::vector<const ParamLeaf*> out;
  visit(ConstParamVisitor([&out](const ParamLeaf& p) { out.push_back(&p); }));
  return out;
}

ParamLeaf* MfdpModel::find(const std::string& name) {
  for (ParamLeaf* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void MfdpModel::zero_grad() {
  visit(ParamVisitor([](ParamLeaf& p) { p.zero_grad(); }));
}

std::int64_t MfdpModel::param_count() const {
  std::int64_t n = 0;
  visit(ConstParamVisitor([&n](const ParamLeaf& p) { n += static_cast<std::int64_t>(p.size()); }));
  return n;
}

std::vector<std::pair<std::string, std::int64_t>> MfdpModel::param_table() const {
  std::vector<std::pair<std::string, std::int64_t>> rows;
  visit(ConstParamVisitor([&rows](const ParamLeaf& p) {
    const std::string top = p.name.substr(0, p.name.find('.'));
    if (rows.empty() || rows.back().first != top) rows.emplace_back(top, 0);
    rows.back().second += static_cast<std::int64_t>(p.size());
  }));
  return rows;
}

std::string format_param_table(const MfdpModel& model) {
  std::ostringstream os;
  const auto total = model.param_count();
  os << "module        params      share\n";
  for (const auto& [name, n] : model.param_table()) {
    os << std::left << std::setw(12) << name << std::right << std::setw(10) << n << "   "
       << std::fixed << std::setprecision(1) << std::setw(5)
       << 100.0 * static_cast<double>(n) / static_cast<double>(total) << "%\n";
  }
  os << std::left << std::setw(12) << "total" << std::right << std::setw(10) << total << '\n';
  return os.str();
}

}  // namespace mfdp
