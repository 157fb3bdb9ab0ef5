#include <doctest.h>

#include <cmath>
#include <limits>

#include "mfdp/cfa.hpp"
#include "mfdp/checkpoint.hpp"
#include "mfdp/synth.hpp"
#include "mfdp/trainer.hpp"

using namespace mfdp;

namespace {

std::vector<Tensor> snapshot(const MfdpModel& m) {
  std::vector<Tensor> out;
  for (const ParamLeaf* p : m.parameters()) out.push_back(p->value);
  return out;
}

TrainConfig small_run() {
  TrainConfig c;
  c.batch_size = 1;
  c.patch_size = 32;
  c.epochs = 10;
  c.val_every = 5;
  c.val_patches = 1;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("adamw on a single scalar") {
  ParamLeaf w("w", Tensor::scalar(2.0));
  std::vector<ParamLeaf*> params{&w};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamWState st;
  adamw_step(params, st, 0.1, cfg);
  CHECK(w.value[0] == 2.0);  // zero gradient, no decay
  CHECK(st.step == 1);

  cfg.weight_decay = 0.5;
  for (int k = 0; k < 3; ++k) adamw_step(params, st, 0.1, cfg);
  CHECK(w.value[0] == doctest::Approx(2.0 * std::pow(1 - 0.1 * 0.5, 3)).epsilon(1e-14));

  // first step of a fresh state moves by lr * g / (|g| + eps) after decay
  ParamLeaf u("u", Tensor::scalar(1.0));
  u.grad[0] = 4.0;
  AdamWState fresh;
  adamw_step({&u}, fresh, 0.01, cfg);
  CHECK(u.value[0] == doctest::Approx(1.0 * (1 - 0.01 * 0.5) - 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));

  // minimizes (x - 3)^2
  ParamLeaf x("x", Tensor::scalar(-1.0));
  AdamWState sx;
  cfg.weight_decay = 0.0;
  for (int k = 0; k < 2000; ++k) {
    x.grad[0] = 2 * (x.value[0] - 3.0);
    adamw_step({&x}, sx, 0.05, cfg);
  }
  CHECK(x.value[0] == doctest::Approx(3.0).epsilon(1e-3));
  AdamWState wrong;
  wrong.m.resize(2);
  wrong.v.resize(2);
  CHECK_THROWS_AS(adamw_step({&x}, wrong, 0.1, cfg), ContractError);
}

TEST_CASE("learning-rate schedule halves every period") {
  LrSchedule s{2e-4, 800, 10};
  CHECK(lr_at_epoch(0, s) == 2e-4);
  CHECK(lr_at_epoch(799.9, s) == 2e-4);
  CHECK(lr_at_epoch(800, s) == 1e-4);
  CHECK(lr_at_epoch(1600, s) == 5e-5);
  CHECK(lr_at_step(7999, s) == 2e-4);
  CHECK(lr_at_step(8000, s) == 1e-4);
}

TEST_CASE("augmentation covers the dihedral group") {
  RgbImage img = synth_texture(6, 8, 3);
  CHECK(augment(img, 0).tensor() == img.tensor());
  const RgbImage r1 = augment(img, 1);
  CHECK(r1.height() == 8);
  CHECK(r1.width() == 6);
  // counter-clockwise: the top-right corner moves to the top-left
  CHECK(r1.at(0, 0, 0) == img.at(0, 0, 7));
  CHECK(augment(augment(img, 1), 3).tensor() == img.tensor());
  const RgbImage f = augment(img, 4);
  CHECK(f.at(1, 2, 0) == img.at(1, 2, 7));
  std::vector<Tensor> seen;
  for (int v = 0; v < 8; ++v) {
    const Tensor t = augment(img, v).tensor();
    for (const Tensor& s : seen) CHECK(!(s == t));
    seen.push_back(t);
  }
}

TEST_CASE("batches are mosaics of augmented crops") {
  const auto data = synth_dataset(3, 40, 48, 2);
  Rng r(5);
  const Batch b = sample_batch(data, 4, 16, true, false, 15, r);
  CHECK(b.bayer.shape() == Shape{4, 1, 16, 16});
  CHECK(b.target.shape() == Shape{4, 3, 16, 16});
  CHECK(b.sigmas.empty());
  for (int n = 0; n < 4; ++n) {
    Tensor t(Shape{3, 16, 16});
    std::copy(b.target.ptr() + n * 768, b.target.ptr() + (n + 1) * 768, t.ptr());
    const Tensor m = mosaic(RgbImage(t)).tensor();
    CHECK(std::equal(m.ptr(), m.ptr() + 256, b.bayer.ptr() + n * 256));
  }
  Rng r2(5);
  const Batch again = sample_batch(data, 4, 16, true, false, 15, r2);
  CHECK(again.bayer == b.bayer);
  CHECK(again.variants == b.variants);

  Rng r3(6);
  const Batch noisy = sample_batch(data, 64, 16, false, true, 15, r3);
  REQUIRE(noisy.sigmas.size() == 64);
  for (double s : noisy.sigmas) CHECK((s >= 0 && s <= 15.0 / 255));
  for (int v : noisy.variants) CHECK(v == 0);
  CHECK_THROWS_AS(sample_batch(data, 1, 64, true, false, 15, r3), ContractError);
}

TEST_CASE("augmentation variants are uniform") {
  const auto data = synth_dataset(1, 16, 16, 4);
  Rng r(99);
  const Batch b = sample_batch(data, 1000, 8, true, false, 0, r);
  int counts[8] = {};
  for (int v : b.variants) ++counts[v];
  for (int c : counts) CHECK(std::abs(c / 1000.0 - 0.125) <= 0.04);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  MfdpModel m = MfdpModel::build(ModelConfig::tiny(), 3);
  const auto before = snapshot(m);
  TrainConfig c = small_run();
  c.epochs = 3;
  c.lr.base = 0.0;
  c.adam.weight_decay = 0.05;
  const auto data = synth_dataset(2, 48, 48, 1);
  const TrainResult res = train(m, data, {}, c, LossConfig{});
  CHECK(res.optimizer.step == 3);
  CHECK(snapshot(m) == before);
}

TEST_CASE("resume continues the same trajectory") {
  const auto data = synth_dataset(3, 48, 48, 8);
  const TrainConfig c = small_run();
  MfdpModel straight = MfdpModel::build(ModelConfig::tiny(), 4);
  const TrainResult full = train(straight, data, data, c, LossConfig{});
  REQUIRE(full.history.size() == 10);
  CHECK(std::isfinite(full.history[4].val_psnr));
  CHECK(std::isnan(full.history[3].val_psnr));

  MfdpModel first = MfdpModel::build(ModelConfig::tiny(), 4);
  std::string saved;
  TrainHooks hooks;
  hooks.checkpoint = [&](std::int64_t, const MfdpModel& m, const AdamWState& s) {
    saved = serialize_checkpoint(m, &s);
  };
  const TrainResult half = train(first, data, data, c, LossConfig{}, {}, hooks, 5);
  CHECK(half.optimizer.step == 5);
  Checkpoint ck = deserialize_checkpoint(saved);
  const TrainResult rest = train(ck.model, data, data, c, LossConfig{}, *ck.optimizer);
  REQUIRE(rest.history.size() == 5);
  CHECK(snapshot(ck.model) == snapshot(straight));
  CHECK(rest.optimizer == full.optimizer);
  for (int i = 0; i < 5; ++i) CHECK(rest.history[i].loss == full.history[i + 5].loss);
  CHECK(history_csv(full.history).rfind("step,lr,loss,val_psnr\n", 0) == 0);
}

TEST_CASE("non-finite parameters abort with the parameter name") {
  MfdpModel m = MfdpModel::build(ModelConfig::tiny(), 3);
  m.find("inter.conv.weight")->value[5] = std::numeric_limits<double>::quiet_NaN();
  const auto data = synth_dataset(1, 32, 32, 1);
  try {
    train(m, data, {}, small_run(), LossConfig{});
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.parameter == "inter.conv.weight");
    CHECK(std::string(e.what()).find("inter.conv.weight") != std::string::npos);
  }
}

TEST_CASE("train config checks") {
  TrainConfig c = small_run();
  c.patch_size = 48;
  MfdpModel m = MfdpModel::build(ModelConfig::tiny(), 3);
  CHECK_THROWS_AS(train(m, synth_dataset(1, 64, 64, 1), {}, c, LossConfig{}), ContractError);
  c = small_run();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}
