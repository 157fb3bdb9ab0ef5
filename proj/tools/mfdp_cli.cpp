// mfdp: mosaic / demosaic / train / eval / synth / params.
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 contract violation, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mfdp/checkpoint.hpp"
#include "mfdp/image_io.hpp"
#include "mfdp/metrics.hpp"
#include "mfdp/model.hpp"
#include "mfdp/run_config.hpp"
#include "mfdp/synth.hpp"
#include "mfdp/trainer.hpp"

namespace fs = std::filesystem;
using namespace mfdp;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kContract = 3, kNumeric = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> list_images(const std::string& dir) {
  if (dir.empty()) throw IoError("no dataset directory given");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ppm images in " + dir);
  return files;
}

std::vector<RgbImage> load_images(const std::string& dir) {
  std::vector<RgbImage> out;
  for (const auto& p : list_images(dir)) out.push_back(read_rgb(p.string()));
  return out;
}

void write_sidecar(const std::string& image_path, double sigma255, std::uint64_t seed,
                   const std::string& source) {
  nlohmann::json meta{{"sigma255", sigma255}, {"sigma", sigma255 / 255.0}, {"seed", seed},
                      {"source", source}, {"cfa", "RGGB"}};
  write_text(image_path + ".json", meta.dump(2) + "\n");
}

RgbImage run_model(MfdpModel& model, const BayerMosaic& m, double sigma255) {
  if (model.config().denoise) return model.demosaic(m, sigma255 / 255.0);
  return model.demosaic(m);
}

// ---- commands -----------------------------------------------------------------

struct MosaicArgs {
  std::string in, out;
  double sigma255 = 0.0;
  bool sigma_given = false;
  std::uint64_t seed = 0;
};

int cmd_mosaic(const MosaicArgs& a) {
  const RgbImage rgb = read_rgb(a.in);
  BayerMosaic m = mosaic(rgb);
  if (a.sigma255 < 0) throw ContractError("--sigma must be >= 0");
  m = add_gaussian_noise(m, NoiseSpec{a.sigma255 / 255.0, a.seed});
  write_mosaic(a.out, m);
  if (a.sigma_given) write_sidecar(a.out, a.sigma255, a.seed, a.in);
  return kOk;
}

struct DemosaicArgs {
  std::string in, out, checkpoint, method, ref;
  double sigma255 = 0.0;
  bool sigma_given = false;
};

int cmd_demosaic(const DemosaicArgs& a) {
  if (a.checkpoint.empty() == a.method.empty()) {
    throw CLI::ValidationError("demosaic", "give exactly one of --checkpoint or --method nn");
  }
  if (!a.method.empty() && a.method != "nn") {
    throw CLI::ValidationError("--method", "only 'nn' is available");
  }
  const BayerMosaic m = read_mosaic(a.in);
  RgbImage out = RgbImage::zeros(m.height(), m.width());
  if (!a.method.empty()) {
    out = demosaic_nn(m);
  } else {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (ck.model.config().denoise && !a.sigma_given) {
      throw ContractError("checkpoint is a joint denoising model; --sigma is required");
    }
    if (!ck.model.config().denoise && a.sigma_given) {
      throw ContractError("checkpoint is a demosaic-only model; --sigma is not accepted");
    }
    out = run_model(ck.model, m, a.sigma255);
  }
  write_rgb(a.out, out.clamped());
  if (!a.ref.empty()) {
    const RgbImage ref = read_rgb(a.ref);
    const RgbImage pred = out.clamped();
    std::cout << "psnr_db=" << psnr(pred, ref) << " ssim=" << ssim(pred, ref) << '\n';
  }
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool quiet = false;
};

RunConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  return c;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = resolve(a.config, a.overrides);
  if (!a.out_dir.empty()) cfg.paths.out_dir = a.out_dir;
  const fs::path out = cfg.paths.out_dir;
  make_dir(out);
  write_text(out / "effective_config.json", dump(cfg));

  const auto train_set = load_images(cfg.paths.train_dir);
  const auto val_set = cfg.paths.val_dir.empty() ? std::vector<RgbImage>{} : load_images(cfg.paths.val_dir);

  MfdpModel model = MfdpModel::build(cfg.model, cfg.train.seed);
  AdamWState state;
  if (!cfg.paths.init_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(cfg.paths.init_checkpoint, &cfg.model);
    model = std::move(ck.model);
    if (ck.optimizer) state = std::move(*ck.optimizer);
  }

  TrainHooks hooks;
  hooks.checkpoint = [&](std::int64_t step, const MfdpModel& m, const AdamWState& s) {
    save_checkpoint((out / ("step_" + std::to_string(step) + ".mfdp")).string(), m, &s);
    save_checkpoint((out / "last.mfdp").string(), m, &s);
  };
  std::vector<HistoryRow> history;
  hooks.progress = [&](const HistoryRow& r) {
    history.push_back(r);
    if (!a.quiet && (!std::isnan(r.val_psnr) || r.step == 1)) {
      std::cerr << "step " << r.step << " lr " << r.lr << " loss " << r.loss;
      if (!std::isnan(r.val_psnr)) std::cerr << " val_psnr " << r.val_psnr;
      std::cerr << '\n';
    }
  };
  try {
    train(model, train_set, val_set, cfg.train, cfg.loss, std::move(state), hooks);
  } catch (const TrainingDiverged&) {
    write_text(out / "history.csv", history_csv(history));
    throw;
  }
  write_text(out / "history.csv", history_csv(history));
  return kOk;
}

struct EvalArgs {
  std::string config, checkpoint, method, dataset, out_dir;
  std::vector<std::string> overrides;
  std::vector<double> sigmas{0.0};
  bool save_images = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.method.empty()) {
    throw CLI::ValidationError("eval", "give exactly one of --checkpoint or --method nn");
  }
  if (!a.method.empty() && a.method != "nn") throw CLI::ValidationError("--method", "only 'nn' is available");
  RunConfig cfg = resolve(a.config, a.overrides);
  if (!a.out_dir.empty()) cfg.paths.out_dir = a.out_dir;
  const std::string dataset = a.dataset.empty() ? cfg.paths.val_dir : a.dataset;
  const auto files = list_images(dataset);

  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint, &cfg.model);

  const fs::path out = cfg.paths.out_dir;
  make_dir(out);
  write_text(out / "effective_config.json", dump(cfg));

  MetricReport report;
  report.dataset = fs::path(dataset).filename().string();
  report.method = ck ? cfg.model.name : "nn";
  for (std::size_t i = 0; i < files.size(); ++i) {
    const RgbImage gt = read_rgb(files[i].string());
    for (std::size_t s = 0; s < a.sigmas.size(); ++s) {
      const double sigma255 = a.sigmas[s];
      if (sigma255 < 0) throw ContractError("--sigmas must be >= 0");
      const std::uint64_t seed = Rng::stream(cfg.train.seed, i * a.sigmas.size() + s).next();
      const BayerMosaic m = add_gaussian_noise(mosaic(gt), NoiseSpec{sigma255 / 255.0, seed});
      const RgbImage pred = (ck ? run_model(ck->model, m, sigma255) : demosaic_nn(m)).clamped();
      MetricRow row;
      row.image = files[i].stem().string();
      row.sigma255 = sigma255;
      row.psnr_db = psnr(pred, gt);
      row.ssim = ssim(pred, gt);
      row.ms_ssim = ms_ssim(pred.tensor(), gt.tensor(), {}, &std::cerr);
      report.rows.push_back(row);
      if (a.save_images) {
        const std::string tag = row.image + "_s" + std::to_string(static_cast<int>(sigma255));
        write_rgb((out / (tag + "_out.ppm")).string(), pred);
        Tensor diff = pred.tensor();
        for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = std::min(1.0, 4.0 * std::abs(diff[k] - gt.tensor()[k]));
        write_rgb((out / (tag + "_diff.ppm")).string(), RgbImage(std::move(diff)));
      }
    }
  }
  write_text(out / "report.csv", report.to_csv());
  write_text(out / "report.md", report.to_markdown());
  for (double s : a.sigmas) {
    const MetricRow m = report.mean(s);
    std::cout << "sigma255=" << s << " mean_psnr_db=" << m.psnr_db << " mean_ssim=" << m.ssim
              << " mean_ms_ssim=" << m.ms_ssim << '\n';
  }
  return kOk;
}

struct SynthArgs {
  std::string dir;
  int count = 10;
  int size = 128;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1 || a.size < 2 || a.size % 2) throw ContractError("synth: need count >= 1 and an even size");
  make_dir(a.dir);
  const auto images = synth_dataset(a.count, a.size, a.size, a.seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%03zu.ppm", i);
    write_rgb((fs::path(a.dir) / name).string(), images[i]);
  }
  return kOk;
}

int cmd_params(const std::string& preset, const std::string& config) {
  const ModelConfig cfg = config.empty() ? ModelConfig::preset(preset) : load_run_config(config).model;
  const MfdpModel m = MfdpModel::build(cfg, 0);
  std::cout << cfg.name << '\n' << format_param_table(m);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MFDP demosaicking: capture simulation, training and evaluation"};
  app.require_subcommand(1);

  MosaicArgs mo;
  auto* c_mosaic = app.add_subcommand("mosaic", "Bayer-sample an RGB image (optionally add noise)");
  c_mosaic->add_option("input", mo.in, "RGB input (.ppm/.pfm)")->required();
  c_mosaic->add_option("output", mo.out, "mosaic output (.pgm/.pfm)")->required();
  auto* mo_sigma = c_mosaic->add_option("--sigma", mo.sigma255, "noise std in 8-bit units");
  c_mosaic->add_option("--seed", mo.seed, "noise seed");

  DemosaicArgs de;
  auto* c_demosaic = app.add_subcommand("demosaic", "Reconstruct RGB from a mosaic");
  c_demosaic->add_option("input", de.in, "mosaic input (.pgm/.pfm)")->required();
  c_demosaic->add_option("output", de.out, "RGB output (.ppm/.pfm)")->required();
  c_demosaic->add_option("--checkpoint", de.checkpoint, "trained model");
  c_demosaic->add_option("--method", de.method, "built-in method: nn");
  auto* de_sigma = c_demosaic->add_option("--sigma", de.sigma255, "noise level in 8-bit units (denoise models)");
  c_demosaic->add_option("--ref", de.ref, "reference RGB; prints PSNR/SSIM");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model from a JSON run config");
  c_train->add_option("config", tr.config, "run config (.json)")->required();
  c_train->add_option("--set", tr.overrides, "override, section.key=value");
  c_train->add_option("--out", tr.out_dir, "output directory (paths.out_dir)");
  c_train->add_flag("--quiet", tr.quiet, "no progress lines");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate on a directory of .ppm images");
  c_eval->add_option("config", ev.config, "run config (.json)")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "trained model");
  c_eval->add_option("--method", ev.method, "built-in method: nn");
  c_eval->add_option("--dataset", ev.dataset, "image directory (default paths.val_dir)");
  c_eval->add_option("--sigmas", ev.sigmas, "noise levels in 8-bit units")->delimiter(',');
  c_eval->add_option("--out", ev.out_dir, "output directory (paths.out_dir)");
  c_eval->add_option("--set", ev.overrides, "override, section.key=value");
  c_eval->add_flag("--save-images", ev.save_images, "write outputs and difference images");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Write a procedural textured dataset");
  c_synth->add_option("dir", sy.dir, "output directory")->required();
  c_synth->add_option("--count", sy.count, "number of images");
  c_synth->add_option("--size", sy.size, "image side in pixels (even)");
  c_synth->add_option("--seed", sy.seed, "dataset seed");

  std::string preset = "MFDP", pconfig;
  auto* c_params = app.add_subcommand("params", "Print the parameter breakdown of a model");
  c_params->add_option("--preset", preset, "MFDP, MFDP-1, MFDP-2, MFDP-3 or tiny");
  c_params->add_option("--config", pconfig, "run config whose model section to use");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_mosaic) {
      mo.sigma_given = mo_sigma->count() > 0;
      return cmd_mosaic(mo);
    }
    if (*c_demosaic) {
      de.sigma_given = de_sigma->count() > 0;
      return cmd_demosaic(de);
    }
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(ev);
    if (*c_synth) return cmd_synth(sy);
    if (*c_params) return cmd_params(preset, pconfig);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == CheckpointError::Kind::Io ? kIo : kContract;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContract;
  }
  return kUsage;
}
