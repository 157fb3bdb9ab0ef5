#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mfdp/cfa.hpp"
#include "mfdp/checkpoint.hpp"
#include "mfdp/image_io.hpp"
#include "mfdp/synth.hpp"
#include "support/oracles.hpp"

using namespace mfdp;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("mfdp_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }

  /// Runs the CLI with stdout captured into `out` (if given); returns the exit code.
  int run(const std::string& args, std::string* out = nullptr) const {
    const std::string capture = (dir / "stdout.txt").string();
    const std::string cmd = std::string(MFDP_CLI_PATH) + " " + args + " > " + capture + " 2> " +
                            (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (out) {
      std::ifstream f(capture);
      std::stringstream ss;
      ss << f.rdbuf();
      *out = ss.str();
    }
    return WEXITSTATUS(status);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli usage errors exit with 1") {
  Workspace w;
  CHECK(w.run("") == 1);
  CHECK(w.run("frobnicate") == 1);
  CHECK(w.run("mosaic onlyone") == 1);
  CHECK(w.run("demosaic a.pgm b.ppm") == 1);  // neither --checkpoint nor --method
}

TEST_CASE("cli mosaic and nn demosaic") {
  Workspace w;
  const RgbImage img = synth_texture(32, 48, 3);
  write_rgb(w / "in.ppm", img);
  REQUIRE(w.run("mosaic " + w / "in.ppm " + w / "m.pgm") == 0);
  const BayerMosaic m = read_mosaic(w / "m.pgm");
  CHECK(m.tensor() == mosaic(img).tensor());
  REQUIRE(w.run("mosaic " + w / "in.ppm " + w / "m0.pgm --sigma 0") == 0);
  CHECK(slurp(w / "m0.pgm") == slurp(w / "m.pgm"));
  CHECK(fs::exists(w / "m0.pgm.json"));
  REQUIRE(w.run("mosaic " + w / "in.ppm " + w / "n.pfm --sigma 10 --seed 4") == 0);
  CHECK(!(read_image(w / "n.pfm") == m.tensor()));

  std::string out;
  REQUIRE(w.run("demosaic " + w / "m.pgm " + w / "nn.ppm --method nn --ref " + w / "in.ppm", &out) == 0);
  const RgbImage nn = testing::nn_demosaic_oracle(m);
  CHECK(read_rgb(w / "nn.ppm").tensor() == nn.tensor());
  const double expect = testing::psnr_oracle(nn.tensor(), img.tensor());
  const auto pos = out.find("psnr_db=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(out.substr(pos + 8)) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("cli exit codes for io, contract and numeric errors") {
  Workspace w;
  CHECK(w.run("mosaic " + w / "missing.ppm " + w / "o.pgm") == 2);
  CHECK(w.run("demosaic " + w / "missing.pgm " + w / "o.ppm --method nn") == 2);
  write_image(w / "odd.ppm", Tensor(Shape{3, 5, 6}));
  CHECK(w.run("mosaic " + w / "odd.ppm " + w / "o.pgm") == 3);

  write_mosaic(w / "m.pgm", mosaic(synth_texture(32, 32, 1)));
  MfdpModel plain = MfdpModel::build(ModelConfig::tiny(), 0);
  save_checkpoint(w / "plain.mfdp", plain);
  ModelConfig dn = ModelConfig::tiny();
  dn.denoise = true;
  save_checkpoint(w / "dn.mfdp", MfdpModel::build(dn, 0));
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "dn.mfdp") == 3);
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "plain.mfdp --sigma 5") == 3);
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "dn.mfdp --sigma 5") == 0);
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "missing.mfdp") == 2);
  {
    std::string bytes = slurp(w / "plain.mfdp");
    bytes[bytes.size() - 9] ^= 1;
    std::ofstream(w / "broken.mfdp", std::ios::binary) << bytes;
  }
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "broken.mfdp") == 3);

  MfdpModel bad = MfdpModel::build(ModelConfig::tiny(), 0);
  bad.predictor_conv().weight.value[0] = std::numeric_limits<double>::infinity();
  save_checkpoint(w / "inf.mfdp", bad);
  CHECK(w.run("demosaic " + w / "m.pgm " + w / "o.ppm --checkpoint " + w / "inf.mfdp") == 4);

  std::ofstream(w / "cfg.json") << R"({"model": {"preset": "tiny"}, "train": {"bogus": 1}})";
  CHECK(w.run("params --config " + w / "cfg.json") == 3);
  CHECK(w.run("params --config " + w / "nothere.json") == 2);
}

TEST_CASE("cli eval is deterministic and writes the report schema") {
  Workspace w;
  REQUIRE(w.run("synth " + w / "data --count 2 --size 32 --seed 5") == 0);
  std::ofstream(w / "cfg.json") << R"({"model": {"preset": "tiny"}, "train": {"seed": 3}})";
  const std::string base = "eval " + w / "cfg.json --method nn --dataset " + w / "data --sigmas 0,5";
  REQUIRE(w.run(base + " --out " + w / "e1") == 0);
  REQUIRE(w.run(base + " --out " + w / "e2") == 0);
  const std::string csv = slurp(w / "e1/report.csv");
  CHECK(csv == slurp(w / "e2/report.csv"));
  CHECK(csv.rfind("image,sigma255,psnr_db,ssim,ms_ssim\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(fs::exists(w / "e1/report.md"));
  CHECK(fs::exists(w / "e1/effective_config.json"));
}

TEST_CASE("cli train writes checkpoints and resumes") {
  Workspace w;
  REQUIRE(w.run("synth " + w / "data --count 2 --size 64 --seed 5") == 0);
  std::ofstream(w / "cfg.json") << R"({"model": {"preset": "tiny"},
    "train": {"batch_size": 1, "patch_size": 32, "epochs": 4, "val_every": 2, "val_patches": 1,
              "checkpoint_every": 2},
    "paths": {"train_dir": ")" + w / "data" + R"("}})";
  REQUIRE(w.run("train " + w / "cfg.json --quiet --out " + w / "run") == 0);
  CHECK(fs::exists(w / "run/step_2.mfdp"));
  CHECK(fs::exists(w / "run/last.mfdp"));
  CHECK(fs::exists(w / "run/effective_config.json"));
  const std::string hist = slurp(w / "run/history.csv");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 5);

  REQUIRE(w.run("train " + w / "cfg.json --quiet --out " + w / "resumed --set paths.init_checkpoint=" +
                w / "run/step_2.mfdp") == 0);
  CHECK(slurp(w / "resumed/last.mfdp") == slurp(w / "run/last.mfdp"));

  std::string out;
  REQUIRE(w.run("params --preset MFDP", &out) == 0);
  CHECK(out.find("total") != std::string::npos);
}
