// Python bindings. Images are float64 numpy arrays in channel-first layout:
// RGB as 3 x H x W, Bayer mosaics as H x W.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mfdp/cfa.hpp"
#include "mfdp/checkpoint.hpp"
#include "mfdp/image_io.hpp"
#include "mfdp/metrics.hpp"
#include "mfdp/model.hpp"
#include "mfdp/synth.hpp"

namespace py = pybind11;
using namespace mfdp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.ptr(), t.ptr() + t.size(), out.mutable_data());
  return out;
}

RgbImage rgb_of(const Array& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw ContractError("expected a 3 x H x W array");
  return RgbImage(to_tensor(a));
}

BayerMosaic bayer_of(const Array& a) {
  if (a.ndim() != 2) throw ContractError("expected an H x W mosaic");
  return BayerMosaic(to_tensor(a).reshaped({1, a.shape(0), a.shape(1)}));
}

Array mosaic_array(const BayerMosaic& m) { return to_array(m.tensor().reshaped({m.height(), m.width()})); }

}  // namespace

PYBIND11_MODULE(mfdp, m) {
  m.doc() = "Bayer demosaicking with multi-scale feature networks";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("mosaic", [](const Array& rgb) { return mosaic_array(mosaic(rgb_of(rgb))); }, py::arg("rgb"),
        "RGGB Bayer sampling of a 3 x H x W image.");
  m.def(
      "add_noise",
      [](const Array& bayer, double sigma, std::uint64_t seed) {
        return mosaic_array(add_gaussian_noise(bayer_of(bayer), NoiseSpec{sigma, seed}));
      },
      py::arg("bayer"), py::arg("sigma"), py::arg("seed") = 0, "Gaussian noise, sigma in [0, 1] units.");
  m.def("demosaic_nn", [](const Array& bayer) { return to_array(demosaic_nn(bayer_of(bayer)).tensor()); },
        py::arg("bayer"), "Nearest-neighbour demosaicking.");
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });
  m.def("ms_ssim", [](const Array& a, const Array& b) { return ms_ssim(to_tensor(a), to_tensor(b)); });
  m.def("synth_texture", [](std::int64_t h, std::int64_t w, std::uint64_t seed) {
    return to_array(synth_texture(h, w, seed).tensor());
  }, py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def("read_image", [](const std::string& path) { return to_array(read_image(path)); });
  m.def("write_image", [](const std::string& path, const Array& img) { write_image(path, to_tensor(img)); });

  py::class_<MfdpModel>(m, "Model")
      .def_static("build", [](const std::string& preset, std::uint64_t seed) {
        return MfdpModel::build(ModelConfig::preset(preset), seed);
      }, py::arg("preset") = "tiny", py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_checkpoint(path).model; })
      .def("save", [](const MfdpModel& self, const std::string& path) { save_checkpoint(path, self); })
      .def_property_readonly("name", [](const MfdpModel& self) { return self.config().name; })
      .def_property_readonly("denoise", [](const MfdpModel& self) { return self.config().denoise; })
      .def("param_count", &MfdpModel::param_count)
      .def("param_table", &MfdpModel::param_table)
      .def(
          "demosaic",
          [](MfdpModel& self, const Array& bayer, std::optional<double> sigma) {
            return to_array(self.demosaic(bayer_of(bayer), sigma).tensor());
          },
          py::arg("bayer"), py::arg("sigma") = py::none());
}
