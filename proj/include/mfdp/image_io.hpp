#pragma once

// Netpbm (P5/P6, maxval 255) and PFM (32-bit float) image files.

#include <stdexcept>
#include <string>

#include "mfdp/cfa.hpp"

namespace mfdp {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit code of a [0, 1] value: floor(255 * clamp(v, 0, 1) + 0.5).
int encode8(double v);

/// Reads P5, P6, Pf or PF; returns a C x H x W tensor with C = 1 or 3.
Tensor read_image(const std::string& path);
/// Writes C x H x W (C = 1 or 3): P5/P6 for ".pgm"/".ppm", Pf/PF for ".pfm".
void write_image(const std::string& path, const Tensor& image);

RgbImage read_rgb(const std::string& path);
BayerMosaic read_mosaic(const std::string& path);
inline void write_rgb(const std::string& path, const RgbImage& img) { write_image(path, img.tensor()); }
inline void write_mosaic(const std::string& path, const BayerMosaic& m) { write_image(path, m.tensor()); }

}  // namespace mfdp
