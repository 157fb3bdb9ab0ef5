#include "mfdp/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mfdp {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
  return tail == suffix;
}

// Header tokens with '#' comments skipped; consumes the single whitespace
// byte after the last token.
std::string token(std::istream& in, const std::string& path) {
  std::string t;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      while (in.get(c) && c != '\n') {}
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!t.empty()) return t;
      continue;
    }
    t.push_back(c);
  }
  if (t.empty()) throw IoError(path + ": truncated header");
  return t;
}

long number(std::istream& in, const std::string& path) {
  const std::string t = token(in, path);
  try {
    std::size_t used = 0;
    const long v = std::stol(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError(path + ": bad header field '" + t + "'");
}

}  // namespace

int encode8(double v) {
  return static_cast<int>(std::floor(255.0 * std::clamp(v, 0.0, 1.0) + 0.5));
}

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::string magic = token(in, path);
  if (magic == "P5" || magic == "P6") {
    const long w = number(in, path), h = number(in, path), maxval = number(in, path);
    if (w <= 0 || h <= 0) throw IoError(path + ": bad dimensions");
    if (maxval <= 0 || maxval > 255) throw IoError(path + ": only 8-bit maxval is supported");
    const std::int64_t C = magic == "P6" ? 3 : 1;
    std::string raw(static_cast<std::size_t>(C * w * h), '\0');
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
      throw IoError(path + ": truncated pixel data");
    }
    Tensor t(Shape{C, h, w});
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < C; ++c)
          t[static_cast<std::size_t>((c * h + y) * w + x)] =
              static_cast<unsigned char>(raw[static_cast<std::size_t>((y * w + x) * C + c)]) /
              static_cast<double>(maxval);
    return t;
  }
  if (magic == "PF" || magic == "Pf") {
    const long w = number(in, path), h = number(in, path);
    const double scale = std::stod(token(in, path));
    if (w <= 0 || h <= 0) throw IoError(path + ": bad dimensions");
    const bool little = scale < 0;
    const std::int64_t C = magic == "PF" ? 3 : 1;
    std::string raw(static_cast<std::size_t>(4 * C * w * h), '\0');
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
      throw IoError(path + ": truncated pixel data");
    }
    Tensor t(Shape{C, h, w});
    for (std::int64_t row = 0; row < h; ++row) {
      const std::int64_t y = h - 1 - row;  // PFM stores bottom row first
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < C; ++c) {
          const char* p = raw.data() + 4 * ((row * w + x) * C + c);
          std::uint32_t bits = 0;
          for (int i = 0; i < 4; ++i) {
            const int shift = little ? 8 * i : 8 * (3 - i);
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << shift;
          }
          t[static_cast<std::size_t>((c * h + y) * w + x)] = std::bit_cast<float>(bits);
        }
    }
    return t;
  }
  throw IoError(path + ": unsupported format '" + magic + "' (expected P5, P6, Pf or PF)");
}

void write_image(const std::string& path, const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ContractError("write_image: expected 1 x H x W or 3 x H x W, got " + to_string(t.shape()));
  }
  const std::int64_t C = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::ostringstream os;
  if (ends_with(path, ".pfm")) {
    os << (C == 3 ? "PF" : "Pf") << '\n' << w << ' ' << h << "\n-1.0\n";
    for (std::int64_t row = 0; row < h; ++row) {
      const std::int64_t y = h - 1 - row;
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < C; ++c) {
          const auto bits = std::bit_cast<std::uint32_t>(
              static_cast<float>(t[static_cast<std::size_t>((c * h + y) * w + x)]));
          for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }
  } else {
    const bool pgm = ends_with(path, ".pgm");
    if (!pgm && !ends_with(path, ".ppm")) {
      throw IoError(path + ": unknown extension (use .ppm, .pgm or .pfm)");
    }
    if (pgm != (C == 1)) {
      throw ContractError(path + ": " + std::to_string(C) + "-channel image does not fit " +
                          (pgm ? "PGM" : "PPM"));
    }
    os << (pgm ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < C; ++c)
          os.put(static_cast<char>(encode8(t[static_cast<std::size_t>((c * h + y) * w + x)])));
  }
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = os.str();
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("cannot write " + path);
  }
}

RgbImage read_rgb(const std::string& path) {
  Tensor t = read_image(path);
  if (t.dim(0) != 3) throw IoError(path + ": expected an RGB image");
  if (t.dim(1) % 2 || t.dim(2) % 2) {
    throw ContractError(path + ": image extents " + std::to_string(t.dim(1)) + "x" +
                        std::to_string(t.dim(2)) + " must be even");
  }
  return RgbImage(std::move(t));
}

BayerMosaic read_mosaic(const std::string& path) {
  Tensor t = read_image(path);
  if (t.dim(0) != 1) throw IoError(path + ": expected a single-channel mosaic");
  if (t.dim(1) % 2 || t.dim(2) % 2) {
    throw ContractError(path + ": mosaic extents " + std::to_string(t.dim(1)) + "x" +
                        std::to_string(t.dim(2)) + " must be even");
  }
  return BayerMosaic(std::move(t));
}

}  // namespace mfdp
