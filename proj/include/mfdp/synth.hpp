#pragma once

// Procedural test imagery: smooth colour ramps, anti-aliased shapes and
// oriented gratings, quantized to 8-bit levels so files round-trip exactly.

#include <cstdint>
#include <vector>

#include "mfdp/cfa.hpp"

namespace mfdp {

RgbImage synth_texture(std::int64_t height, std::int64_t width, std::uint64_t seed);
/// Image i uses seed stream (seed, i).
std::vector<RgbImage> synth_dataset(int count, std::int64_t height, std::int64_t width,
                                    std::uint64_t seed);

}  // namespace mfdp
