#pragma once

#include <cstdint>

#include "gwnet/glyphdata.hpp"

namespace gwnet {

struct ToyOptions {
  int M = 3;        // prototype fonts
  int holdout = 1;  // extra writer styles never used as training targets
  int size = 64;
};

/// Synthetic corpus of stroke-composed glyphs. Each content is a fixed set
/// of strokes drawn from `seed`; each style warps and inks the strokes its
/// own way (slant, scale, weight, nib contrast, wobble).
///
/// Style ids: 1..I training writers, I+1..I+holdout held-out writers,
/// then M prototype fonts.
GlyphPack make_toy_pack(std::uint64_t seed, int I, int J, const ToyOptions& opt = {});

}  // namespace gwnet
