#pragma once

#include "refseg/synthgen/types.hpp"
#include "refseg/synthgen/vocab.hpp"

namespace refseg::train {

// Horizontal flip: frames and masks mirror about the vertical axis and the
// direction words swap ("left" <-> "right"). An exact involution on the
// stored byte representation.
inline synthgen::ReferringSample augment_flip(const synthgen::ReferringSample& s) {
  synthgen::ReferringSample out = s;
  const int w = s.width;
  for (int t = 0; t < s.t; ++t)
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y) {
        const std::size_t row =
            ((static_cast<std::size_t>(t) * s.channels + c) * s.height + y) * w;
        for (int x = 0; x < w; ++x) out.frames[row + x] = s.frames[row + (w - 1 - x)];
      }
  for (int i = 0; i < s.num_instances(); ++i) {
    auto& m = out.gt_masks[static_cast<std::size_t>(i)];
    const auto& src = s.gt_masks[static_cast<std::size_t>(i)];
    m = synthgen::BitMasks::empty(src.frames, src.height, src.width);
    for (int f = 0; f < src.frames; ++f)
      for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
          if (src.get(f, y, w - 1 - x)) m.set(f, y, x, true);
  }
  const int left = synthgen::word_id("left");
  const int right = synthgen::word_id("right");
  for (int& id : out.token_ids) {
    if (id == left) id = right;
    else if (id == right) id = left;
  }
  return out;
}

}  // namespace refseg::train
