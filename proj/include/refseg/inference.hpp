#pragma once

#include <vector>

#include "refseg/core/tensor.hpp"
#include "refseg/synthgen/types.hpp"

namespace refseg::inference {

struct Selection {
  int winner = 0;
  std::vector<double> scores;     // per sequence: sum over frames of p(referred)
  double confidence = 0.0;        // mean positive probability of the winner
  synthgen::BitMasks masks;       // winner's mask sequence, binarized at 0.5
};

// Temporal segment voting: every frame votes with its positive reference
// probability; the sequence with the highest summed score wins (lowest
// index on ties). Masks are thresholded sigmoid probabilities.
template <typename Real>
Selection tsvs_select(const Tensor<Real>& mask_probs, const Tensor<Real>& ref_probs) {
  const int F = ref_probs.dim(0), nq = ref_probs.dim(1);
  const int h = mask_probs.dim(2), w = mask_probs.dim(3);
  Selection sel;
  sel.scores.assign(static_cast<std::size_t>(nq), 0.0);
  for (int q = 0; q < nq; ++q)
    for (int f = 0; f < F; ++f)
      sel.scores[static_cast<std::size_t>(q)] += static_cast<double>(ref_probs.at(f, q, 1));
  sel.winner = 0;
  for (int q = 1; q < nq; ++q)
    if (sel.scores[static_cast<std::size_t>(q)] > sel.scores[static_cast<std::size_t>(sel.winner)])
      sel.winner = q;
  sel.confidence = sel.scores[static_cast<std::size_t>(sel.winner)] / F;

  sel.masks = synthgen::BitMasks::empty(F, h, w);
  const std::int64_t npix = static_cast<std::int64_t>(h) * w;
  for (int f = 0; f < F; ++f) {
    const Real* p = mask_probs.data() + (static_cast<std::int64_t>(f) * nq + sel.winner) * npix;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (p[static_cast<std::int64_t>(y) * w + x] > Real(0.5)) sel.masks.set(f, y, x, true);
  }
  return sel;
}

}  // namespace refseg::inference
