#pragma once

#include <cmath>

#include "refseg/core/tensor.hpp"

namespace refseg::model {

// Fixed 2D sine positional encodings for the visual tokens (text tokens get
// none). Channel layout: first D/2 channels encode the row, last D/2 the
// column; within each half, pair i uses frequency 10000^(2*floor(i/2)/(D/2))
// with sin on even and cos on odd channels. Row-major token order.
template <typename Real>
Tensor<Real> sine_positions_2d(int h, int w, int d) {
  if (d % 4 != 0) throw std::invalid_argument("sine_positions_2d: d must be divisible by 4");
  const int half = d / 2;
  Tensor<Real> out({h * w, d});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Real* row = out.data() + (static_cast<std::int64_t>(y) * w + x) * d;
      for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, 2.0 * (i / 2) / half);
        const double vy = y / freq;
        const double vx = x / freq;
        row[i] = static_cast<Real>(i % 2 == 0 ? std::sin(vy) : std::cos(vy));
        row[half + i] = static_cast<Real>(i % 2 == 0 ? std::sin(vx) : std::cos(vx));
      }
    }
  }
  return out;
}

}  // namespace refseg::model
