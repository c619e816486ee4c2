#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/synthgen/types.hpp"

namespace refseg::synthgen {

inline std::array<std::uint8_t, 3> color_rgb(Color c) {
  switch (c) {
    case Color::red: return {230, 25, 25};
    case Color::green: return {25, 200, 25};
    case Color::blue: return {25, 25, 230};
    default: return {230, 230, 25};
  }
}

inline constexpr std::array<std::uint8_t, 3> kBackground = {26, 26, 26};

// Pixel membership inside the shape's bounding box, (ix, iy) in [0, size).
// All predicates are symmetric under ix -> size-1-ix so that a mirrored
// spec rasterizes to the exact mirror image.
inline bool shape_covers(ShapeKind kind, int size, int ix, int iy) {
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::circle: {
      const double c = (size - 1) * 0.5;
      const double dx = ix - c, dy = iy - c;
      const double r = size * 0.5;
      return dx * dx + dy * dy <= r * r;
    }
    default: {  // triangle: apex up, full-width base at the bottom row
      return std::abs(2 * ix - (size - 1)) <= iy;
    }
  }
}

struct FrameRender {
  std::vector<std::uint8_t> image;             // [C,H,W], C = 3
  std::vector<std::vector<std::uint8_t>> masks;  // per shape [H,W], visible pixels only
};

// Rasterizes all shapes at frame t. Later-listed shapes occlude earlier
// ones; each mask holds only the pixels where that shape is topmost.
inline FrameRender render_frame(const std::vector<ShapeSpec>& specs, int t, int height, int width) {
  if (t < 0) throw std::invalid_argument("render_frame: negative frame index");
  FrameRender out;
  out.image.assign(static_cast<std::size_t>(3) * height * width, 0);
  for (int c = 0; c < 3; ++c)
    std::fill_n(out.image.begin() + static_cast<std::size_t>(c) * height * width,
                static_cast<std::size_t>(height) * width, kBackground[static_cast<std::size_t>(c)]);

  std::vector<int> owner(static_cast<std::size_t>(height) * width, -1);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ShapeSpec& s = specs[i];
    const int sx = s.x + velocity_x(s) * t;
    const int sy = s.y + velocity_y(s) * t;
    for (int iy = 0; iy < s.size; ++iy) {
      const int py = sy + iy;
      if (py < 0 || py >= height) continue;
      for (int ix = 0; ix < s.size; ++ix) {
        const int px = sx + ix;
        if (px < 0 || px >= width) continue;
        if (shape_covers(s.kind, s.size, ix, iy)) owner[static_cast<std::size_t>(py) * width + px] = static_cast<int>(i);
      }
    }
  }

  out.masks.assign(specs.size(), std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0));
  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      const int o = owner[static_cast<std::size_t>(py) * width + px];
      if (o < 0) continue;
      out.masks[static_cast<std::size_t>(o)][static_cast<std::size_t>(py) * width + px] = 1;
      const auto rgb = color_rgb(specs[static_cast<std::size_t>(o)].color);
      for (int c = 0; c < 3; ++c)
        out.image[(static_cast<std::size_t>(c) * height + py) * width + px] = rgb[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

}  // namespace refseg::synthgen
