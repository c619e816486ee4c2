#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "refseg/core/tensor.hpp"

namespace refseg::synthgen {

enum class ShapeKind : std::uint8_t { circle = 0, square = 1, triangle = 2 };
enum class Color : std::uint8_t { red = 0, green = 1, blue = 2, yellow = 3 };
enum class Motion : std::uint8_t { left = 0, right = 1, up = 2, down = 3, still = 4 };

inline const char* to_word(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    default: return "triangle";
  }
}

inline const char* to_word(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    default: return "yellow";
  }
}

inline const char* to_word(Motion m) {
  switch (m) {
    case Motion::left: return "left";
    case Motion::right: return "right";
    case Motion::up: return "up";
    case Motion::down: return "down";
    default: return "still";
  }
}

// start position is the top-left corner of the bounding box at frame 0.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::square;
  Color color = Color::red;
  Motion motion = Motion::still;
  int x = 0;
  int y = 0;
  int size = 10;   // bounding-box side, >= 6
  int speed = 0;   // px/frame, >= 1 unless still
};

inline int velocity_x(const ShapeSpec& s) {
  if (s.motion == Motion::left) return -s.speed;
  if (s.motion == Motion::right) return s.speed;
  return 0;
}

inline int velocity_y(const ShapeSpec& s) {
  if (s.motion == Motion::up) return -s.speed;
  if (s.motion == Motion::down) return s.speed;
  return 0;
}

// Mirror about the vertical axis of a canvas of width w.
inline ShapeSpec mirrored(ShapeSpec s, int w) {
  s.x = w - s.x - s.size;
  if (s.motion == Motion::left) s.motion = Motion::right;
  else if (s.motion == Motion::right) s.motion = Motion::left;
  return s;
}

// Bit-packed binary mask sequence, one frame per `words_per_frame` block.
struct BitMasks {
  int frames = 0, height = 0, width = 0;
  std::vector<std::uint64_t> words;

  static BitMasks empty(int frames, int height, int width) {
    BitMasks m;
    m.frames = frames;
    m.height = height;
    m.width = width;
    m.words.assign(static_cast<std::size_t>(frames) * m.words_per_frame(), 0);
    return m;
  }

  std::int64_t words_per_frame() const {
    return (static_cast<std::int64_t>(height) * width + 63) / 64;
  }

  bool get(int f, int y, int x) const {
    const std::int64_t bit = static_cast<std::int64_t>(y) * width + x;
    return (words[f * words_per_frame() + bit / 64] >> (bit % 64)) & 1u;
  }

  void set(int f, int y, int x, bool v) {
    const std::int64_t bit = static_cast<std::int64_t>(y) * width + x;
    std::uint64_t& wd = words[f * words_per_frame() + bit / 64];
    if (v)
      wd |= (std::uint64_t{1} << (bit % 64));
    else
      wd &= ~(std::uint64_t{1} << (bit % 64));
  }

  std::int64_t count(int f) const {
    std::int64_t n = 0;
    const std::int64_t wpf = words_per_frame();
    for (std::int64_t i = f * wpf; i < (f + 1) * wpf; ++i) n += __builtin_popcountll(words[i]);
    return n;
  }

  bool frame_empty(int f) const { return count(f) == 0; }

  bool operator==(const BitMasks&) const = default;
};

// One clip: frames over the whole window, supervision on the frames of
// interest. Pixels are stored as bytes; intensity = byte / 255.
struct ReferringSample {
  int t = 0, channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> frames;            // [T,C,H,W]
  std::vector<int> frames_of_interest;         // sorted indices into 0..T-1
  std::vector<int> token_ids;                  // padded to l_max
  int token_len = 0;                           // valid prefix length
  std::vector<BitMasks> gt_masks;              // per instance, [TI,H,W]
  std::vector<std::vector<std::uint8_t>> gt_ref;  // per instance, TI flags
  int referred_index = -1;

  int num_interest() const { return static_cast<int>(frames_of_interest.size()); }
  int num_instances() const { return static_cast<int>(gt_masks.size()); }

  template <typename Real>
  Tensor<Real> frames_real() const {
    Tensor<Real> out({t, channels, height, width});
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<Real>(frames[static_cast<std::size_t>(i)]) / Real(255);
    return out;
  }

  bool operator==(const ReferringSample&) const = default;
};

struct GeneratorConfig {
  int t = 8;
  int height = 96, width = 96;
  std::string ti_policy = "all";  // all | even | center
  int distractors_min = 1;
  int distractors_max = 3;
  double exit_prob = 0.15;
  double static_prob = 0.2;
  int size_min = 12, size_max = 30;
  int speed_min = 2, speed_max = 4;
  bool motion_subset = false;  // referent always moving + an appearance twin distractor
  int l_max = 5;
  int max_retries = 200;
};

struct DatasetManifest {
  int sample_count = 0;
  std::string split;
  int height = 0, width = 0, channels = 3, t = 0, l_max = 5;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  GeneratorConfig config;
};

}  // namespace refseg::synthgen
