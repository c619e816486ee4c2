#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/core/rng.hpp"
#include "refseg/synthgen/expression.hpp"
#include "refseg/synthgen/render.hpp"
#include "refseg/synthgen/types.hpp"

namespace refseg::synthgen {

inline std::uint64_t config_fingerprint(const GeneratorConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_i = [&h](std::int64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  auto mix_d = [&h](double v) { h = fnv1a64(&v, sizeof(v), h); };
  mix_i(c.t);
  mix_i(c.height);
  mix_i(c.width);
  h = fnv1a64(c.ti_policy.data(), c.ti_policy.size(), h);
  mix_i(c.distractors_min);
  mix_i(c.distractors_max);
  mix_d(c.exit_prob);
  mix_d(c.static_prob);
  mix_i(c.size_min);
  mix_i(c.size_max);
  mix_i(c.speed_min);
  mix_i(c.speed_max);
  mix_i(c.motion_subset ? 1 : 0);
  mix_i(c.l_max);
  mix_i(c.max_retries);
  return h;
}

inline std::vector<int> interest_frames(const GeneratorConfig& cfg) {
  std::vector<int> idx;
  if (cfg.ti_policy == "all") {
    for (int i = 0; i < cfg.t; ++i) idx.push_back(i);
  } else if (cfg.ti_policy == "even") {
    for (int i = 0; i < cfg.t; i += 2) idx.push_back(i);
  } else if (cfg.ti_policy == "center") {
    idx.push_back(cfg.t / 2);
  } else {
    throw ConfigError("unknown ti_policy: " + cfg.ti_policy);
  }
  return idx;
}

struct GeneratedSample {
  ReferringSample sample;
  std::vector<ShapeSpec> specs;  // z-order; referent last (topmost)
  bool exits = false;
};

namespace detail {

inline void validate(const GeneratorConfig& cfg) {
  if (cfg.t < 1) throw ConfigError("generator: t must be >= 1");
  if (cfg.height % 4 != 0 || cfg.width % 4 != 0 || cfg.height < 16 || cfg.width < 16)
    throw ConfigError("generator: height/width must be multiples of 4 and >= 16");
  if (cfg.size_min < 6) throw ConfigError("generator: size_min must be >= 6");
  if (cfg.size_max < cfg.size_min) throw ConfigError("generator: size range empty");
  if (cfg.speed_min < 1 || cfg.speed_max < cfg.speed_min)
    throw ConfigError("generator: speed range invalid");
  if (cfg.distractors_min < 0 || cfg.distractors_max > 3 ||
      cfg.distractors_max < cfg.distractors_min)
    throw ConfigError("generator: distractor count must lie in 0..3");
  if (cfg.motion_subset && cfg.distractors_max < 1)
    throw ConfigError("generator: motion_subset needs at least one distractor");
  if (cfg.l_max < 5) throw ConfigError("generator: l_max must be >= 5");
  if (cfg.size_max > cfg.width - 2 || cfg.size_max > cfg.height - 2)
    throw ConfigError("generator: size_max too large for canvas");
}

inline Motion random_direction(Rng& rng) {
  return static_cast<Motion>(rng.uniform_int(0, 3));
}

// Start coordinate ranges keeping the trajectory fully on-canvas for all
// frames 0..t-1 (per axis).
inline int inside_start(Rng& rng, int extent, int size, int vel, int t) {
  const int travel = vel * (t - 1);
  int lo = 0, hi = extent - size;
  if (travel > 0) hi -= travel;
  if (travel < 0) lo -= travel;
  if (lo > hi) return -1;
  return static_cast<int>(rng.uniform_int(lo, hi));
}

// Places a moving shape so that it is fully inside at frame 0 and fully
// outside the canvas by frame t-1.
inline bool place_exiting(Rng& rng, ShapeSpec& s, const GeneratorConfig& cfg) {
  if (cfg.t < 2) return false;
  const int travel = s.speed * (cfg.t - 1);
  if (travel - 1 < cfg.size_min) return false;
  s.size = static_cast<int>(rng.uniform_int(cfg.size_min, std::min(cfg.size_max, travel - 1)));
  const int W = cfg.width, H = cfg.height;
  switch (s.motion) {
    case Motion::left: {
      const int hi = std::min(W - s.size, travel - s.size);
      if (hi < 0) return false;
      s.x = static_cast<int>(rng.uniform_int(0, hi));
      s.y = static_cast<int>(rng.uniform_int(0, H - s.size));
      return true;
    }
    case Motion::right: {
      const int lo = std::max(0, W - travel);
      if (lo > W - s.size) return false;
      s.x = static_cast<int>(rng.uniform_int(lo, W - s.size));
      s.y = static_cast<int>(rng.uniform_int(0, H - s.size));
      return true;
    }
    case Motion::up: {
      const int hi = std::min(H - s.size, travel - s.size);
      if (hi < 0) return false;
      s.y = static_cast<int>(rng.uniform_int(0, hi));
      s.x = static_cast<int>(rng.uniform_int(0, W - s.size));
      return true;
    }
    case Motion::down: {
      const int lo = std::max(0, H - travel);
      if (lo > H - s.size) return false;
      s.y = static_cast<int>(rng.uniform_int(lo, H - s.size));
      s.x = static_cast<int>(rng.uniform_int(0, W - s.size));
      return true;
    }
    default:
      return false;
  }
}

// Clamps speed so an inside trajectory exists, then samples the start.
inline bool place_inside(Rng& rng, ShapeSpec& s, const GeneratorConfig& cfg) {
  if (s.motion != Motion::still && cfg.t > 1) {
    const int span = (s.motion == Motion::left || s.motion == Motion::right)
                         ? cfg.width - s.size
                         : cfg.height - s.size;
    const int max_speed = span / (cfg.t - 1);
    if (max_speed < 1) s.motion = Motion::still;
    else s.speed = std::min(s.speed, max_speed);
  }
  if (s.motion == Motion::still) s.speed = 0;
  const int x = inside_start(rng, cfg.width, s.size, velocity_x(s), cfg.t);
  const int y = inside_start(rng, cfg.height, s.size, velocity_y(s), cfg.t);
  if (x < 0 || y < 0) return false;
  s.x = x;
  s.y = y;
  return true;
}

// Expression-level ambiguity rule: a moving referent is identified by
// (color, kind, direction); a static referent's expression carries no
// motion word, so its (color, kind) pair must be unique outright.
inline bool distractor_allowed(const ShapeSpec& referent, const ShapeSpec& cand) {
  if (cand.color != referent.color || cand.kind != referent.kind) return true;
  if (referent.motion == Motion::still) return false;
  return cand.motion != referent.motion;
}

}  // namespace detail

// Deterministic in (seed, cfg). The referent is drawn topmost, so its
// per-frame visibility flag depends only on whether it has left the canvas.
inline GeneratedSample generate_sample(std::uint64_t seed, const GeneratorConfig& cfg) {
  detail::validate(cfg);
  Rng rng(seed ^ (config_fingerprint(cfg) * 0x9e3779b97f4a7c15ull));

  GeneratedSample out;
  const bool want_exit = cfg.t > 1 && rng.bernoulli(cfg.exit_prob);

  // referent
  ShapeSpec ref;
  ref.color = static_cast<Color>(rng.uniform_int(0, 3));
  ref.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  const bool is_static = !want_exit && !cfg.motion_subset && rng.bernoulli(cfg.static_prob);
  ref.motion = is_static ? Motion::still : detail::random_direction(rng);
  ref.speed = is_static ? 0 : static_cast<int>(rng.uniform_int(cfg.speed_min, cfg.speed_max));
  ref.size = static_cast<int>(rng.uniform_int(cfg.size_min, cfg.size_max));

  bool exits = false;
  if (want_exit) exits = detail::place_exiting(rng, ref, cfg);
  if (!exits) {
    if (!detail::place_inside(rng, ref, cfg))
      throw GenerationError("generate_sample: cannot place referent, seed " + std::to_string(seed));
  }

  // distractors (always fully visible trajectories)
  int n_distractors = static_cast<int>(rng.uniform_int(cfg.distractors_min, cfg.distractors_max));
  if (cfg.motion_subset && n_distractors < 1) n_distractors = 1;
  std::vector<ShapeSpec> distractors;
  for (int d = 0; d < n_distractors; ++d) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      ShapeSpec s;
      if (cfg.motion_subset && d == 0) {
        // appearance twin: only the motion distinguishes it from the referent
        s.color = ref.color;
        s.kind = ref.kind;
        do {
          s.motion = static_cast<Motion>(rng.uniform_int(0, 4));
        } while (s.motion == ref.motion);
      } else {
        s.color = static_cast<Color>(rng.uniform_int(0, 3));
        s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
        s.motion = static_cast<Motion>(rng.uniform_int(0, 4));
      }
      s.speed = s.motion == Motion::still
                    ? 0
                    : static_cast<int>(rng.uniform_int(cfg.speed_min, cfg.speed_max));
      s.size = static_cast<int>(rng.uniform_int(cfg.size_min, cfg.size_max));
      if (!detail::distractor_allowed(ref, s)) continue;
      if (!detail::place_inside(rng, s, cfg)) continue;
      distractors.push_back(s);
      placed = true;
    }
    if (!placed)
      throw GenerationError("generate_sample: uniqueness retries exhausted, seed " +
                            std::to_string(seed));
  }

  out.specs = distractors;
  out.specs.push_back(ref);  // topmost
  out.exits = exits;

  // render
  ReferringSample& s = out.sample;
  s.t = cfg.t;
  s.channels = 3;
  s.height = cfg.height;
  s.width = cfg.width;
  s.frames_of_interest = interest_frames(cfg);
  const int ti = s.num_interest();
  s.frames.assign(static_cast<std::size_t>(cfg.t) * 3 * cfg.height * cfg.width, 0);
  const int n_inst = static_cast<int>(out.specs.size());
  s.gt_masks.assign(n_inst, BitMasks::empty(ti, cfg.height, cfg.width));
  s.gt_ref.assign(n_inst, std::vector<std::uint8_t>(ti, 0));
  s.referred_index = n_inst - 1;

  std::vector<int> interest_pos(cfg.t, -1);
  for (int k = 0; k < ti; ++k) interest_pos[s.frames_of_interest[k]] = k;

  for (int t = 0; t < cfg.t; ++t) {
    FrameRender fr = render_frame(out.specs, t, cfg.height, cfg.width);
    std::copy(fr.image.begin(), fr.image.end(),
              s.frames.begin() + static_cast<std::size_t>(t) * fr.image.size());
    const int k = interest_pos[t];
    if (k < 0) continue;
    for (int i = 0; i < n_inst; ++i) {
      bool any = false;
      for (int py = 0; py < cfg.height; ++py)
        for (int px = 0; px < cfg.width; ++px)
          if (fr.masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(py) * cfg.width + px]) {
            s.gt_masks[static_cast<std::size_t>(i)].set(k, py, px, true);
            any = true;
          }
      if (i == s.referred_index && any) s.gt_ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = 1;
    }
  }

  // tokens
  const std::vector<int> expr = build_expression(ref);
  s.token_len = static_cast<int>(expr.size());
  s.token_ids.assign(static_cast<std::size_t>(cfg.l_max), kPadToken);
  std::copy(expr.begin(), expr.end(), s.token_ids.begin());
  return out;
}

}  // namespace refseg::synthgen
