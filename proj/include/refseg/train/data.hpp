#pragma once

#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/model/model.hpp"
#include "refseg/synthgen/types.hpp"

namespace refseg::train {

// A w-frame slice of one sample: the model consumes every frame in the
// window, supervision covers the frames of interest that fall inside it.
template <typename Real>
struct WindowView {
  model::SampleInput<Real> input;
  std::vector<synthgen::BitMasks> gt_masks;        // per supervised instance
  std::vector<std::vector<std::uint8_t>> gt_ref;   // per supervised instance
  int n_real = 0;
  std::vector<int> abs_interest;  // absolute frame indices covered
};

// Interest positions of the sample that fall into [start, start+w).
inline std::vector<int> window_interest_positions(const synthgen::ReferringSample& s, int start,
                                                  int w) {
  std::vector<int> positions;
  for (int k = 0; k < s.num_interest(); ++k) {
    const int abs = s.frames_of_interest[static_cast<std::size_t>(k)];
    if (abs >= start && abs < start + w) positions.push_back(k);
  }
  return positions;
}

template <typename Real>
WindowView<Real> make_window(const synthgen::ReferringSample& s, int start, int w,
                             bool unref_supervision) {
  if (start < 0 || start + w > s.t) throw std::invalid_argument("make_window: range out of clip");
  const auto positions = window_interest_positions(s, start, w);
  if (positions.empty())
    throw std::invalid_argument("make_window: no frames of interest inside the window");

  WindowView<Real> out;
  out.input.frames = Tensor<Real>({w, s.channels, s.height, s.width});
  const std::size_t frame_sz = static_cast<std::size_t>(s.channels) * s.height * s.width;
  for (int f = 0; f < w; ++f) {
    const std::uint8_t* src = s.frames.data() + static_cast<std::size_t>(start + f) * frame_sz;
    Real* dst = out.input.frames.data() + static_cast<std::int64_t>(f) * frame_sz;
    for (std::size_t i = 0; i < frame_sz; ++i) dst[i] = static_cast<Real>(src[i]) / Real(255);
  }
  for (int k : positions) {
    out.input.interest.push_back(s.frames_of_interest[static_cast<std::size_t>(k)] - start);
    out.abs_interest.push_back(s.frames_of_interest[static_cast<std::size_t>(k)]);
  }
  out.input.tokens = s.token_ids;
  out.input.token_len = s.token_len;

  const int ti = static_cast<int>(positions.size());
  auto copy_instance = [&](int idx) {
    auto m = synthgen::BitMasks::empty(ti, s.height, s.width);
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(ti), 0);
    const auto& src = s.gt_masks[static_cast<std::size_t>(idx)];
    const std::int64_t wpf = src.words_per_frame();
    for (int j = 0; j < ti; ++j) {
      const int k = positions[static_cast<std::size_t>(j)];
      std::copy(src.words.begin() + k * wpf, src.words.begin() + (k + 1) * wpf,
                m.words.begin() + j * wpf);
      flags[static_cast<std::size_t>(j)] =
          s.gt_ref[static_cast<std::size_t>(idx)][static_cast<std::size_t>(k)];
    }
    out.gt_masks.push_back(std::move(m));
    out.gt_ref.push_back(std::move(flags));
  };

  if (unref_supervision) {
    for (int i = 0; i < s.num_instances(); ++i) copy_instance(i);
  } else {
    copy_instance(s.referred_index);
  }
  out.n_real = static_cast<int>(out.gt_masks.size());
  return out;
}

// Index of the supervised referent instance inside the window's GT list.
inline int window_referent_row(const synthgen::ReferringSample& s, bool unref_supervision) {
  return unref_supervision ? s.referred_index : 0;
}

}  // namespace refseg::train
