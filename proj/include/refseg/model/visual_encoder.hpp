#pragma once

#include <vector>

#include "refseg/model/params.hpp"

namespace refseg::model {

// Per-frame multi-scale convolutional encoder with one lightweight temporal
// mixing block after stage 2. Emits stride-4 / stride-8 / stride-16 feature
// maps for each frame of interest; the temporal block is the only path by
// which frames exchange information.
template <typename Real>
struct VisualEncoder {
  ConvParams<Real> stage1;  // 3 -> c1, k4 s4
  ConvParams<Real> stage2;  // c1 -> c2, k3 s2 p1
  Tensor<Real> temporal_w;  // [c2, k] depthwise over time
  ConvParams<Real> temporal_pw;  // c2 -> c2, 1x1
  ConvParams<Real> stage3;  // c2 -> cv, k3 s2 p1
  bool temporal_mixing = true;
  int temporal_kernel = 3;

  void resize(int c1, int c2, int cv, int temporal_k, bool mixing) {
    stage1.resize(c1, 3, 4, 4, 0);
    stage2.resize(c2, c1, 3, 2, 1);
    temporal_w = Tensor<Real>({c2, temporal_k});
    temporal_pw.resize(c2, c2, 1, 1, 0);
    stage3.resize(cv, c2, 3, 2, 1);
    temporal_kernel = temporal_k;
    temporal_mixing = mixing;
  }

  void init(Rng& rng) {
    stage1.init(rng);
    stage2.init(rng);
    init_uniform(temporal_w, rng, std::sqrt(6.0 / temporal_w.dim(1)));
    temporal_pw.init(rng);
    stage3.init(rng);
  }

  struct Output {
    int s4 = -1;   // [F, c1, H/4,  W/4]
    int s8 = -1;   // [F, c2, ~H/8, ~W/8]
    int s16 = -1;  // [F, cv, ~H/16,~W/16]
  };

  // frames: [T,3,H,W] node covering the whole window; outputs are selected
  // at the frames of interest after the temporal block has seen all T.
  Output forward(TapeBinder<Real>& bind, int frames, const std::vector<int>& interest) const {
    Tape<Real>& tape = bind.tape();
    const int s4_all = ops::relu(tape, stage1.forward(bind, frames));
    int s8_all = ops::relu(tape, stage2.forward(bind, s4_all));
    if (temporal_mixing) {
      const int mixed = temporal_pw.forward(
          bind, ops::temporal_depthwise(tape, s8_all, bind(temporal_w)));
      s8_all = ops::relu(tape, ops::add(tape, s8_all, mixed));
    }
    const int s16_all = ops::relu(tape, stage3.forward(bind, s8_all));
    Output out;
    out.s4 = ops::select_frames(tape, s4_all, interest);
    out.s8 = ops::select_frames(tape, s8_all, interest);
    out.s16 = ops::select_frames(tape, s16_all, interest);
    return out;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    stage1.visit(prefix + ".stage1", ParamGroup::visual_encoder, f);
    stage2.visit(prefix + ".stage2", ParamGroup::visual_encoder, f);
    f(prefix + ".temporal.dw", temporal_w, ParamGroup::visual_encoder);
    temporal_pw.visit(prefix + ".temporal.pw", ParamGroup::visual_encoder, f);
    stage3.visit(prefix + ".stage3", ParamGroup::visual_encoder, f);
  }
};

}  // namespace refseg::model
