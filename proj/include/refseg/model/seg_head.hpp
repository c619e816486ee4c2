#pragma once

#include <vector>

#include "refseg/model/params.hpp"

namespace refseg::model {

template <typename Real>
struct ConvBlock {
  ConvParams<Real> conv;
  GroupNormParams<Real> gn;

  void resize(int channels, int groups) {
    conv.resize(channels, channels, 3, 1, 1);
    gn.resize(channels, groups);
  }

  void init(Rng& rng) {
    conv.init(rng);
    gn.init(rng);
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return ops::relu(bind.tape(), gn.forward(bind, conv.forward(bind, x)));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    conv.visit(prefix + ".conv", ParamGroup::transformer, f);
    gn.visit(prefix + ".gn", ParamGroup::transformer, f);
  }
};

// FPN-style spatial decoder: lateral 1x1 projections, two 3x3
// conv+GroupNorm+ReLU blocks per level, nearest-neighbor top-down
// upsampling, final 1x1 to the kernel dimension. Output is quarter
// resolution.
template <typename Real>
struct SpatialDecoder {
  ConvParams<Real> lat16, lat8, lat4;
  ConvBlock<Real> b16a, b16b, b8a, b8b, b4a, b4b;
  ConvParams<Real> reduce16_8, reduce8_4, out;

  void resize(int d_model, int c2, int c1, int f16, int f8, int f4, int d_seg, int groups) {
    lat16.resize(f16, d_model, 1, 1, 0);
    lat8.resize(f8, c2, 1, 1, 0);
    lat4.resize(f4, c1, 1, 1, 0);
    b16a.resize(f16, groups);
    b16b.resize(f16, groups);
    b8a.resize(f8, groups);
    b8b.resize(f8, groups);
    b4a.resize(f4, groups);
    b4b.resize(f4, groups);
    reduce16_8.resize(f8, f16, 1, 1, 0);
    reduce8_4.resize(f4, f8, 1, 1, 0);
    out.resize(d_seg, f4, 1, 1, 0);
  }

  void init(Rng& rng) {
    lat16.init(rng);
    lat8.init(rng);
    lat4.init(rng);
    b16a.init(rng);
    b16b.init(rng);
    b8a.init(rng);
    b8b.init(rng);
    b4a.init(rng);
    b4b.init(rng);
    reduce16_8.init(rng);
    reduce8_4.init(rng);
    out.init(rng);
  }

  // e16: encoded stride-16 maps [F,D,h16,w16]; s8/s4: backbone outputs.
  // Returns [F, d_seg, H/4, W/4].
  int forward(TapeBinder<Real>& bind, int e16, int s8, int s4) const {
    Tape<Real>& tape = bind.tape();
    int x = b16b.forward(bind, b16a.forward(bind, lat16.forward(bind, e16)));

    const auto& s8v = tape.value(s8);
    x = ops::nearest_resize(tape, reduce16_8.forward(bind, x), s8v.dim(2), s8v.dim(3));
    x = ops::add(tape, x, lat8.forward(bind, s8));
    x = b8b.forward(bind, b8a.forward(bind, x));

    const auto& s4v = tape.value(s4);
    x = ops::nearest_resize(tape, reduce8_4.forward(bind, x), s4v.dim(2), s4v.dim(3));
    x = ops::add(tape, x, lat4.forward(bind, s4));
    x = b4b.forward(bind, b4a.forward(bind, x));

    return out.forward(bind, x);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    lat16.visit(prefix + ".lat16", ParamGroup::transformer, f);
    lat8.visit(prefix + ".lat8", ParamGroup::transformer, f);
    lat4.visit(prefix + ".lat4", ParamGroup::transformer, f);
    b16a.visit(prefix + ".b16a", f);
    b16b.visit(prefix + ".b16b", f);
    b8a.visit(prefix + ".b8a", f);
    b8b.visit(prefix + ".b8b", f);
    b4a.visit(prefix + ".b4a", f);
    b4b.visit(prefix + ".b4b", f);
    reduce16_8.visit(prefix + ".reduce16_8", ParamGroup::transformer, f);
    reduce8_4.visit(prefix + ".reduce8_4", ParamGroup::transformer, f);
    out.visit(prefix + ".out", ParamGroup::transformer, f);
  }
};

// Two-layer perceptron mapping decoder outputs to conditional segmentation
// kernels, one kernel per (instance sequence, frame).
template <typename Real>
struct KernelHead {
  LinearParams<Real> lin1, lin2;

  void resize(int d, int d_seg) {
    lin1.resize(d, d);
    lin2.resize(d, d_seg);
  }

  void init(Rng& rng) {
    lin1.init(rng);
    lin2.init(rng);
  }

  // queries [F,Nq,D] -> kernels [F,Nq,Ds]
  int forward(TapeBinder<Real>& bind, int queries) const {
    return lin2.forward(bind, ops::relu(bind.tape(), lin1.forward(bind, queries)));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    lin1.visit(prefix + ".lin1", ParamGroup::transformer, f);
    lin2.visit(prefix + ".lin2", ParamGroup::transformer, f);
  }
};

// Single D x 2 linear layer + softmax; class 1 is "referred".
template <typename Real>
struct ReferenceHead {
  LinearParams<Real> lin;

  void resize(int d) { lin.resize(d, 2); }
  void init(Rng& rng) { lin.init(rng); }

  // queries [F,Nq,D] -> probabilities [F,Nq,2]
  int forward(TapeBinder<Real>& bind, int queries) const {
    return ops::softmax_lastdim(bind.tape(), lin.forward(bind, queries));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    lin.visit(prefix + ".lin", ParamGroup::transformer, f);
  }
};

// kernels [F,Nq,Ds] (*) fseg [F,Ds,h4,w4]: per-pixel dot product, then
// bilinear x4 upsampling to ground-truth resolution. Returns logits
// [F,Nq,H0,W0].
template <typename Real>
int predict_masks(Tape<Real>& tape, int kernels, int fseg) {
  const auto& fv = tape.value(fseg);
  const auto& kv = tape.value(kernels);
  if (fv.dim(1) != kv.dim(2))
    throw std::invalid_argument("predict_masks: kernel dimension mismatch");
  const int F = fv.dim(0), ds = fv.dim(1), h = fv.dim(2), w = fv.dim(3);
  const int nq = kv.dim(1);
  const int flat = ops::reshape(tape, fseg, {F, ds, h * w});
  const int logits4 = ops::reshape(tape, ops::bmm(tape, kernels, flat), {F, nq, h, w});
  return ops::bilinear_upsample(tape, logits4, 4);
}

}  // namespace refseg::model
