#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "refseg/core/ops.hpp"
#include "refseg/core/rng.hpp"
#include "refseg/core/tape.hpp"
#include "refseg/core/tensor.hpp"

namespace refseg::model {

// Learning-rate groups: the convolutional video backbone trains at a lower
// rate than everything else.
enum class ParamGroup { transformer = 0, visual_encoder = 1 };

// Per-forward cache mapping parameter tensors to tape leaves, so each
// parameter is pushed once per tape regardless of how often it is used.
template <typename Real>
class TapeBinder {
 public:
  explicit TapeBinder(Tape<Real>& tape) : tape_(&tape) {}

  int operator()(const Tensor<Real>& t) {
    auto [it, inserted] = ids_.try_emplace(&t, -1);
    if (inserted) it->second = tape_->leaf(t);
    return it->second;
  }

  // Gradient of a bound parameter, or nullptr if it never entered the tape.
  const Tensor<Real>* grad_of(const Tensor<Real>& t) const {
    auto it = ids_.find(&t);
    if (it == ids_.end() || !tape_->touched(it->second)) return nullptr;
    return &const_cast<Tape<Real>*>(tape_)->grad(it->second);
  }

  Tape<Real>& tape() { return *tape_; }

 private:
  Tape<Real>* tape_;
  std::unordered_map<const void*, int> ids_;
};

template <typename Real>
void init_uniform(Tensor<Real>& t, Rng& rng, double limit) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<Real>(rng.uniform(-limit, limit));
}

template <typename Real>
void init_normal(Tensor<Real>& t, Rng& rng, double stddev) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.normal(0.0, stddev));
}

template <typename Real>
struct LinearParams {
  Tensor<Real> w, b;

  void resize(int in, int out) {
    w = Tensor<Real>({in, out});
    b = Tensor<Real>({out});
  }

  void init(Rng& rng) {
    init_uniform(w, rng, std::sqrt(6.0 / (w.dim(0) + w.dim(1))));
    b.fill(Real(0));
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return ops::linear(bind.tape(), x, bind(w), bind(b));
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    f(prefix + ".w", w, g);
    f(prefix + ".b", b, g);
  }
};

template <typename Real>
struct LayerNormParams {
  Tensor<Real> gamma, beta;

  void resize(int n) {
    gamma = Tensor<Real>::full({n}, Real(1));
    beta = Tensor<Real>({n});
  }

  void init(Rng&) {
    gamma.fill(Real(1));
    beta.fill(Real(0));
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return ops::layernorm(bind.tape(), x, bind(gamma), bind(beta));
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    f(prefix + ".gamma", gamma, g);
    f(prefix + ".beta", beta, g);
  }
};

template <typename Real>
struct ConvParams {
  Tensor<Real> w, b;
  int stride = 1, pad = 0;

  void resize(int out, int in, int k, int stride_, int pad_) {
    w = Tensor<Real>({out, in, k, k});
    b = Tensor<Real>({out});
    stride = stride_;
    pad = pad_;
  }

  void init(Rng& rng) {
    const double fan_in = static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3);
    init_uniform(w, rng, std::sqrt(6.0 / fan_in));
    b.fill(Real(0));
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return ops::conv2d(bind.tape(), x, bind(w), bind(b), stride, pad);
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    f(prefix + ".w", w, g);
    f(prefix + ".b", b, g);
  }
};

template <typename Real>
struct GroupNormParams {
  Tensor<Real> gamma, beta;
  int groups = 8;

  void resize(int channels, int groups_) {
    gamma = Tensor<Real>::full({channels}, Real(1));
    beta = Tensor<Real>({channels});
    groups = groups_;
  }

  void init(Rng&) {
    gamma.fill(Real(1));
    beta.fill(Real(0));
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return ops::groupnorm(bind.tape(), x, bind(gamma), bind(beta), groups);
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    f(prefix + ".gamma", gamma, g);
    f(prefix + ".beta", beta, g);
  }
};

}  // namespace refseg::model
