#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "refseg/core/tensor.hpp"
#include "refseg/model/params.hpp"

namespace refseg::train {

// One registered parameter with its gradient accumulator and AdamW state.
template <typename Real>
struct ParamSlot {
  std::string name;
  Tensor<Real>* param = nullptr;
  model::ParamGroup group = model::ParamGroup::transformer;
  Tensor<Real> grad;
  Tensor<Real> m, v;
};

// Decoupled-weight-decay Adam over the slot list. Learning rates are
// per-group; weight decay applies to every parameter.
template <typename Real>
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::vector<ParamSlot<Real>>& slots, double lr_transformer, double lr_visual) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& s : slots) {
      const double lr = s.group == model::ParamGroup::visual_encoder ? lr_visual : lr_transformer;
      Tensor<Real>& p = *s.param;
      for (std::int64_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(s.grad[i]);
        const double m = beta1_ * static_cast<double>(s.m[i]) + (1.0 - beta1_) * g;
        const double v = beta2_ * static_cast<double>(s.v[i]) + (1.0 - beta2_) * g * g;
        s.m[i] = static_cast<Real>(m);
        s.v[i] = static_cast<Real>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + eps_);
        p[i] = static_cast<Real>(static_cast<double>(p[i]) - lr * update -
                                 lr * weight_decay_ * static_cast<double>(p[i]));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
};

// Global L2 norm over all gradient accumulators.
template <typename Real>
double grad_norm(const std::vector<ParamSlot<Real>>& slots) {
  double acc = 0;
  for (const auto& s : slots)
    for (std::int64_t i = 0; i < s.grad.size(); ++i)
      acc += static_cast<double>(s.grad[i]) * static_cast<double>(s.grad[i]);
  return std::sqrt(acc);
}

// Scales gradients so the global norm does not exceed max_norm; returns the
// pre-clip norm.
template <typename Real>
double clip_grad_norm(std::vector<ParamSlot<Real>>& slots, double max_norm) {
  const double norm = grad_norm(slots);
  if (norm > max_norm && norm > 0) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (auto& s : slots)
      for (std::int64_t i = 0; i < s.grad.size(); ++i) s.grad[i] *= scale;
  }
  return norm;
}

}  // namespace refseg::train
