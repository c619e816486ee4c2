#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "refseg/core/ops.hpp"
#include "refseg/core/tape.hpp"
#include "refseg/matching.hpp"
#include "refseg/synthgen/types.hpp"

// Training objective: dice + focal mask losses on the matched real pairs,
// reference cross-entropy on every query sequence with the unreferred class
// downweighted, auxiliary decoder layers summed without extra weights.

namespace refseg::losses {

template <typename Real>
struct LossParams {
  Real lambda_dice = 5;
  Real lambda_focal = 2;
  Real lambda_ref = 2;
  Real focal_alpha = Real(0.25);
  Real focal_gamma = 2;
  Real neg_weight = Real(0.1);  // unreferred-class CE downweight
  Real eps = Real(1e-8);        // probability clamp before logs
};

struct MatchedPair {
  int gt = 0;     // index into the ground-truth instance list
  int query = 0;  // prediction column
};

// sum over pairs and frames of (1 - smoothed dice) between predicted mask
// probabilities [F,Nq,H,W] and bit-packed ground truth.
template <typename Real>
int dice_loss_pairs(Tape<Real>& tape, int probs, std::vector<synthgen::BitMasks> gts,
                    std::vector<MatchedPair> pairs) {
  const Tensor<Real>& vp = tape.value(probs);
  const int F = vp.dim(0), nq = vp.dim(1);
  const std::int64_t npix = static_cast<std::int64_t>(vp.dim(2)) * vp.dim(3);
  for (const auto& g : gts)
    if (g.frames != F || static_cast<std::int64_t>(g.height) * g.width != npix)
      throw std::invalid_argument("dice_loss: mask shape mismatch");

  auto shared_gts = std::make_shared<std::vector<synthgen::BitMasks>>(std::move(gts));
  auto shared_pairs = std::make_shared<std::vector<MatchedPair>>(std::move(pairs));

  double total = 0;
  for (const auto& pr : *shared_pairs) {
    const auto& gt = (*shared_gts)[static_cast<std::size_t>(pr.gt)];
    for (int f = 0; f < F; ++f) {
      const Real* p = vp.data() + (static_cast<std::int64_t>(f) * nq + pr.query) * npix;
      total += 1.0 - matching::dice_coefficient_bits(p, gt, f);
    }
  }
  return tape.push(Tensor<Real>::scalar(static_cast<Real>(total)),
                   [probs, shared_gts, shared_pairs, F, nq, npix](Tape<Real>& tp, int self) {
    const Real g_out = tp.grad(self)[0];
    const Tensor<Real>& vp2 = tp.value(probs);
    Tensor<Real>& gp = tp.grad(probs);
    for (const auto& pr : *shared_pairs) {
      const auto& gt = (*shared_gts)[static_cast<std::size_t>(pr.gt)];
      const std::int64_t wpf = gt.words_per_frame();
      for (int f = 0; f < F; ++f) {
        const std::int64_t off = (static_cast<std::int64_t>(f) * nq + pr.query) * npix;
        const Real* p = vp2.data() + off;
        Real* gpf = gp.data() + off;
        double sp = 0, inter = 0;
        for (std::int64_t i = 0; i < npix; ++i) sp += p[i];
        for (std::int64_t w = 0; w < wpf; ++w) {
          std::uint64_t bits = gt.words[f * wpf + w];
          while (bits) {
            inter += p[w * 64 + __builtin_ctzll(bits)];
            bits &= bits - 1;
          }
        }
        const double sg = static_cast<double>(gt.count(f));
        const double num = 2.0 * inter + 1.0;
        const double den = sp + sg + 1.0;
        // d(1 - dice)/dp_i = (num - 2*g_i*den) / den^2
        const Real base = static_cast<Real>(g_out * num / (den * den));
        const Real on_gt = static_cast<Real>(g_out * (num - 2.0 * den) / (den * den));
        for (std::int64_t i = 0; i < npix; ++i) gpf[i] += base;
        for (std::int64_t w = 0; w < wpf; ++w) {
          std::uint64_t bits = gt.words[f * wpf + w];
          while (bits) {
            gpf[w * 64 + __builtin_ctzll(bits)] += on_gt - base;
            bits &= bits - 1;
          }
        }
      }
    }
  });
}

// sum over pairs and frames of the pixel-averaged focal loss.
template <typename Real>
int focal_loss_pairs(Tape<Real>& tape, int probs, std::vector<synthgen::BitMasks> gts,
                     std::vector<MatchedPair> pairs, const LossParams<Real>& lp) {
  const Tensor<Real>& vp = tape.value(probs);
  const int F = vp.dim(0), nq = vp.dim(1);
  const std::int64_t npix = static_cast<std::int64_t>(vp.dim(2)) * vp.dim(3);

  auto shared_gts = std::make_shared<std::vector<synthgen::BitMasks>>(std::move(gts));
  auto shared_pairs = std::make_shared<std::vector<MatchedPair>>(std::move(pairs));
  const double alpha = lp.focal_alpha, gamma = lp.focal_gamma, eps = lp.eps;

  auto pw = [gamma](double x) { return gamma == 2.0 ? x * x : std::pow(x, gamma); };

  double total = 0;
  for (const auto& pr : *shared_pairs) {
    const auto& gt = (*shared_gts)[static_cast<std::size_t>(pr.gt)];
    for (int f = 0; f < F; ++f) {
      const Real* p = vp.data() + (static_cast<std::int64_t>(f) * nq + pr.query) * npix;
      double acc = 0;
      for (std::int64_t i = 0; i < npix; ++i) {
        const bool pos = gt.get(f, static_cast<int>(i / gt.width), static_cast<int>(i % gt.width));
        const double pt = pos ? p[i] : 1.0 - p[i];
        const double at = pos ? alpha : 1.0 - alpha;
        acc += -at * pw(1.0 - pt) * std::log(std::max(pt, eps));
      }
      total += acc / static_cast<double>(npix);
    }
  }
  return tape.push(Tensor<Real>::scalar(static_cast<Real>(total)),
                   [probs, shared_gts, shared_pairs, F, nq, npix, alpha, gamma, eps, pw](
                       Tape<Real>& tp, int self) {
    const double g_out = static_cast<double>(tp.grad(self)[0]);
    const Tensor<Real>& vp2 = tp.value(probs);
    Tensor<Real>& gp = tp.grad(probs);
    auto pwm1 = [gamma](double x) { return gamma == 2.0 ? x : std::pow(x, gamma - 1.0); };
    for (const auto& pr : *shared_pairs) {
      const auto& gt = (*shared_gts)[static_cast<std::size_t>(pr.gt)];
      for (int f = 0; f < F; ++f) {
        const std::int64_t off = (static_cast<std::int64_t>(f) * nq + pr.query) * npix;
        const Real* p = vp2.data() + off;
        Real* gpf = gp.data() + off;
        const double scale = g_out / static_cast<double>(npix);
        for (std::int64_t i = 0; i < npix; ++i) {
          const bool pos = gt.get(f, static_cast<int>(i / gt.width), static_cast<int>(i % gt.width));
          double d;
          if (pos) {
            const double q = 1.0 - p[i];
            d = alpha * gamma * pwm1(q) * std::log(std::max<double>(p[i], eps)) -
                alpha * pw(q) / std::max<double>(p[i], eps);
          } else {
            const double q = 1.0 - p[i];
            d = -(1.0 - alpha) * gamma * pwm1(p[i]) * std::log(std::max(q, eps)) +
                (1.0 - alpha) * pw(p[i]) / std::max(q, eps);
          }
          gpf[i] += static_cast<Real>(scale * d);
        }
      }
    }
  });
}

// weighted negative log-likelihood over reference probabilities [F,Nq,2];
// one (class, weight) entry per (frame, query).
template <typename Real>
int ref_nll(Tape<Real>& tape, int ref_probs, std::vector<std::uint8_t> classes,
            std::vector<Real> weights, Real eps) {
  const Tensor<Real>& vp = tape.value(ref_probs);
  const int F = vp.dim(0), nq = vp.dim(1);
  if (static_cast<int>(classes.size()) != F * nq || classes.size() != weights.size())
    throw std::invalid_argument("ref_nll: target size mismatch");
  auto cls = std::make_shared<std::vector<std::uint8_t>>(std::move(classes));
  auto wts = std::make_shared<std::vector<Real>>(std::move(weights));
  double total = 0;
  for (int f = 0; f < F; ++f)
    for (int q = 0; q < nq; ++q) {
      const int k = f * nq + q;
      const double p = vp.at(f, q, (*cls)[static_cast<std::size_t>(k)] ? 1 : 0);
      total += static_cast<double>((*wts)[static_cast<std::size_t>(k)]) *
               -std::log(std::max<double>(p, eps));
    }
  return tape.push(Tensor<Real>::scalar(static_cast<Real>(total)),
                   [ref_probs, cls, wts, F, nq, eps](Tape<Real>& tp, int self) {
    const double g_out = static_cast<double>(tp.grad(self)[0]);
    const Tensor<Real>& vp2 = tp.value(ref_probs);
    Tensor<Real>& gp = tp.grad(ref_probs);
    for (int f = 0; f < F; ++f)
      for (int q = 0; q < nq; ++q) {
        const int k = f * nq + q;
        const int c = (*cls)[static_cast<std::size_t>(k)] ? 1 : 0;
        const double p = std::max<double>(vp2.at(f, q, c), eps);
        gp.at(f, q, c) += static_cast<Real>(-g_out * (*wts)[static_cast<std::size_t>(k)] / p);
      }
  });
}

// Single-sequence conveniences (used by tests and diagnostics).
template <typename Real>
int dice_loss(Tape<Real>& tape, int probs, int query, const synthgen::BitMasks& gt) {
  return dice_loss_pairs(tape, probs, {gt}, {{0, query}});
}

template <typename Real>
int focal_loss(Tape<Real>& tape, int probs, int query, const synthgen::BitMasks& gt,
               const LossParams<Real>& lp) {
  return focal_loss_pairs(tape, probs, {gt}, {{0, query}}, lp);
}

// lambda_d * dice + lambda_f * focal for one matched pair (no batch norm).
template <typename Real>
int mask_loss(Tape<Real>& tape, int probs, int query, const synthgen::BitMasks& gt,
              const LossParams<Real>& lp) {
  const int d = dice_loss(tape, probs, query, gt);
  const int f = focal_loss(tape, probs, query, gt, lp);
  return ops::add(tape, ops::scale(tape, d, lp.lambda_dice), ops::scale(tape, f, lp.lambda_focal));
}

// -lambda_r * (1/F) * sum_t w_t log r_hat[class_t] for one query sequence.
template <typename Real>
int ref_loss(Tape<Real>& tape, int ref_probs, int query, const std::vector<std::uint8_t>& flags,
             const LossParams<Real>& lp) {
  const Tensor<Real>& rp = tape.value(ref_probs);
  const int F = rp.dim(0), nq = rp.dim(1);
  std::vector<std::uint8_t> classes(static_cast<std::size_t>(F) * nq, 0);
  std::vector<Real> weights(static_cast<std::size_t>(F) * nq, 0);
  for (int f = 0; f < F; ++f) {
    const bool pos = flags[static_cast<std::size_t>(f)] != 0;
    classes[static_cast<std::size_t>(f * nq + query)] = pos ? 1 : 0;
    weights[static_cast<std::size_t>(f * nq + query)] =
        lp.lambda_ref * (Real(1) / F) * (pos ? Real(1) : lp.neg_weight);
  }
  return ref_nll(tape, ref_probs, std::move(classes), std::move(weights), lp.eps);
}

// ----------------------------------------------------------------- assembly

struct LayerBreakdown {
  double dice = 0;   // unweighted sum over matched pairs
  double focal = 0;  // unweighted sum over matched pairs
  double mask = 0;   // lambda-weighted, normalized
  double ref = 0;    // lambda-weighted, normalized
  double total = 0;
};

struct LossBreakdown {
  std::vector<LayerBreakdown> layers;
  double total = 0;
};

template <typename Real>
struct LayerPredictionNodes {
  int mask_probs = -1;  // [F,Nq,H,W] sigmoid node
  int ref_probs = -1;   // [F,Nq,2] softmax node
};

// Loss for one sample given per-layer matches. mask_scale is 1 / (real
// instances in batch); ref_scale is 1 / (Nq * batch size).
template <typename Real>
std::pair<int, LossBreakdown> total_loss(Tape<Real>& tape,
                                         const std::vector<LayerPredictionNodes<Real>>& layers,
                                         const std::vector<synthgen::BitMasks>& gt_masks,
                                         const std::vector<std::vector<std::uint8_t>>& gt_ref,
                                         const std::vector<matching::MatchResult>& matches,
                                         const LossParams<Real>& lp, Real mask_scale,
                                         Real ref_scale) {
  if (layers.size() != matches.size())
    throw std::invalid_argument("total_loss: one match per decoder layer expected");
  LossBreakdown breakdown;
  std::vector<int> layer_nodes;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& m = matches[l];
    const Tensor<Real>& rp = tape.value(layers[l].ref_probs);
    const int F = rp.dim(0), nq = rp.dim(1);

    std::vector<MatchedPair> pairs;
    for (int i = 0; i < m.n_real; ++i)
      pairs.push_back({i, m.assignment[static_cast<std::size_t>(i)]});

    const int dice = dice_loss_pairs(tape, layers[l].mask_probs, gt_masks, pairs);
    const int focal = focal_loss_pairs(tape, layers[l].mask_probs, gt_masks, pairs, lp);
    const int mask = ops::scale(
        tape,
        ops::add(tape, ops::scale(tape, dice, lp.lambda_dice),
                 ops::scale(tape, focal, lp.lambda_focal)),
        mask_scale);

    // reference targets for every query sequence; padding rows are negative
    std::vector<int> row_of_query(static_cast<std::size_t>(nq), -1);
    for (int i = 0; i < m.n_real; ++i)
      row_of_query[static_cast<std::size_t>(m.assignment[static_cast<std::size_t>(i)])] = i;
    std::vector<std::uint8_t> classes(static_cast<std::size_t>(F) * nq, 0);
    std::vector<Real> weights(static_cast<std::size_t>(F) * nq, 0);
    for (int f = 0; f < F; ++f)
      for (int q = 0; q < nq; ++q) {
        const int row = row_of_query[static_cast<std::size_t>(q)];
        const bool pos = row >= 0 && gt_ref[static_cast<std::size_t>(row)][static_cast<std::size_t>(f)];
        classes[static_cast<std::size_t>(f * nq + q)] = pos ? 1 : 0;
        weights[static_cast<std::size_t>(f * nq + q)] =
            lp.lambda_ref * (Real(1) / F) * (pos ? Real(1) : lp.neg_weight) * ref_scale;
      }
    const int ref = ref_nll(tape, layers[l].ref_probs, std::move(classes), std::move(weights), lp.eps);

    const int layer_total = ops::add(tape, mask, ref);
    layer_nodes.push_back(layer_total);

    LayerBreakdown lb;
    lb.dice = static_cast<double>(tape.value(dice)[0]);
    lb.focal = static_cast<double>(tape.value(focal)[0]);
    lb.mask = static_cast<double>(tape.value(mask)[0]);
    lb.ref = static_cast<double>(tape.value(ref)[0]);
    lb.total = static_cast<double>(tape.value(layer_total)[0]);
    breakdown.layers.push_back(lb);
    breakdown.total += lb.total;
  }
  const int root = ops::add_n(tape, layer_nodes);
  return {root, breakdown};
}

}  // namespace refseg::losses
