#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/core/tensor.hpp"
#include "refseg/synthgen/types.hpp"

// Sequence-level bipartite matching between ground-truth instance sequences
// and predicted instance sequences. Everything here runs on detached values
// (double precision); gradients only ever flow through the losses evaluated
// at the matched pairs.

namespace refseg::matching {

// Smoothed dice: (2*sum(a*b) + 1) / (sum(a) + sum(b) + 1).
template <typename Real>
double dice_coefficient(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dice_coefficient: size mismatch");
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    sa += a[i];
    sb += b[i];
  }
  return (2.0 * inter + 1.0) / (sa + sb + 1.0);
}

// Same, with the ground truth given as one bit-packed frame.
template <typename Real>
double dice_coefficient_bits(const Real* probs, const synthgen::BitMasks& gt, int frame) {
  const std::int64_t npix = static_cast<std::int64_t>(gt.height) * gt.width;
  double sp = 0;
  for (std::int64_t i = 0; i < npix; ++i) sp += probs[i];
  double inter = 0;
  const std::int64_t wpf = gt.words_per_frame();
  for (std::int64_t w = 0; w < wpf; ++w) {
    std::uint64_t bits = gt.words[frame * wpf + w];
    while (bits) {
      const int b = __builtin_ctzll(bits);
      inter += probs[w * 64 + b];
      bits &= bits - 1;
    }
  }
  const double sg = static_cast<double>(gt.count(frame));
  return (2.0 * inter + 1.0) / (sp + sg + 1.0);
}

// View of one predicted instance sequence inside [F,Nq,...] value tensors.
template <typename Real>
struct PredSequence {
  const Tensor<Real>* mask_probs;  // [F,Nq,H,W], sigmoid probabilities
  const Tensor<Real>* ref_probs;   // [F,Nq,2]
  int query = 0;

  int frames() const { return mask_probs->dim(0); }
  const Real* mask_frame(int f) const {
    const int nq = mask_probs->dim(1);
    const std::int64_t npix = static_cast<std::int64_t>(mask_probs->dim(2)) * mask_probs->dim(3);
    return mask_probs->data() + (static_cast<std::int64_t>(f) * nq + query) * npix;
  }
  Real ref_prob(int f, int cls) const { return ref_probs->at(f, query, cls); }
};

// Negated mean of the per-frame dice coefficients.
template <typename Real>
double dice_cost(const PredSequence<Real>& pred, const synthgen::BitMasks& gt) {
  const int F = pred.frames();
  if (gt.frames != F) throw std::invalid_argument("dice_cost: frame count mismatch");
  double acc = 0;
  for (int f = 0; f < F; ++f) acc += dice_coefficient_bits(pred.mask_frame(f), gt, f);
  return -acc / F;
}

// Negated mean dot product of predicted probabilities with the one-hot
// reference labels (positive class = referred and visible).
template <typename Real>
double ref_cost(const PredSequence<Real>& pred, const std::vector<std::uint8_t>& gt_ref) {
  const int F = pred.frames();
  if (static_cast<int>(gt_ref.size()) != F)
    throw std::invalid_argument("ref_cost: frame count mismatch");
  double acc = 0;
  for (int f = 0; f < F; ++f) acc += pred.ref_prob(f, gt_ref[static_cast<std::size_t>(f)] ? 1 : 0);
  return -acc / F;
}

struct CostMatrix {
  Tensor<double> cost;  // [Nq, Nq]; rows beyond n_real are padding (all zero)
  Tensor<double> dice;  // unweighted components, same layout
  Tensor<double> ref;
  int n_real = 0;
  double lambda_dice = 5.0;
  double lambda_ref = 2.0;
};

// Rows = ground-truth sequences padded to Nq, columns = predictions.
template <typename Real>
CostMatrix build_cost_matrix(const Tensor<Real>& mask_probs, const Tensor<Real>& ref_probs,
                             const std::vector<synthgen::BitMasks>& gt_masks,
                             const std::vector<std::vector<std::uint8_t>>& gt_ref,
                             double lambda_dice, double lambda_ref) {
  const int nq = mask_probs.dim(1);
  const int n_real = static_cast<int>(gt_masks.size());
  if (n_real >= nq)
    throw ConfigError("matching: number of queries must exceed the annotated instances");
  CostMatrix out;
  out.cost = Tensor<double>({nq, nq});
  out.dice = Tensor<double>({nq, nq});
  out.ref = Tensor<double>({nq, nq});
  out.n_real = n_real;
  out.lambda_dice = lambda_dice;
  out.lambda_ref = lambda_ref;
  for (int i = 0; i < n_real; ++i) {
    for (int j = 0; j < nq; ++j) {
      PredSequence<Real> seq{&mask_probs, &ref_probs, j};
      const double cd = dice_cost(seq, gt_masks[static_cast<std::size_t>(i)]);
      const double cr = ref_cost(seq, gt_ref[static_cast<std::size_t>(i)]);
      out.dice.at(i, j) = cd;
      out.ref.at(i, j) = cr;
      out.cost.at(i, j) = lambda_dice * cd + lambda_ref * cr;
    }
  }
  return out;
}

namespace detail {

// Jonker-Volgenant style shortest augmenting path assignment for
// rows.size() <= cols.size(). Returns the optimal total cost; col_of maps
// positions in `rows` to positions in `cols`.
inline double solve_assignment(const Tensor<double>& cost, const std::vector<int>& rows,
                               const std::vector<int>& cols, std::vector<int>* col_of = nullptr) {
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());
  if (n == 0) {
    if (col_of) col_of->clear();
    return 0.0;
  }
  if (n > m) throw std::invalid_argument("assignment: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost.at(rows[static_cast<std::size_t>(i0 - 1)],
                                   cols[static_cast<std::size_t>(j - 1)]) -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(static_cast<std::size_t>(n), -1);
  double total = 0;
  for (int j = 1; j <= m; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i > 0) {
      result[static_cast<std::size_t>(i - 1)] = j - 1;
      total += cost.at(rows[static_cast<std::size_t>(i - 1)], cols[static_cast<std::size_t>(j - 1)]);
    }
  }
  if (col_of) *col_of = std::move(result);
  return total;
}

}  // namespace detail

struct MatchResult {
  std::vector<int> assignment;  // per GT row (padding included) -> prediction column
  int n_real = 0;
  double total_cost = 0.0;  // over real rows only; padding rows cost zero
  std::vector<std::array<double, 2>> pair_costs;  // per real row {dice, ref}, unweighted
};

// Optimal injective assignment of real rows, refined to the
// lexicographically smallest assignment among cost-optimal ones. Padding
// rows take the remaining columns in ascending order.
inline MatchResult hungarian_match(const CostMatrix& cm) {
  const int nq = cm.cost.dim(1);
  const int n_real = cm.n_real;
  MatchResult out;
  out.n_real = n_real;
  out.assignment.assign(static_cast<std::size_t>(cm.cost.dim(0)), -1);

  std::vector<int> all_cols(static_cast<std::size_t>(nq));
  for (int j = 0; j < nq; ++j) all_cols[static_cast<std::size_t>(j)] = j;

  std::vector<int> rest_rows(static_cast<std::size_t>(n_real));
  for (int i = 0; i < n_real; ++i) rest_rows[static_cast<std::size_t>(i)] = i;
  std::vector<int> free_cols = all_cols;

  double v_remaining = detail::solve_assignment(cm.cost, rest_rows, free_cols);
  out.total_cost = v_remaining;

  // fix rows in order, choosing the smallest column that preserves optimality
  for (int i = 0; i < n_real; ++i) {
    rest_rows.erase(rest_rows.begin());
    const double tol = 1e-9 * std::max(1.0, std::abs(v_remaining));
    bool fixed = false;
    for (std::size_t cpos = 0; cpos < free_cols.size() && !fixed; ++cpos) {
      const int c = free_cols[cpos];
      std::vector<int> cols_rest = free_cols;
      cols_rest.erase(cols_rest.begin() + static_cast<std::ptrdiff_t>(cpos));
      const double rest = detail::solve_assignment(cm.cost, rest_rows, cols_rest);
      if (cm.cost.at(i, c) + rest <= v_remaining + tol) {
        out.assignment[static_cast<std::size_t>(i)] = c;
        free_cols = std::move(cols_rest);
        v_remaining = rest;
        fixed = true;
      }
    }
    if (!fixed) throw std::logic_error("hungarian_match: refinement failed");
  }

  // padding rows: lowest free column index, deterministically
  std::size_t next_free = 0;
  for (int i = n_real; i < cm.cost.dim(0); ++i)
    out.assignment[static_cast<std::size_t>(i)] = free_cols[next_free++];

  out.pair_costs.resize(static_cast<std::size_t>(n_real));
  for (int i = 0; i < n_real; ++i) {
    const int j = out.assignment[static_cast<std::size_t>(i)];
    out.pair_costs[static_cast<std::size_t>(i)] = {cm.dice.at(i, j), cm.ref.at(i, j)};
  }
  return out;
}

// Exhaustive oracle for small problems (tests and acceptance).
inline double brute_force_cost(const Tensor<double>& cost, int n_real) {
  const int nq = cost.dim(1);
  std::vector<int> cols(static_cast<std::size_t>(nq));
  for (int j = 0; j < nq; ++j) cols[static_cast<std::size_t>(j)] = j;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(static_cast<std::size_t>(n_real), -1);
  std::vector<char> used(static_cast<std::size_t>(nq), 0);
  const std::function<void(int, double)> rec = [&](int row, double acc) {
    if (row == n_real) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < nq; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = 1;
      rec(row + 1, acc + cost.at(row, j));
      used[static_cast<std::size_t>(j)] = 0;
    }
  };
  rec(0, 0.0);
  return n_real == 0 ? 0.0 : best;
}

}  // namespace refseg::matching
