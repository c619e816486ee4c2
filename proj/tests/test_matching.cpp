#include <catch2/catch_amalgamated.hpp>

#include "refseg/matching.hpp"
#include "test_support.hpp"

using namespace refseg;
using namespace refseg::matching;
using Catch::Matchers::WithinAbs;

namespace {

// Builds [F,Nq,H,W] probabilities and [F,Nq,2] reference probabilities with
// every query predicting the same given per-frame masks.
struct TinyPreds {
  Tensor<double> mask_probs;
  Tensor<double> ref_probs;
};

synthgen::BitMasks bits_from(const std::vector<std::vector<double>>& frames, int h, int w) {
  auto m = synthgen::BitMasks::empty(static_cast<int>(frames.size()), h, w);
  for (int f = 0; f < static_cast<int>(frames.size()); ++f)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(y * w + x)] > 0.5)
          m.set(f, y, x, true);
  return m;
}

}  // namespace

TEST_CASE("dice coefficient closed forms") {
  std::vector<double> a(200, 0.0), b(200, 0.0);
  for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] = 1.0;
  CHECK_THAT(dice_coefficient<double>(a, b), WithinAbs(1.0, 1e-12));

  std::vector<double> e1(50, 0.0), e2(50, 0.0);
  CHECK_THAT(dice_coefficient<double>(e1, e2), WithinAbs(1.0, 1e-12));

  std::vector<double> d1(16, 0.0), d2(16, 0.0);
  for (int i = 0; i < 4; ++i) d1[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 4; i < 8; ++i) d2[static_cast<std::size_t>(i)] = 1.0;
  CHECK_THAT(dice_coefficient<double>(d1, d2), WithinAbs(1.0 / 9.0, 1e-12));

  std::vector<double> bad(3, 0.0);
  CHECK_THROWS_AS(dice_coefficient<double>(d1, bad), std::invalid_argument);
}

TEST_CASE("dice cost is the negated mean over frames") {
  // frame 0: perfect 2x2 block; frame 1: disjoint 4-pixel masks -> 1/9
  const int h = 4, w = 4;
  Tensor<double> probs({2, 1, h, w});
  std::vector<std::vector<double>> gt_frames(2, std::vector<double>(16, 0.0));
  for (int i : {0, 1, 4, 5}) {
    probs[i] = 1.0;
    gt_frames[0][static_cast<std::size_t>(i)] = 1.0;
  }
  for (int i : {2, 3, 6, 7}) probs[16 + i] = 1.0;
  for (int i : {8, 9, 12, 13}) gt_frames[1][static_cast<std::size_t>(i)] = 1.0;
  Tensor<double> ref({2, 1, 2});
  PredSequence<double> seq{&probs, &ref, 0};
  const auto gt = bits_from(gt_frames, h, w);
  CHECK_THAT(dice_cost(seq, gt), WithinAbs(-(1.0 + 1.0 / 9.0) / 2.0, 1e-12));
  CHECK_THAT(dice_cost(seq, gt), WithinAbs(-5.0 / 9.0, 1e-12));
}

TEST_CASE("reference cost dots probabilities with one-hot labels") {
  Tensor<double> probs({2, 1, 1, 1});
  Tensor<double> ref({2, 1, 2});
  ref.at(0, 0, 0) = 0.2;
  ref.at(0, 0, 1) = 0.8;
  ref.at(1, 0, 0) = 0.6;
  ref.at(1, 0, 1) = 0.4;
  PredSequence<double> seq{&probs, &ref, 0};

  CHECK_THAT(ref_cost(seq, {1, 1}), WithinAbs(-0.6, 1e-12));

  // all-negative ground truth selects the negative coordinate
  Tensor<double> conf({2, 1, 2});
  conf.at(0, 0, 0) = 0.0;
  conf.at(0, 0, 1) = 1.0;
  conf.at(1, 0, 0) = 0.0;
  conf.at(1, 0, 1) = 1.0;
  PredSequence<double> seq2{&probs, &conf, 0};
  CHECK_THAT(ref_cost(seq2, {0, 0}), WithinAbs(0.0, 1e-12));

  // perfect confident prediction
  CHECK_THAT(ref_cost(seq2, {1, 1}), WithinAbs(-1.0, 1e-12));
}

TEST_CASE("cost matrix: padding rows, bounds, linearity") {
  Rng rng(21);
  const int F = 2, nq = 3, h = 4, w = 4;
  Tensor<double> mask_probs({F, nq, h, w});
  for (std::int64_t i = 0; i < mask_probs.size(); ++i) mask_probs[i] = rng.uniform();
  Tensor<double> ref_probs({F, nq, 2});
  for (int f = 0; f < F; ++f)
    for (int q = 0; q < nq; ++q) {
      const double p = rng.uniform();
      ref_probs.at(f, q, 0) = 1 - p;
      ref_probs.at(f, q, 1) = p;
    }
  std::vector<synthgen::BitMasks> gt = {bits_from(
      {std::vector<double>(16, 1.0), std::vector<double>(16, 0.0)}, h, w)};
  std::vector<std::vector<std::uint8_t>> gtr = {{1, 0}};

  auto cm = build_cost_matrix(mask_probs, ref_probs, gt, gtr, 5.0, 2.0);
  REQUIRE(cm.n_real == 1);
  for (int j = 0; j < nq; ++j) {
    CHECK(cm.cost.at(1, j) == 0.0);
    CHECK(cm.cost.at(2, j) == 0.0);
    CHECK(cm.cost.at(0, j) >= -(5.0 + 2.0));
    CHECK(cm.cost.at(0, j) <= 2.0);
  }

  auto cm2 = build_cost_matrix(mask_probs, ref_probs, gt, gtr, 10.0, 2.0);
  for (int j = 0; j < nq; ++j)
    CHECK_THAT(cm2.cost.at(0, j) - cm.cost.at(0, j), WithinAbs(5.0 * cm.dice.at(0, j), 1e-12));

  // N_q <= N_i is a configuration error
  std::vector<synthgen::BitMasks> gt3(3, gt[0]);
  std::vector<std::vector<std::uint8_t>> gtr3(3, gtr[0]);
  CHECK_THROWS_AS(build_cost_matrix(mask_probs, ref_probs, gt3, gtr3, 5.0, 2.0), ConfigError);
}

TEST_CASE("hungarian: single real row picks the argmin column") {
  CostMatrix cm;
  cm.cost = Tensor<double>({3, 3}, {0.5, -0.75, 0.25, 0, 0, 0, 0, 0, 0});
  cm.dice = Tensor<double>({3, 3});
  cm.ref = Tensor<double>({3, 3});
  cm.n_real = 1;
  auto r = hungarian_match(cm);
  CHECK(r.assignment[0] == 1);
  CHECK_THAT(r.total_cost, WithinAbs(-0.75, 1e-12));
  // padding rows take the remaining columns in ascending order
  CHECK(r.assignment[1] == 0);
  CHECK(r.assignment[2] == 2);
}

TEST_CASE("hungarian equals brute force on every small integer matrix") {
  // all 3x3 matrices with entries in {-2,-1,0,1}
  const double values[4] = {-2, -1, 0, 1};
  for (int code = 0; code < 4 * 4 * 4 * 4 * 4 * 4 * 4 * 4 * 4; code += 37) {
    int c = code;
    CostMatrix cm;
    cm.cost = Tensor<double>({3, 3});
    for (int i = 0; i < 9; ++i) {
      cm.cost[i] = values[c % 4];
      c /= 4;
    }
    cm.dice = Tensor<double>({3, 3});
    cm.ref = Tensor<double>({3, 3});
    cm.n_real = 3;
    auto r = hungarian_match(cm);
    const double expect = brute_force_cost(cm.cost, 3);
    CHECK_THAT(r.total_cost, WithinAbs(expect, 1e-12));
    double recomputed = 0;
    for (int i = 0; i < 3; ++i) recomputed += cm.cost.at(i, r.assignment[static_cast<std::size_t>(i)]);
    CHECK_THAT(recomputed, WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("hungarian on random rectangular matrices matches the oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int nq = static_cast<int>(rng.uniform_int(2, 6));
    const int n_real = static_cast<int>(rng.uniform_int(1, nq - 1));
    CostMatrix cm;
    cm.cost = Tensor<double>({nq, nq});
    for (int i = 0; i < n_real; ++i)
      for (int j = 0; j < nq; ++j) cm.cost.at(i, j) = rng.uniform(-7.0, 2.0);
    cm.dice = Tensor<double>({nq, nq});
    cm.ref = Tensor<double>({nq, nq});
    cm.n_real = n_real;
    auto r = hungarian_match(cm);
    CHECK_THAT(r.total_cost, WithinAbs(brute_force_cost(cm.cost, n_real), 1e-9));

    // injectivity over all rows including padding
    std::vector<char> seen(static_cast<std::size_t>(nq), 0);
    for (int i = 0; i < nq; ++i) {
      REQUIRE(r.assignment[static_cast<std::size_t>(i)] >= 0);
      REQUIRE(!seen[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(i)])]);
      seen[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(i)])] = 1;
    }
  }
}

TEST_CASE("row-constant shifts do not change the chosen assignment") {
  Rng rng(91);
  for (int trial = 0; trial < 50; ++trial) {
    CostMatrix cm;
    cm.cost = Tensor<double>({4, 4});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) cm.cost.at(i, j) = rng.uniform(-5.0, 1.0);
    cm.dice = Tensor<double>({4, 4});
    cm.ref = Tensor<double>({4, 4});
    cm.n_real = 3;
    auto r1 = hungarian_match(cm);
    for (int j = 0; j < 4; ++j) cm.cost.at(1, j) += 3.75;
    auto r2 = hungarian_match(cm);
    CHECK(r1.assignment == r2.assignment);
  }
}

TEST_CASE("lexicographic tie-break is deterministic") {
  CostMatrix cm;
  // two optimal assignments: (0->0, 1->1) and (0->1, 1->0), both cost -2
  cm.cost = Tensor<double>({3, 3}, {-1, -1, 0, -1, -1, 0, 0, 0, 0});
  cm.dice = Tensor<double>({3, 3});
  cm.ref = Tensor<double>({3, 3});
  cm.n_real = 2;
  auto r = hungarian_match(cm);
  CHECK(r.assignment == std::vector<int>{0, 1, 2});
}
