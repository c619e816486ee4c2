#include <catch2/catch_amalgamated.hpp>

#include "refseg/losses.hpp"
#include "test_support.hpp"

using namespace refseg;
using namespace refseg::losses;
using Catch::Matchers::WithinAbs;
using refseg::testing::fd_max_rel_error;

namespace {

synthgen::BitMasks bits2x2(std::initializer_list<std::initializer_list<int>> frames) {
  auto m = synthgen::BitMasks::empty(static_cast<int>(frames.size()), 2, 2);
  int f = 0;
  for (const auto& fr : frames) {
    int i = 0;
    for (int v : fr) {
      if (v) m.set(f, i / 2, i % 2, true);
      ++i;
    }
    ++f;
  }
  return m;
}

}  // namespace

TEST_CASE("dice loss closed forms (sums over frames)") {
  // frame 0 perfect (4 px), frame 1: disjoint 4-px masks in a 4x4 grid
  Tape<double> t;
  Tensor<double> probs({2, 1, 4, 4});
  auto gt = synthgen::BitMasks::empty(2, 4, 4);
  for (int i : {0, 1, 4, 5}) {
    probs[i] = 1.0;
    gt.set(0, i / 4, i % 4, true);
  }
  for (int i : {2, 3, 6, 7}) probs[16 + i] = 1.0;
  for (int i : {8, 9, 12, 13}) gt.set(1, i / 4, i % 4, true);
  // frame 0 dice: (2*4+1)/(4+4+1) = 1 -> contributes 0; frame 1: 1/9 -> 8/9
  const int pid = t.leaf(probs);
  const int loss = dice_loss(t, pid, 0, gt);
  CHECK_THAT(t.value(loss)[0], WithinAbs(8.0 / 9.0, 1e-12));

  // doubling the sequence doubles the loss (sum, not mean)
  auto gt2 = synthgen::BitMasks::empty(4, 4, 4);
  Tensor<double> probs2({4, 1, 4, 4});
  for (int rep = 0; rep < 2; ++rep)
    for (int f = 0; f < 2; ++f) {
      for (int i = 0; i < 16; ++i) probs2[(rep * 2 + f) * 16 + i] = probs[f * 16 + i];
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          if (gt.get(f, y, x)) gt2.set(rep * 2 + f, y, x, true);
    }
  Tape<double> t2;
  const int loss2 = dice_loss(t2, t2.leaf(probs2), 0, gt2);
  CHECK_THAT(t2.value(loss2)[0], WithinAbs(2.0 * t.value(loss)[0], 1e-12));

  // perfect sequence
  Tape<double> t3;
  Tensor<double> perfect({1, 1, 2, 2}, {1, 1, 0, 0});
  const int loss3 = dice_loss(t3, t3.leaf(perfect), 0, bits2x2({{1, 1, 0, 0}}));
  CHECK_THAT(t3.value(loss3)[0], WithinAbs(0.0, 1e-12));
}

TEST_CASE("focal loss closed forms (single pixel)") {
  LossParams<double> lp;
  {
    Tape<double> t;
    Tensor<double> p({1, 1, 1, 1}, {0.9});
    auto gt = synthgen::BitMasks::empty(1, 1, 1);
    gt.set(0, 0, 0, true);
    const int l = focal_loss(t, t.leaf(p), 0, gt, lp);
    CHECK_THAT(t.value(l)[0], WithinAbs(0.00026340128914456557, 1e-12));
  }
  {
    Tape<double> t;
    Tensor<double> p({1, 1, 1, 1}, {0.1});
    auto gt = synthgen::BitMasks::empty(1, 1, 1);  // negative pixel
    const int l = focal_loss(t, t.leaf(p), 0, gt, lp);
    CHECK_THAT(t.value(l)[0], WithinAbs(0.00079020386743369677, 1e-12));
  }
  {
    // p equals the label -> loss below the clamp-induced bound
    Tape<double> t;
    Tensor<double> p({1, 1, 1, 1}, {1.0});
    auto gt = synthgen::BitMasks::empty(1, 1, 1);
    gt.set(0, 0, 0, true);
    const int l = focal_loss(t, t.leaf(p), 0, gt, lp);
    CHECK(t.value(l)[0] >= 0.0);
    CHECK(t.value(l)[0] < 1e-15);
  }
}

TEST_CASE("mask loss composes dice and focal with the default weights") {
  LossParams<double> lp;  // lambda_d=5, lambda_f=2
  Tape<double> t;
  Tensor<double> p({1, 1, 1, 1}, {0.9});
  auto gt = synthgen::BitMasks::empty(1, 1, 1);
  gt.set(0, 0, 0, true);
  const int pid = t.leaf(p);
  const int md = mask_loss(t, pid, 0, gt, lp);
  const int d = dice_loss(t, pid, 0, gt);
  const int f = focal_loss(t, pid, 0, gt, lp);
  CHECK_THAT(t.value(md)[0],
             WithinAbs(5.0 * t.value(d)[0] + 2.0 * t.value(f)[0], 1e-12));
  // frozen arithmetic from the worked example
  CHECK_THAT(5.0 * (8.0 / 9.0) + 2.0 * 0.00026340128914456557,
             WithinAbs(4.4449712470227336, 1e-12));
}

TEST_CASE("reference loss closed forms") {
  LossParams<double> lp;  // lambda_r = 2, neg weight 0.1
  auto one_frame = [&](double pos_prob, bool positive) {
    Tape<double> t;
    Tensor<double> rp({1, 1, 2});
    rp.at(0, 0, 0) = 1.0 - pos_prob;
    rp.at(0, 0, 1) = pos_prob;
    const int l = ref_loss(t, t.leaf(rp), 0, {static_cast<std::uint8_t>(positive ? 1 : 0)}, lp);
    return t.value(l)[0];
  };
  CHECK_THAT(one_frame(1.0, true), WithinAbs(0.0, 1e-9));
  CHECK_THAT(one_frame(0.5, false), WithinAbs(0.13862943611198905, 1e-12));
  CHECK_THAT(one_frame(0.5, true), WithinAbs(1.3862943611198906, 1e-12));
}

namespace {

struct LossFixture {
  Tensor<double> mask_probs;  // [F,Nq,H,W]
  Tensor<double> ref_probs;   // [F,Nq,2]
  std::vector<synthgen::BitMasks> gt_masks;
  std::vector<std::vector<std::uint8_t>> gt_ref;
};

LossFixture random_fixture(std::uint64_t seed, int F = 2, int nq = 3, int h = 4, int w = 4,
                           int n_real = 2) {
  Rng rng(seed);
  LossFixture fx;
  fx.mask_probs = Tensor<double>({F, nq, h, w});
  for (std::int64_t i = 0; i < fx.mask_probs.size(); ++i)
    fx.mask_probs[i] = 0.05 + 0.9 * rng.uniform();
  fx.ref_probs = Tensor<double>({F, nq, 2});
  for (int f = 0; f < F; ++f)
    for (int q = 0; q < nq; ++q) {
      const double p = 0.05 + 0.9 * rng.uniform();
      fx.ref_probs.at(f, q, 0) = 1 - p;
      fx.ref_probs.at(f, q, 1) = p;
    }
  for (int i = 0; i < n_real; ++i) {
    auto m = synthgen::BitMasks::empty(F, h, w);
    for (int f = 0; f < F; ++f)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (rng.bernoulli(0.4)) m.set(f, y, x, true);
    fx.gt_masks.push_back(m);
    std::vector<std::uint8_t> flags;
    for (int f = 0; f < F; ++f) flags.push_back(i == 0 && rng.bernoulli(0.7) ? 1 : 0);
    fx.gt_ref.push_back(flags);
  }
  return fx;
}

std::pair<int, LossBreakdown> run_total(Tape<double>& tape, const LossFixture& fx, int layers_n,
                                        const LossParams<double>& lp, double mask_scale,
                                        double ref_scale) {
  std::vector<LayerPredictionNodes<double>> layers;
  std::vector<matching::MatchResult> matches;
  for (int l = 0; l < layers_n; ++l) {
    LayerPredictionNodes<double> ln;
    ln.mask_probs = tape.leaf(fx.mask_probs);
    ln.ref_probs = tape.leaf(fx.ref_probs);
    layers.push_back(ln);
    auto cm = matching::build_cost_matrix(fx.mask_probs, fx.ref_probs, fx.gt_masks, fx.gt_ref,
                                          lp.lambda_dice, lp.lambda_ref);
    matches.push_back(matching::hungarian_match(cm));
  }
  return total_loss(tape, layers, fx.gt_masks, fx.gt_ref, matches, lp, mask_scale, ref_scale);
}

}  // namespace

TEST_CASE("total loss: layer additivity, nonnegativity") {
  LossParams<double> lp;
  auto fx = random_fixture(31);

  Tape<double> t1;
  auto [root1, b1] = run_total(t1, fx, 1, lp, 0.5, 1.0 / 6.0);
  Tape<double> t3;
  auto [root3, b3] = run_total(t3, fx, 3, lp, 0.5, 1.0 / 6.0);
  CHECK_THAT(t3.value(root3)[0], WithinAbs(3.0 * t1.value(root1)[0], 1e-9));
  CHECK(t1.value(root1)[0] >= 0.0);
  for (const auto& lb : b3.layers) {
    CHECK(lb.dice >= 0.0);
    CHECK(lb.focal >= 0.0);
    CHECK(lb.ref >= 0.0);
  }
  CHECK_THAT(b3.total, WithinAbs(t3.value(root3)[0], 1e-9));

  // a perfectly predicted single instance with confident negatives -> ~0
  LossFixture perfect;
  perfect.mask_probs = Tensor<double>({1, 2, 2, 2}, {1, 1, 0, 0, 0, 0, 0, 0});
  perfect.ref_probs = Tensor<double>({1, 2, 2});
  perfect.ref_probs.at(0, 0, 1) = 1.0;  // query 0 referred
  perfect.ref_probs.at(0, 1, 0) = 1.0;  // query 1 confidently negative
  perfect.gt_masks = {bits2x2({{1, 1, 0, 0}})};
  perfect.gt_ref = {{1}};
  Tape<double> tp;
  auto [rootp, bp] = run_total(tp, perfect, 1, lp, 1.0, 0.5);
  CHECK(tp.value(rootp)[0] < 1e-9);
}

TEST_CASE("exchanging two real instances leaves the total unchanged") {
  LossParams<double> lp;
  auto fx = random_fixture(57);
  Tape<double> ta;
  auto [ra, ba] = run_total(ta, fx, 1, lp, 0.5, 0.25);

  LossFixture swapped = fx;
  std::swap(swapped.gt_masks[0], swapped.gt_masks[1]);
  std::swap(swapped.gt_ref[0], swapped.gt_ref[1]);
  Tape<double> tb;
  auto [rb, bb] = run_total(tb, swapped, 1, lp, 0.5, 0.25);
  CHECK_THAT(ta.value(ra)[0], WithinAbs(tb.value(rb)[0], 1e-9));
}

TEST_CASE("padding sequences contribute only negative-class reference loss") {
  LossParams<double> lp;
  auto fx = random_fixture(77, 2, 4, 4, 4, 1);  // 1 real, 3 padding
  Tape<double> t;
  auto [root, b] = run_total(t, fx, 1, lp, 1.0, 1.0);
  t.backward(root);
  auto cm = matching::build_cost_matrix(fx.mask_probs, fx.ref_probs, fx.gt_masks, fx.gt_ref,
                                        lp.lambda_dice, lp.lambda_ref);
  const int matched = matching::hungarian_match(cm).assignment[0];
  const auto& g = t.grad(0);  // first leaf = mask probs
  const int F = 2, nq = 4, npix = 16;
  for (int f = 0; f < F; ++f)
    for (int q = 0; q < nq; ++q) {
      double mg = 0;
      for (int i = 0; i < npix; ++i) mg += std::abs(g[(f * nq + q) * npix + i]);
      if (q == matched)
        CHECK(mg > 0.0);
      else
        CHECK(mg == 0.0);
    }
  CHECK(b.layers[0].ref > 0.0);
}

TEST_CASE("loss gradients match finite differences (float64)") {
  LossParams<double> lp;
  auto fx = random_fixture(91);
  const double mask_scale = 0.5, ref_scale = 1.0 / 6.0;

  // freeze the matching once, as training does within a step
  auto cm = matching::build_cost_matrix(fx.mask_probs, fx.ref_probs, fx.gt_masks, fx.gt_ref,
                                        lp.lambda_dice, lp.lambda_ref);
  auto match = matching::hungarian_match(cm);

  auto eval = [&](const Tensor<double>& mp, const Tensor<double>& rp) {
    Tape<double> t;
    LayerPredictionNodes<double> ln;
    ln.mask_probs = t.leaf(mp);
    ln.ref_probs = t.leaf(rp);
    auto [root, b] =
        total_loss<double>(t, {ln}, fx.gt_masks, fx.gt_ref, {match}, lp, mask_scale, ref_scale);
    return t.value(root)[0];
  };

  Tape<double> t;
  LayerPredictionNodes<double> ln;
  ln.mask_probs = t.leaf(fx.mask_probs);
  ln.ref_probs = t.leaf(fx.ref_probs);
  auto [root, b] =
      total_loss<double>(t, {ln}, fx.gt_masks, fx.gt_ref, {match}, lp, mask_scale, ref_scale);
  t.backward(root);

  const double e1 = fd_max_rel_error(
      fx.mask_probs, [&](const Tensor<double>& mp) { return eval(mp, fx.ref_probs); },
      t.grad(ln.mask_probs), 1e-6);
  CHECK(e1 < 1e-4);
  const double e2 = fd_max_rel_error(
      fx.ref_probs, [&](const Tensor<double>& rp) { return eval(fx.mask_probs, rp); },
      t.grad(ln.ref_probs), 1e-6);
  CHECK(e2 < 1e-4);
}
