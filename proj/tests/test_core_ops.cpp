#include <catch2/catch_amalgamated.hpp>

#include "refseg/core/ops.hpp"
#include "test_support.hpp"

using namespace refseg;
using refseg::testing::fd_max_rel_error;
using refseg::testing::random_tensor;

namespace {

// Weighted-sum readout makes the scalar sensitive to every output element.
double weighted_sum(const Tensor<double>& v, const Tensor<double>& w) {
  double s = 0;
  for (std::int64_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return s;
}

// Runs op under FD with respect to each listed input. The scalar readout is
// a random weighted sum over the op output so every element matters.
template <class BuildFn>
void check_op_grads(std::vector<Tensor<double>> inputs, BuildFn&& build, double tol = 1e-6,
                    std::uint64_t readout_seed = 99) {
  Tape<double> tape;
  std::vector<int> ids;
  for (auto& in : inputs) ids.push_back(tape.leaf(in));
  const int y = build(tape, ids);
  Rng rng(readout_seed);
  Tensor<double> w = random_tensor(tape.value(y).shape(), rng);
  const int wk = tape.constant(w);
  const int prod = ops::mul(tape, y, wk);
  const int root = ops::sum_all(tape, prod);
  tape.backward(root);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor<double>& xk) {
      Tape<double> t2;
      std::vector<int> ids2;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        ids2.push_back(t2.leaf(j == k ? xk : inputs[j]));
      const int y2 = build(t2, ids2);
      return weighted_sum(t2.value(y2), w);
    };
    REQUIRE(tape.touched(ids[k]));
    const double err = fd_max_rel_error(inputs[k], f, tape.grad(ids[k]));
    INFO("input " << k);
    CHECK(err < tol);
  }
}

}  // namespace

TEST_CASE("add/mul/scale/relu/sigmoid gradients match finite differences") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  check_op_grads({a, b}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::add(t, ids[0], ids[1]);
  });
  check_op_grads({a, b}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::mul(t, ids[0], ids[1]);
  });
  check_op_grads({a}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::scale(t, ids[0], 2.5);
  });
  check_op_grads({a}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::sigmoid(t, ids[0]);
  });
  // keep ReLU away from the kink
  Tensor<double> c = a;
  for (std::int64_t i = 0; i < c.size(); ++i) c[i] += (c[i] >= 0 ? 0.5 : -0.5);
  check_op_grads({c}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::relu(t, ids[0]);
  });
}

TEST_CASE("matmul/linear/bmm gradients match finite differences") {
  Rng rng(2);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({5, 4}, rng);
  check_op_grads({a, b}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::matmul(t, ids[0], ids[1]);
  });

  auto x = random_tensor({2, 3, 5}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto bias = random_tensor({4}, rng);
  check_op_grads({x, w, bias}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::linear(t, ids[0], ids[1], ids[2]);
  });

  auto ba = random_tensor({3, 2, 4}, rng);
  auto bb = random_tensor({3, 4, 5}, rng);
  check_op_grads({ba, bb}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::bmm(t, ids[0], ids[1]);
  });
  auto bc = random_tensor({3, 6, 4}, rng);
  check_op_grads({ba, bc}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::bmm_nt(t, ids[0], ids[1]);
  });
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  Rng rng(3);
  auto x = random_tensor({4, 6}, rng);
  Tape<double> t;
  const int id = t.leaf(x);
  const int y = ops::softmax_lastdim(t, id, 4);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += t.value(y).at(r, c);
    CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK(t.value(y).at(r, 4) == 0.0);
    CHECK(t.value(y).at(r, 5) == 0.0);
  }
  check_op_grads({x}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::softmax_lastdim(tp, ids[0], 4);
  });
  check_op_grads({x}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::softmax_lastdim(tp, ids[0]);
  });
}

TEST_CASE("layernorm and groupnorm gradients match finite differences") {
  Rng rng(4);
  auto x = random_tensor({3, 8}, rng);
  auto gamma = random_tensor({8}, rng);
  auto beta = random_tensor({8}, rng);
  check_op_grads({x, gamma, beta}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::layernorm(t, ids[0], ids[1], ids[2]);
  }, 2e-5);

  auto xg = random_tensor({2, 4, 3, 3}, rng);
  auto gg = random_tensor({4}, rng);
  auto bg = random_tensor({4}, rng);
  check_op_grads({xg, gg, bg}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::groupnorm(t, ids[0], ids[1], ids[2], 2);
  }, 2e-5);
}

TEST_CASE("conv2d matches a direct convolution and its gradients check out") {
  Rng rng(5);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);

  Tape<double> t;
  const int xi = t.leaf(x), wi = t.leaf(w), bi = t.leaf(b);
  const int y = ops::conv2d(t, xi, wi, bi, 2, 1);
  REQUIRE(t.value(y).shape() == std::vector<int>{2, 4, 3, 3});

  // direct reference
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 4; ++co)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b[co];
          for (int ci = 0; ci < 3; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = oy * 2 + ky - 1, sx = ox * 2 + kx - 1;
                if (sy < 0 || sy >= 5 || sx < 0 || sx >= 5) continue;
                acc += x.at(n, ci, sy, sx) * w.at(co, ci, ky, kx);
              }
          CHECK_THAT(t.value(y).at(n, co, oy, ox), Catch::Matchers::WithinAbs(acc, 1e-12));
        }

  check_op_grads({x, w, b}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::conv2d(tp, ids[0], ids[1], ids[2], 2, 1);
  });
}

TEST_CASE("temporal depthwise conv mixes only along time") {
  Rng rng(6);
  auto x = random_tensor({4, 2, 3, 3}, rng);
  auto w = random_tensor({2, 3}, rng);
  check_op_grads({x, w}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::temporal_depthwise(t, ids[0], ids[1]);
  });

  // frame t output depends on frames t-1..t+1 only
  Tape<double> t;
  const int y = ops::temporal_depthwise(t, t.leaf(x), t.leaf(w));
  auto x2 = x;
  x2.at(3, 0, 0, 0) += 10.0;  // far from frame 0
  Tape<double> t2;
  const int y2 = ops::temporal_depthwise(t2, t2.leaf(x2), t2.leaf(w));
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i)
      CHECK(t.value(y)[c * 9 + i] == t2.value(y2)[c * 9 + i]);
}

TEST_CASE("bilinear upsample reproduces the frozen half-pixel table") {
  // oracle table from tests/oracles/bilinear_reference.py
  const double expected[8][8] = {
      {1, 1, 1.125, 1.375, 1.625, 1.875, 2, 2},
      {1, 1, 1.125, 1.375, 1.625, 1.875, 2, 2},
      {1.25, 1.25, 1.375, 1.625, 1.875, 2.125, 2.25, 2.25},
      {1.75, 1.75, 1.875, 2.125, 2.375, 2.625, 2.75, 2.75},
      {2.25, 2.25, 2.375, 2.625, 2.875, 3.125, 3.25, 3.25},
      {2.75, 2.75, 2.875, 3.125, 3.375, 3.625, 3.75, 3.75},
      {3, 3, 3.125, 3.375, 3.625, 3.875, 4, 4},
      {3, 3, 3.125, 3.375, 3.625, 3.875, 4, 4}};
  Tensor<double> src({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tape<double> t;
  const int y = ops::bilinear_upsample(t, t.leaf(src), 4);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK_THAT(t.value(y).at(0, 0, r, c), Catch::Matchers::WithinAbs(expected[r][c], 1e-15));

  Rng rng(7);
  auto x = random_tensor({2, 3, 3, 4}, rng);
  check_op_grads({x}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::bilinear_upsample(tp, ids[0], 4);
  });
}

TEST_CASE("nearest resize repeats pixels and back-propagates by scatter") {
  Tensor<double> src({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tape<double> t;
  const int y = ops::nearest_resize(t, t.leaf(src), 4, 4);
  const double expected[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(t.value(y).at(0, 0, r, c) == expected[r][c]);

  Rng rng(8);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  check_op_grads({x}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::nearest_resize(tp, ids[0], 6, 6);
  });
  // crop case (2x upsample onto a smaller odd target)
  check_op_grads({x}, [](Tape<double>& tp, const std::vector<int>& ids) {
    return ops::nearest_resize(tp, ids[0], 5, 5);
  });
}

TEST_CASE("layout ops are exact inverses and route gradients") {
  Rng rng(9);
  auto x = random_tensor({3, 4, 6}, rng);
  check_op_grads({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::split_heads(t, ids[0], 2);
  });
  check_op_grads({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::merge_heads(t, ops::split_heads(t, ids[0], 3), 3);
  });
  {
    Tape<double> t;
    const int id = t.leaf(x);
    const int rt = ops::merge_heads(t, ops::split_heads(t, id, 2), 2);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(t.value(rt)[i] == x[i]);
  }

  auto img = random_tensor({2, 3, 2, 2}, rng);
  {
    Tape<double> t;
    const int id = t.leaf(img);
    const int rt = ops::tokens_to_chw(t, ops::chw_to_tokens(t, id), 2, 2);
    for (std::int64_t i = 0; i < img.size(); ++i) CHECK(t.value(rt)[i] == img[i]);
  }
  check_op_grads({img}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::chw_to_tokens(t, ids[0]);
  });

  auto vis = random_tensor({2, 3, 4}, rng);
  auto txt = random_tensor({2, 4}, rng);
  check_op_grads({vis, txt}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::concat_shared_tokens(t, ids[0], ids[1]);
  });
  check_op_grads({vis}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::slice_tokens(t, ids[0], 1, 3);
  });
  auto q = random_tensor({3, 4}, rng);
  check_op_grads({q}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::broadcast_rows(t, ids[0], 4);
  });
  auto frames = random_tensor({4, 2, 2}, rng);
  check_op_grads({frames}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::select_frames(t, ids[0], {1, 3});
  });

  auto table = random_tensor({5, 3}, rng);
  check_op_grads({table}, [](Tape<double>& t, const std::vector<int>& ids) {
    return ops::embedding(t, ids[0], {0, 2, 2, 4});
  });
}

TEST_CASE("embedding rejects out-of-vocabulary ids") {
  Tape<double> t;
  const int table = t.leaf(Tensor<double>({3, 2}));
  CHECK_THROWS_AS(ops::embedding(t, table, {3}), std::invalid_argument);
}
