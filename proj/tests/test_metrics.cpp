#include <catch2/catch_amalgamated.hpp>

#include "refseg/metrics.hpp"
#include "test_support.hpp"

using namespace refseg;
using namespace refseg::metrics;
using Catch::Matchers::WithinAbs;

namespace {

BitMasks square_mask(int frames, int h, int w, int x0, int y0, int side) {
  auto m = BitMasks::empty(frames, h, w);
  for (int f = 0; f < frames; ++f)
    for (int y = y0; y < y0 + side; ++y)
      for (int x = x0; x < x0 + side; ++x) m.set(f, y, x, true);
  return m;
}

}  // namespace

TEST_CASE("region IoU closed forms") {
  auto a = square_mask(1, 16, 16, 2, 2, 3);
  CHECK_THAT(iou(a, 0, a, 0), WithinAbs(1.0, 1e-12));

  auto b = square_mask(1, 16, 16, 3, 2, 3);  // shifted one column
  CHECK_THAT(iou(a, 0, b, 0), WithinAbs(0.5, 1e-12));  // inter 6, union 12

  auto far = square_mask(1, 16, 16, 10, 10, 3);
  CHECK_THAT(iou(a, 0, far, 0), WithinAbs(0.0, 1e-12));

  auto empty = BitMasks::empty(1, 16, 16);
  CHECK_THAT(iou(empty, 0, empty, 0), WithinAbs(1.0, 1e-12));
  CHECK_THAT(iou(a, 0, empty, 0), WithinAbs(0.0, 1e-12));

  auto other = BitMasks::empty(1, 8, 8);
  CHECK_THROWS_AS(iou(a, 0, other, 0), std::invalid_argument);
}

TEST_CASE("overall and mean IoU aggregate differently") {
  // sample 1: inter 6, union 12 -> 0.5; sample 2: inter 0, union 9 -> 0
  EvalRecord r1{0.9, square_mask(1, 16, 16, 2, 2, 3), square_mask(1, 16, 16, 3, 2, 3)};
  EvalRecord r2{0.8, BitMasks::empty(1, 16, 16), square_mask(1, 16, 16, 5, 5, 3)};
  auto [overall, mean] = overall_and_mean_iou({r1, r2});
  CHECK_THAT(overall, WithinAbs(6.0 / 21.0, 1e-12));
  CHECK_THAT(mean, WithinAbs(0.25, 1e-12));

  // all perfect
  auto [o2, m2] = overall_and_mean_iou({EvalRecord{1.0, r1.gt, r1.gt}});
  CHECK_THAT(o2, WithinAbs(1.0, 1e-12));
  CHECK_THAT(m2, WithinAbs(1.0, 1e-12));

  // duplicating the larger-union sample pulls overall toward its IoU
  auto [o3, m3] = overall_and_mean_iou({r1, r2, r1});
  CHECK(o3 > overall);
}

TEST_CASE("precision@k uses a strict threshold by default") {
  std::vector<double> ious = {0.9, 0.6, 0.3};
  CHECK_THAT(precision_at_k(ious, 0.5), WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(precision_at_k({1.0, 1.0}, 0.5), WithinAbs(1.0, 1e-12));
  CHECK_THAT(precision_at_k({0.5}, 0.5), WithinAbs(0.0, 1e-12));
  CHECK_THAT(precision_at_k({0.5}, 0.5, true), WithinAbs(1.0, 1e-12));
}

TEST_CASE("mAP matches the frozen reference values") {
  // two-sample fixture
  CHECK_THAT(map_5095({{0.9, 1.0}, {0.8, 0.0}}), WithinAbs(0.504950495049505, 1e-9));

  // 20-sample fixture generated and evaluated by tests/oracles/ap_reference.py
  const int conf_n[20] = {265, 43,  381, 484, 339, 360, 350, 606, 344, 237,
                          931, 612, 47,  178, 38,  345, 898, 995, 723, 575};
  const int iou_n[20] = {8, 1, 15, 54, 38, 2, 0, 63, 47, 10, 41, 32, 56, 56, 38, 56, 17, 13, 47, 58};
  std::vector<std::pair<double, double>> fixture;
  for (int i = 0; i < 20; ++i)
    fixture.emplace_back(conf_n[i] / 1001.0, iou_n[i] / 64.0);

  const double expected_ap[10] = {0.41588087380166588,  0.32798994185132802, 0.26370906321401372,
                                  0.19366167385969366,  0.19366167385969366, 0.10891089108910891,
                                  0.10891089108910891,  0.072371522866572377,
                                  0.031117397454031116, 0.0099009900990099011};
  for (int i = 0; i < 10; ++i) {
    CHECK_THAT(ap_101(fixture, 0.50 + 0.05 * i), WithinAbs(expected_ap[i], 1e-9));
    if (i > 0) CHECK(ap_101(fixture, 0.50 + 0.05 * i) <= ap_101(fixture, 0.50 + 0.05 * (i - 1)) + 1e-12);
  }
  CHECK_THAT(map_5095(fixture), WithinAbs(0.17261149191842262, 1e-9));

  // perfect predictions regardless of confidence
  std::vector<std::pair<double, double>> perfect;
  for (int i = 0; i < 20; ++i) perfect.emplace_back((i + 1) / 30.0, 1.0);
  CHECK_THAT(map_5095(perfect), WithinAbs(1.0, 1e-12));
}

TEST_CASE("boundary F at the documented tolerance") {
  CHECK(boundary_tolerance(96, 96) == 2);

  auto a = square_mask(1, 96, 96, 30, 30, 10);
  CHECK_THAT(boundary_f(a, 0, a, 0), WithinAbs(1.0, 1e-12));

  auto empty = BitMasks::empty(1, 96, 96);
  CHECK_THAT(boundary_f(empty, 0, a, 0), WithinAbs(0.0, 1e-12));
  CHECK_THAT(boundary_f(empty, 0, empty, 0), WithinAbs(1.0, 1e-12));

  // diagonal one-pixel shift: J = 81/119 while F stays 1.0 within tolerance 2
  auto shifted = square_mask(1, 96, 96, 31, 31, 10);
  CHECK_THAT(iou(a, 0, shifted, 0), WithinAbs(81.0 / 119.0, 1e-12));
  CHECK_THAT(boundary_f(a, 0, shifted, 0), WithinAbs(1.0, 1e-12));
}

TEST_CASE("full report: bounds, monotone p@k, permutation invariance") {
  Rng rng(123);
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 12; ++i) {
    const int side = static_cast<int>(rng.uniform_int(4, 12));
    const int x = static_cast<int>(rng.uniform_int(0, 60));
    const int y = static_cast<int>(rng.uniform_int(0, 60));
    const int dx = static_cast<int>(rng.uniform_int(0, 6));
    EvalRecord r;
    r.confidence = rng.uniform();
    r.gt = square_mask(2, 96, 96, x, y, side);
    r.pred = square_mask(2, 96, 96, x + dx, y, side);
    rs.push_back(r);
  }
  auto rep = compute_metrics(rs);
  CHECK(rep.sample_count == 12);
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  CHECK(in01(rep.overall_iou));
  CHECK(in01(rep.mean_iou));
  CHECK(in01(rep.map_5095));
  CHECK(in01(rep.j_mean));
  CHECK(in01(rep.f_mean));
  CHECK(in01(rep.jf_mean));
  double prev = 1.0;
  for (const char* k : {"0.5", "0.6", "0.7", "0.8", "0.9"}) {
    CHECK(rep.p_at_k.at(k) <= prev + 1e-12);
    prev = rep.p_at_k.at(k);
  }

  auto shuffled = rs;
  Rng rng2(5);
  rng2.shuffle(shuffled.begin(), shuffled.end());
  auto rep2 = compute_metrics(shuffled);
  CHECK_THAT(rep2.overall_iou, WithinAbs(rep.overall_iou, 1e-12));
  CHECK_THAT(rep2.mean_iou, WithinAbs(rep.mean_iou, 1e-12));
  CHECK_THAT(rep2.map_5095, WithinAbs(rep.map_5095, 1e-12));
  CHECK_THAT(rep2.jf_mean, WithinAbs(rep.jf_mean, 1e-12));

  // round trip through JSON with versioned fields
  auto j = report_to_json(rep);
  CHECK(j.at("schema_version").get<int>() == 1);
  auto back = report_from_json(j);
  CHECK_THAT(back.map_5095, WithinAbs(rep.map_5095, 1e-15));

  // empty set: zeros plus a warning record
  auto rep0 = compute_metrics({});
  CHECK(rep0.sample_count == 0);
  CHECK(rep0.map_5095 == 0.0);
  CHECK(!rep0.warnings.empty());
}
