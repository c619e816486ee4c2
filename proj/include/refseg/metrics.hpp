#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/synthgen/types.hpp"

// Evaluation suite: Overall/Mean IoU, Precision@K, COCO-style mAP over
// 0.50:0.05:0.95 with 101-point interpolation, and DAVIS-style region
// similarity / contour accuracy.

namespace refseg::metrics {

using synthgen::BitMasks;

namespace detail {

inline void check_same_canvas(const BitMasks& a, const BitMasks& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("metrics: mask shape mismatch");
}

inline std::pair<std::int64_t, std::int64_t> inter_union(const BitMasks& a, int fa,
                                                         const BitMasks& b, int fb) {
  check_same_canvas(a, b);
  const std::int64_t wpf = a.words_per_frame();
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < wpf; ++i) {
    const std::uint64_t wa = a.words[fa * wpf + i];
    const std::uint64_t wb = b.words[fb * wpf + i];
    inter += __builtin_popcountll(wa & wb);
    uni += __builtin_popcountll(wa | wb);
  }
  return {inter, uni};
}

}  // namespace detail

// Region IoU of one frame; 1.0 when both masks are empty (a legitimately
// invisible referent predicted empty), 0.0 when exactly one is empty.
inline double iou(const BitMasks& pred, int fp, const BitMasks& gt, int fg) {
  const auto [inter, uni] = detail::inter_union(pred, fp, gt, fg);
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// One evaluated sample: the selected mask sequence, its confidence, and the
// referent's ground truth.
struct EvalRecord {
  double confidence = 0.0;
  BitMasks pred;
  BitMasks gt;
};

// Per-sample IoU aggregates intersection/union over the frame sequence.
inline double sample_iou(const EvalRecord& r) {
  std::int64_t inter = 0, uni = 0;
  for (int f = 0; f < r.gt.frames; ++f) {
    const auto [i, u] = detail::inter_union(r.pred, f, r.gt, f);
    inter += i;
    uni += u;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::pair<double, double> overall_and_mean_iou(const std::vector<EvalRecord>& rs) {
  if (rs.empty()) return {0.0, 0.0};
  std::int64_t inter = 0, uni = 0;
  double mean = 0;
  for (const auto& r : rs) {
    for (int f = 0; f < r.gt.frames; ++f) {
      const auto [i, u] = detail::inter_union(r.pred, f, r.gt, f);
      inter += i;
      uni += u;
    }
    mean += sample_iou(r);
  }
  const double overall = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return {overall, mean / static_cast<double>(rs.size())};
}

// Fraction of samples whose IoU is above threshold k. "Above" is strict by
// default; `inclusive` switches to >=.
inline double precision_at_k(const std::vector<double>& ious, double k, bool inclusive = false) {
  if (ious.empty()) return 0.0;
  int hits = 0;
  for (double v : ious) hits += (inclusive ? v >= k : v > k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

// 101-point interpolated AP at one IoU threshold; one prediction per sample,
// each ground truth matchable once. TP iff IoU >= tau.
inline double ap_101(std::vector<std::pair<double, double>> conf_iou, double tau) {
  const std::size_t n = conf_iou.size();
  if (n == 0) return 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return conf_iou[a].first > conf_iou[b].first;
  });
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (conf_iou[order[k]].second >= tau) ++tp;
    prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    rec[k] = static_cast<double>(tp) / static_cast<double>(n);
  }
  // right-max envelope, then sample at 101 recall points
  for (std::size_t k = n - 1; k > 0; --k) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  double total = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double best = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (rec[k] >= r) {
        best = prec[k];
        break;
      }
    }
    total += best;
  }
  return total / 101.0;
}

inline double map_5095(const std::vector<std::pair<double, double>>& conf_iou) {
  if (conf_iou.empty()) return 0.0;
  double acc = 0;
  for (int i = 0; i < 10; ++i) acc += ap_101(conf_iou, 0.50 + 0.05 * i);
  return acc / 10.0;
}

namespace detail {

// Mask pixels with a 4-neighbor outside the mask (canvas border counts as
// outside).
inline std::vector<std::uint8_t> boundary(const BitMasks& m, int f) {
  const int h = m.height, w = m.width;
  std::vector<std::uint8_t> b(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.get(f, y, x)) continue;
      const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1 || !m.get(f, y - 1, x) ||
                        !m.get(f, y + 1, x) || !m.get(f, y, x - 1) || !m.get(f, y, x + 1);
      if (edge) b[static_cast<std::size_t>(y) * w + x] = 1;
    }
  return b;
}

inline std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& src, int h, int w,
                                        int radius) {
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);
  std::vector<std::uint8_t> out(src.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!src[static_cast<std::size_t>(y) * w + x]) continue;
      for (const auto& [dy, dx] : disk) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w) out[static_cast<std::size_t>(ny) * w + nx] = 1;
      }
    }
  return out;
}

}  // namespace detail

inline int boundary_tolerance(int h, int w) {
  return static_cast<int>(std::ceil(0.008 * std::sqrt(static_cast<double>(h) * h +
                                                      static_cast<double>(w) * w)));
}

// Contour accuracy of one frame: precision/recall of boundary pixels matched
// within the dilation radius, F = 2PR/(P+R).
inline double boundary_f(const BitMasks& pred, int fp, const BitMasks& gt, int fg) {
  detail::check_same_canvas(pred, gt);
  const int h = pred.height, w = pred.width;
  const auto bp = detail::boundary(pred, fp);
  const auto bg = detail::boundary(gt, fg);
  const std::int64_t np = std::accumulate(bp.begin(), bp.end(), std::int64_t{0});
  const std::int64_t ng = std::accumulate(bg.begin(), bg.end(), std::int64_t{0});
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const int r = boundary_tolerance(h, w);
  const auto gd = detail::dilate(bg, h, w, r);
  const auto pd = detail::dilate(bp, h, w, r);
  std::int64_t hit_p = 0, hit_g = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    hit_p += bp[i] && gd[i] ? 1 : 0;
    hit_g += bg[i] && pd[i] ? 1 : 0;
  }
  const double precision = static_cast<double>(hit_p) / static_cast<double>(np);
  const double recall = static_cast<double>(hit_g) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// DAVIS-style J and F: per-video means over frames, then averaged over
// videos.
inline std::pair<double, double> j_and_f(const std::vector<EvalRecord>& rs) {
  if (rs.empty()) return {0.0, 0.0};
  double jsum = 0, fsum = 0;
  for (const auto& r : rs) {
    double j = 0, f = 0;
    for (int k = 0; k < r.gt.frames; ++k) {
      j += iou(r.pred, k, r.gt, k);
      f += boundary_f(r.pred, k, r.gt, k);
    }
    jsum += j / r.gt.frames;
    fsum += f / r.gt.frames;
  }
  return {jsum / static_cast<double>(rs.size()), fsum / static_cast<double>(rs.size())};
}

struct MetricReport {
  double overall_iou = 0;
  double mean_iou = 0;
  std::map<std::string, double> p_at_k;  // fractions, keys "0.5".."0.9"
  double map_5095 = 0;
  double j_mean = 0;
  double f_mean = 0;
  double jf_mean = 0;
  int sample_count = 0;
  std::vector<std::string> warnings;
};

inline MetricReport compute_metrics(const std::vector<EvalRecord>& rs) {
  MetricReport rep;
  rep.sample_count = static_cast<int>(rs.size());
  if (rs.empty()) {
    rep.warnings.push_back("empty evaluation set; all metrics defined as 0");
    for (const char* k : {"0.5", "0.6", "0.7", "0.8", "0.9"}) rep.p_at_k[k] = 0.0;
    return rep;
  }
  auto [overall, mean] = overall_and_mean_iou(rs);
  rep.overall_iou = overall;
  rep.mean_iou = mean;
  std::vector<double> ious;
  std::vector<std::pair<double, double>> conf_iou;
  for (const auto& r : rs) {
    ious.push_back(sample_iou(r));
    conf_iou.emplace_back(r.confidence, ious.back());
  }
  const char* keys[5] = {"0.5", "0.6", "0.7", "0.8", "0.9"};
  for (int i = 0; i < 5; ++i)
    rep.p_at_k[keys[i]] = precision_at_k(ious, 0.5 + 0.1 * i);
  rep.map_5095 = map_5095(conf_iou);
  auto [j, f] = j_and_f(rs);
  rep.j_mean = j;
  rep.f_mean = f;
  rep.jf_mean = 0.5 * (j + f);
  return rep;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  return nlohmann::json{{"schema_version", 1},
                        {"overall_iou", r.overall_iou},
                        {"mean_iou", r.mean_iou},
                        {"p_at_k", r.p_at_k},
                        {"map_5095", r.map_5095},
                        {"j_mean", r.j_mean},
                        {"f_mean", r.f_mean},
                        {"jf_mean", r.jf_mean},
                        {"sample_count", r.sample_count},
                        {"warnings", r.warnings}};
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.overall_iou = j.at("overall_iou").get<double>();
  r.mean_iou = j.at("mean_iou").get<double>();
  r.p_at_k = j.at("p_at_k").get<std::map<std::string, double>>();
  r.map_5095 = j.at("map_5095").get<double>();
  r.j_mean = j.at("j_mean").get<double>();
  r.f_mean = j.at("f_mean").get<double>();
  r.jf_mean = j.at("jf_mean").get<double>();
  r.sample_count = j.at("sample_count").get<int>();
  return r;
}

}  // namespace refseg::metrics
