#pragma once

#include <thread>
#include <vector>

#include "refseg/inference.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model/model.hpp"
#include "refseg/train/data.hpp"

namespace refseg::train {

// Inference over one sample. The clip is covered by disjoint w-frame
// windows (the last one clamped to the clip end); the voting scheme runs
// per window and the winning masks are stitched over the frames of
// interest. Confidence is the mean positive probability of the selected
// sequences over all covered frames.
template <typename Real>
metrics::EvalRecord evaluate_sample(const model::Model<Real>& m,
                                    const synthgen::ReferringSample& s, int window) {
  const int w = std::min(window, s.t);
  const int ti = s.num_interest();
  metrics::EvalRecord rec;
  rec.pred = synthgen::BitMasks::empty(ti, s.height, s.width);
  rec.gt = synthgen::BitMasks::empty(ti, s.height, s.width);

  const auto& gt_src = s.gt_masks[static_cast<std::size_t>(s.referred_index)];
  std::copy(gt_src.words.begin(), gt_src.words.end(), rec.gt.words.begin());

  std::vector<char> covered(static_cast<std::size_t>(ti), 0);
  double conf_sum = 0;
  int conf_n = 0;
  const std::int64_t wpf = rec.pred.words_per_frame();

  for (int k = 0; k < ti; ++k) {
    if (covered[static_cast<std::size_t>(k)]) continue;
    const int abs = s.frames_of_interest[static_cast<std::size_t>(k)];
    const int start = std::min(abs, s.t - w);

    auto view = make_window<Real>(s, start, w, true);
    Tape<Real> tape;
    auto fwd = m.forward(tape, view.input);
    const auto& last = fwd.layers.back();
    auto sel = inference::tsvs_select(tape.value(last.mask_probs), tape.value(last.ref_probs));

    for (std::size_t j = 0; j < view.abs_interest.size(); ++j) {
      const int abs_j = view.abs_interest[j];
      // map absolute frame back to its interest position
      int pos = -1;
      for (int q = 0; q < ti; ++q)
        if (s.frames_of_interest[static_cast<std::size_t>(q)] == abs_j) pos = q;
      if (pos < 0 || covered[static_cast<std::size_t>(pos)]) continue;
      covered[static_cast<std::size_t>(pos)] = 1;
      std::copy(sel.masks.words.begin() + static_cast<std::int64_t>(j) * wpf,
                sel.masks.words.begin() + static_cast<std::int64_t>(j + 1) * wpf,
                rec.pred.words.begin() + static_cast<std::int64_t>(pos) * wpf);
      conf_sum += tape.value(last.ref_probs).at(static_cast<int>(j), sel.winner, 1);
      ++conf_n;
    }
  }
  rec.confidence = conf_n > 0 ? conf_sum / conf_n : 0.0;
  return rec;
}

template <typename Real>
std::vector<metrics::EvalRecord> evaluate_records(const model::Model<Real>& m,
                                                  const std::vector<synthgen::ReferringSample>& samples,
                                                  int window, int threads = 1) {
  std::vector<metrics::EvalRecord> records(samples.size());
  if (threads <= 1 || samples.size() < 2) {
    for (std::size_t i = 0; i < samples.size(); ++i)
      records[i] = evaluate_sample(m, samples[i], window);
    return records;
  }
  const int nw = std::min<int>(threads, static_cast<int>(samples.size()));
  std::vector<std::thread> pool;
  for (int wi = 0; wi < nw; ++wi) {
    pool.emplace_back([&, wi]() {
      for (std::size_t i = static_cast<std::size_t>(wi); i < samples.size();
           i += static_cast<std::size_t>(nw))
        records[i] = evaluate_sample(m, samples[i], window);
    });
  }
  for (auto& t : pool) t.join();
  return records;
}

template <typename Real>
metrics::MetricReport evaluate_dataset(const model::Model<Real>& m,
                                       const std::vector<synthgen::ReferringSample>& samples,
                                       int window, int threads = 1) {
  return metrics::compute_metrics(evaluate_records(m, samples, window, threads));
}

}  // namespace refseg::train
