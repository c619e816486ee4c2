#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>
#include <vector>

#include "refseg/losses.hpp"
#include "refseg/matching.hpp"
#include "refseg/synthgen/dataset_io.hpp"
#include "refseg/train/augment.hpp"
#include "refseg/train/checkpoint.hpp"
#include "refseg/train/config.hpp"
#include "refseg/train/evaluate.hpp"
#include "refseg/train/optimizer.hpp"

namespace refseg::train {

struct TrainResult {
  metrics::MetricReport final_metrics;
  nlohmann::json history = nlohmann::json::array();
  int epochs_run = 0;
};

// Training loop. Batches are processed by a fixed number of workers, each
// building its own tape over its share of the samples; worker gradients are
// reduced in worker order, so results are bitwise reproducible for a fixed
// (seed, thread count) and resuming from a checkpoint replays the exact
// trajectory: the per-epoch shuffle/augmentation streams depend only on
// (seed, epoch).
template <typename Real = float>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        model_(cfg_.model),
        adam_(cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps, cfg_.weight_decay) {
    cfg_.validate();
    model_.init(cfg_.seed);
    model_.visit([this](const std::string& name, Tensor<Real>& t, model::ParamGroup g) {
      ParamSlot<Real> slot;
      slot.name = name;
      slot.param = &t;
      slot.group = g;
      slot.grad = Tensor<Real>(t.shape());
      slot.m = Tensor<Real>(t.shape());
      slot.v = Tensor<Real>(t.shape());
      slots_.push_back(std::move(slot));
    });
  }

  void set_data(std::vector<synthgen::ReferringSample> train,
                std::vector<synthgen::ReferringSample> val) {
    train_ = std::move(train);
    val_ = std::move(val);
    check_data();
  }

  void load_data() {
    auto tr = synthgen::load_dataset(cfg_.train_dir);
    auto va = synthgen::load_dataset(cfg_.val_dir);
    set_data(std::move(tr.samples), std::move(va.samples));
  }

  bool resume(const std::string& path) {
    auto info = load_checkpoint(path, train_config_hash(cfg_), slots_);
    start_epoch_ = info.next_epoch;
    adam_.set_steps(info.adam_steps);
    history_ = info.history;
    return true;
  }

  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    std::ofstream log(fs::path(cfg_.out_dir) / "train_log.jsonl", std::ios::app);

    TrainResult result;
    result.history = history_;
    for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
      const auto stats = train_epoch(epoch, log);
      nlohmann::json epoch_rec{{"type", "epoch"},
                               {"epoch", epoch},
                               {"lr", lr_at(epoch)},
                               {"loss", stats.mean_loss},
                               {"dice", stats.mean_dice},
                               {"focal", stats.mean_focal},
                               {"ref", stats.mean_ref},
                               {"match_entropy", stats.match_entropy}};
      const bool do_eval =
          !val_.empty() && (((epoch + 1) % cfg_.eval_every == 0) || epoch + 1 == cfg_.epochs);
      if (do_eval) {
        result.final_metrics = evaluate_dataset(model_, val_, cfg_.window, cfg_.threads);
        nlohmann::json entry{{"epoch", epoch}, {"metrics", metrics::report_to_json(result.final_metrics)}};
        history_.push_back(entry);
        epoch_rec["metrics"] = metrics::report_to_json(result.final_metrics);
      }
      log << epoch_rec.dump() << "\n";
      log.flush();

      CheckpointInfo info;
      info.next_epoch = epoch + 1;
      info.adam_steps = adam_.steps();
      info.history = history_;
      save_checkpoint((fs::path(cfg_.out_dir) / "checkpoint.bin").string(),
                      train_config_hash(cfg_), slots_, info);
      result.epochs_run = epoch + 1 - start_epoch_;
    }
    if (start_epoch_ >= cfg_.epochs) {
      // zero-epoch run still persists the initialized state
      CheckpointInfo info;
      info.next_epoch = start_epoch_;
      info.adam_steps = adam_.steps();
      info.history = history_;
      save_checkpoint((fs::path(cfg_.out_dir) / "checkpoint.bin").string(),
                      train_config_hash(cfg_), slots_, info);
    }
    result.history = history_;
    return result;
  }

  model::Model<Real>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<ParamSlot<Real>>& slots() { return slots_; }
  const nlohmann::json& history() const { return history_; }

  double lr_at(int epoch) const {
    return epoch >= cfg_.lr_drop_epoch ? cfg_.lr / cfg_.lr_drop_factor : cfg_.lr;
  }
  double lr_visual_at(int epoch) const {
    return epoch >= cfg_.lr_drop_epoch ? cfg_.lr_visual / cfg_.lr_drop_factor : cfg_.lr_visual;
  }

  struct StepStats {
    double loss = 0;
    double grad_norm_pre = 0;
    double grad_norm_post = 0;
    losses::LossBreakdown breakdown_sum;
  };

  // One optimizer step over the given jobs; exposed for the invariant tests.
  struct Job {
    int sample_index = 0;
    bool flip = false;
    int offset = 0;
  };

  StepStats train_step(const std::vector<Job>& jobs, int epoch) {
    const auto lp = loss_params();
    double n_real_batch = 0;
    for (const auto& j : jobs) {
      const auto& s = train_[static_cast<std::size_t>(j.sample_index)];
      n_real_batch += cfg_.unref_supervision ? s.num_instances() : 1;
    }
    const Real mask_scale = static_cast<Real>(1.0 / std::max(1.0, n_real_batch));
    const Real ref_scale =
        static_cast<Real>(1.0 / (static_cast<double>(cfg_.model.num_queries) * jobs.size()));

    const int nw = std::min<int>(cfg_.threads, static_cast<int>(jobs.size()));
    struct WorkerOut {
      double loss = 0;
      losses::LossBreakdown breakdown_sum;
      std::vector<Tensor<Real>> grads;
      std::vector<int> matched_query;
      std::string error;
    };
    std::vector<WorkerOut> outs(static_cast<std::size_t>(nw));

    const std::size_t per = (jobs.size() + static_cast<std::size_t>(nw) - 1) / static_cast<std::size_t>(nw);
    auto worker_fn = [&](int wi) {
      WorkerOut& out = outs[static_cast<std::size_t>(wi)];
      try {
        Tape<Real> tape;
        model::TapeBinder<Real> bind(tape);
        std::vector<int> loss_nodes;
        const std::size_t lo = static_cast<std::size_t>(wi) * per;
        const std::size_t hi = std::min(jobs.size(), lo + per);
        for (std::size_t k = lo; k < hi; ++k) {
          const Job& job = jobs[k];
          const auto& stored = train_[static_cast<std::size_t>(job.sample_index)];
          const synthgen::ReferringSample sample = job.flip ? augment_flip(stored) : stored;
          auto view = make_window<Real>(sample, job.offset, std::min(cfg_.window, sample.t),
                                        cfg_.unref_supervision);
          auto fwd = model_.forward(bind, view.input);

          std::vector<matching::MatchResult> matches;
          std::vector<losses::LayerPredictionNodes<Real>> nodes;
          for (const auto& layer : fwd.layers) {
            auto cm = matching::build_cost_matrix(tape.value(layer.mask_probs),
                                                  tape.value(layer.ref_probs), view.gt_masks,
                                                  view.gt_ref, cfg_.lambda_dice, cfg_.lambda_ref);
            matches.push_back(matching::hungarian_match(cm));
            nodes.push_back({layer.mask_probs, layer.ref_probs});
          }
          auto [node, breakdown] = losses::total_loss(tape, nodes, view.gt_masks, view.gt_ref,
                                                      matches, lp, mask_scale, ref_scale);
          loss_nodes.push_back(node);
          accumulate(out.breakdown_sum, breakdown);
          const int referent_row = window_referent_row(sample, cfg_.unref_supervision);
          out.matched_query.push_back(
              matches.back().assignment[static_cast<std::size_t>(referent_row)]);
        }
        if (loss_nodes.empty()) return;
        const int root = loss_nodes.size() == 1 ? loss_nodes[0] : ops::add_n(tape, loss_nodes);
        out.loss = static_cast<double>(tape.value(root)[0]);
        tape.backward(root);
        out.grads.reserve(slots_.size());
        for (const auto& slot : slots_) {
          const Tensor<Real>* g = bind.grad_of(*slot.param);
          out.grads.push_back(g ? *g : Tensor<Real>(slot.param->shape()));
        }
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    };

    if (nw == 1) {
      worker_fn(0);
    } else {
      std::vector<std::thread> pool;
      for (int wi = 1; wi < nw; ++wi) pool.emplace_back(worker_fn, wi);
      worker_fn(0);
      for (auto& t : pool) t.join();
    }
    for (const auto& out : outs)
      if (!out.error.empty()) throw TrainingError("training step failed: " + out.error);

    StepStats stats;
    // fixed reduce order: workers 0..nw-1
    for (auto& slot : slots_) slot.grad.fill(Real(0));
    for (const auto& out : outs) {
      stats.loss += out.loss;
      accumulate(stats.breakdown_sum, out.breakdown_sum);
      for (std::size_t si = 0; si < slots_.size(); ++si)
        for (std::int64_t i = 0; i < slots_[si].grad.size(); ++i)
          slots_[si].grad[i] += out.grads[si][i];
      for (int q : out.matched_query) last_matched_.push_back(q);
    }
    if (!std::isfinite(stats.loss))
      throw TrainingError("non-finite loss encountered; breakdown: " +
                          breakdown_json(stats.breakdown_sum).dump());

    stats.grad_norm_pre = clip_grad_norm(slots_, cfg_.clip_norm);
    stats.grad_norm_post = grad_norm(slots_);
    adam_.step(slots_, lr_at(epoch), lr_visual_at(epoch));
    return stats;
  }

  losses::LossParams<Real> loss_params() const {
    losses::LossParams<Real> lp;
    lp.lambda_dice = static_cast<Real>(cfg_.lambda_dice);
    lp.lambda_focal = static_cast<Real>(cfg_.lambda_focal);
    lp.lambda_ref = static_cast<Real>(cfg_.lambda_ref);
    return lp;
  }

 private:
  struct EpochStats {
    double mean_loss = 0, mean_dice = 0, mean_focal = 0, mean_ref = 0;
    double match_entropy = 0;
  };

  static void accumulate(losses::LossBreakdown& into, const losses::LossBreakdown& from) {
    if (into.layers.size() < from.layers.size()) into.layers.resize(from.layers.size());
    for (std::size_t l = 0; l < from.layers.size(); ++l) {
      into.layers[l].dice += from.layers[l].dice;
      into.layers[l].focal += from.layers[l].focal;
      into.layers[l].mask += from.layers[l].mask;
      into.layers[l].ref += from.layers[l].ref;
      into.layers[l].total += from.layers[l].total;
    }
    into.total += from.total;
  }

  static nlohmann::json breakdown_json(const losses::LossBreakdown& b) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : b.layers)
      layers.push_back({{"dice", l.dice}, {"focal", l.focal}, {"mask", l.mask}, {"ref", l.ref},
                        {"total", l.total}});
    return nlohmann::json{{"total", b.total}, {"layers", layers}};
  }

  void check_data() const {
    if (train_.empty()) throw ConfigError("trainer: empty training set");
    for (const auto& s : train_)
      if (s.num_instances() >= cfg_.model.num_queries)
        throw ConfigError("trainer: num_queries must exceed the annotated instances");
  }

  EpochStats train_epoch(int epoch, std::ofstream& log) {
    Rng er(cfg_.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1)));
    std::vector<int> order(train_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    er.shuffle(order.begin(), order.end());

    std::vector<Job> plan(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& s = train_[static_cast<std::size_t>(order[i])];
      const int w = std::min(cfg_.window, s.t);
      Job j;
      j.sample_index = order[i];
      j.flip = er.bernoulli(cfg_.flip_prob);
      // windows are drawn uniformly among those containing a frame of interest
      for (int attempt = 0; attempt < 64; ++attempt) {
        j.offset = static_cast<int>(er.uniform_int(0, s.t - w));
        if (!window_interest_positions(s, j.offset, w).empty()) break;
      }
      plan[i] = j;
    }

    EpochStats es;
    last_matched_.clear();
    int steps = 0;
    for (std::size_t pos = 0; pos < plan.size(); pos += static_cast<std::size_t>(cfg_.batch_size)) {
      std::vector<Job> jobs(plan.begin() + static_cast<std::ptrdiff_t>(pos),
                            plan.begin() + static_cast<std::ptrdiff_t>(std::min(
                                plan.size(), pos + static_cast<std::size_t>(cfg_.batch_size))));
      const auto stats = train_step(jobs, epoch);
      ++steps;
      es.mean_loss += stats.loss;
      for (const auto& l : stats.breakdown_sum.layers) {
        es.mean_dice += l.dice;
        es.mean_focal += l.focal;
        es.mean_ref += l.ref;
      }
      log << nlohmann::json{{"type", "step"},
                            {"epoch", epoch},
                            {"step", steps},
                            {"loss", stats.loss},
                            {"grad_norm_pre", stats.grad_norm_pre},
                            {"grad_norm_post", stats.grad_norm_post}}
                 .dump()
          << "\n";
    }
    if (steps > 0) {
      es.mean_loss /= steps;
      es.mean_dice /= steps;
      es.mean_focal /= steps;
      es.mean_ref /= steps;
    }
    es.match_entropy = matched_entropy();
    return es;
  }

  // Entropy (nats) of the referent's matched-query histogram over the epoch;
  // collapse onto a single query shows up as entropy near zero.
  double matched_entropy() const {
    if (last_matched_.empty()) return 0.0;
    std::vector<double> counts(static_cast<std::size_t>(cfg_.model.num_queries), 0.0);
    for (int q : last_matched_) counts[static_cast<std::size_t>(q)] += 1.0;
    double h = 0;
    for (double c : counts) {
      if (c == 0) continue;
      const double p = c / static_cast<double>(last_matched_.size());
      h -= p * std::log(p);
    }
    return h;
  }

  TrainConfig cfg_;
  model::Model<Real> model_;
  AdamW<Real> adam_;
  std::vector<ParamSlot<Real>> slots_;
  std::vector<synthgen::ReferringSample> train_, val_;
  nlohmann::json history_ = nlohmann::json::array();
  std::vector<int> last_matched_;
  int start_epoch_ = 0;
};

}  // namespace refseg::train
