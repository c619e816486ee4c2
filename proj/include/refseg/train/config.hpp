#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "refseg/core/errors.hpp"
#include "refseg/core/rng.hpp"
#include "refseg/model/model.hpp"

namespace refseg::train {

struct TrainConfig {
  model::ModelConfig model;

  std::string train_dir;
  std::string val_dir;
  std::string out_dir = "out";

  int window = 8;  // frames per training sample
  int batch_size = 8;
  int epochs = 40;

  double lr = 1e-4;         // transformer, heads, text encoder
  double lr_visual = 5e-5;  // convolutional video backbone
  double weight_decay = 1e-4;
  double clip_norm = 0.1;
  int lr_drop_epoch = 30;
  double lr_drop_factor = 2.5;

  double lambda_dice = 5.0;
  double lambda_ref = 2.0;
  double lambda_focal = 2.0;

  std::uint64_t seed = 1;
  bool unref_supervision = true;
  double flip_prob = 0.5;

  int eval_every = 1;
  int threads = 1;  // worker count; results are bitwise stable per fixed count

  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

  void validate() const {
    model.validate();
    if (window < 1) throw ConfigError("train: window must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (lr <= 0 || lr_visual <= 0) throw ConfigError("train: learning rates must be positive");
    if (clip_norm <= 0) throw ConfigError("train: clip_norm must be positive");
    if (lr_drop_factor <= 0) throw ConfigError("train: lr_drop_factor must be positive");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
    if (flip_prob < 0 || flip_prob > 1) throw ConfigError("train: flip_prob must lie in [0,1]");
  }
};

inline nlohmann::json model_config_to_json(const model::ModelConfig& m) {
  return nlohmann::json{{"d_model", m.d_model},
                        {"heads", m.heads},
                        {"enc_layers", m.enc_layers},
                        {"dec_layers", m.dec_layers},
                        {"ffn_dim", m.ffn_dim},
                        {"num_queries", m.num_queries},
                        {"d_seg", m.d_seg},
                        {"d_text", m.d_text},
                        {"c1", m.c1},
                        {"c2", m.c2},
                        {"cv", m.cv},
                        {"fpn16", m.fpn16},
                        {"fpn8", m.fpn8},
                        {"fpn4", m.fpn4},
                        {"gn_groups", m.gn_groups},
                        {"temporal_kernel", m.temporal_kernel},
                        {"temporal_mixing", m.temporal_mixing},
                        {"l_max", m.l_max}};
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig m;
  m.d_model = j.value("d_model", m.d_model);
  m.heads = j.value("heads", m.heads);
  m.enc_layers = j.value("enc_layers", m.enc_layers);
  m.dec_layers = j.value("dec_layers", m.dec_layers);
  m.ffn_dim = j.value("ffn_dim", m.ffn_dim);
  m.num_queries = j.value("num_queries", m.num_queries);
  m.d_seg = j.value("d_seg", m.d_seg);
  m.d_text = j.value("d_text", m.d_text);
  m.c1 = j.value("c1", m.c1);
  m.c2 = j.value("c2", m.c2);
  m.cv = j.value("cv", m.cv);
  m.fpn16 = j.value("fpn16", m.fpn16);
  m.fpn8 = j.value("fpn8", m.fpn8);
  m.fpn4 = j.value("fpn4", m.fpn4);
  m.gn_groups = j.value("gn_groups", m.gn_groups);
  m.temporal_kernel = j.value("temporal_kernel", m.temporal_kernel);
  m.temporal_mixing = j.value("temporal_mixing", m.temporal_mixing);
  m.l_max = j.value("l_max", m.l_max);
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"model", model_config_to_json(c.model)},
                        {"train_dir", c.train_dir},
                        {"val_dir", c.val_dir},
                        {"out_dir", c.out_dir},
                        {"window", c.window},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"lr", c.lr},
                        {"lr_visual", c.lr_visual},
                        {"weight_decay", c.weight_decay},
                        {"clip_norm", c.clip_norm},
                        {"lr_drop_epoch", c.lr_drop_epoch},
                        {"lr_drop_factor", c.lr_drop_factor},
                        {"lambda_dice", c.lambda_dice},
                        {"lambda_ref", c.lambda_ref},
                        {"lambda_focal", c.lambda_focal},
                        {"seed", c.seed},
                        {"unref_supervision", c.unref_supervision},
                        {"flip_prob", c.flip_prob},
                        {"eval_every", c.eval_every},
                        {"threads", c.threads},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_eps", c.adam_eps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  c.train_dir = j.value("train_dir", c.train_dir);
  c.val_dir = j.value("val_dir", c.val_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.window = j.value("window", c.window);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_visual = j.value("lr_visual", c.lr_visual);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.lr_drop_epoch = j.value("lr_drop_epoch", c.lr_drop_epoch);
  c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
  c.lambda_dice = j.value("lambda_dice", c.lambda_dice);
  c.lambda_ref = j.value("lambda_ref", c.lambda_ref);
  c.lambda_focal = j.value("lambda_focal", c.lambda_focal);
  c.seed = j.value("seed", c.seed);
  c.unref_supervision = j.value("unref_supervision", c.unref_supervision);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.threads = j.value("threads", c.threads);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path + ": " + e.what());
  }
  return train_config_from_json(j);
}

// Fingerprint of everything that shapes the optimization trajectory.
// Deliberately excludes epochs, eval cadence, paths and thread count so that
// a checkpoint can be resumed with a longer schedule.
inline std::uint64_t train_config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_i = [&h](std::int64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  auto mix_d = [&h](double v) { h = fnv1a64(&v, sizeof(v), h); };
  const auto& m = c.model;
  for (int v : {m.d_model, m.heads, m.enc_layers, m.dec_layers, m.ffn_dim, m.num_queries, m.d_seg,
                m.d_text, m.c1, m.c2, m.cv, m.fpn16, m.fpn8, m.fpn4, m.gn_groups,
                m.temporal_kernel, m.temporal_mixing ? 1 : 0, m.vocab, m.l_max})
    mix_i(v);
  for (int v : {c.window, c.batch_size, c.lr_drop_epoch}) mix_i(v);
  for (double v : {c.lr, c.lr_visual, c.weight_decay, c.clip_norm, c.lr_drop_factor,
                   c.lambda_dice, c.lambda_ref, c.lambda_focal, c.flip_prob, c.adam_beta1,
                   c.adam_beta2, c.adam_eps})
    mix_d(v);
  mix_i(static_cast<std::int64_t>(c.seed));
  mix_i(c.unref_supervision ? 1 : 0);
  return h;
}

}  // namespace refseg::train
