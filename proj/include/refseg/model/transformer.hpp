#pragma once

#include <memory>
#include <vector>

#include "refseg/model/params.hpp"
#include "refseg/model/positional.hpp"

namespace refseg::model {

template <typename Real>
struct AttentionParams {
  LinearParams<Real> q, k, v, o;
  int heads = 4;

  void resize(int d, int heads_) {
    q.resize(d, d);
    k.resize(d, d);
    v.resize(d, d);
    o.resize(d, d);
    heads = heads_;
  }

  void init(Rng& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng);
  }

  // x_q [F,Sq,D], x_kv [F,Sk,D]. key_valid limits attention to the first
  // `key_valid` keys (text padding); -1 means all keys are valid.
  int forward(TapeBinder<Real>& bind, int x_q, int x_kv, int key_valid = -1) const {
    Tape<Real>& tape = bind.tape();
    const int d = tape.value(x_q).dim(2);
    const int dk = d / heads;
    const int qh = ops::split_heads(tape, q.forward(bind, x_q), heads);
    const int kh = ops::split_heads(tape, k.forward(bind, x_kv), heads);
    const int vh = ops::split_heads(tape, v.forward(bind, x_kv), heads);
    const int scores = ops::scale(tape, ops::bmm_nt(tape, qh, kh),
                                  static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk))));
    const int probs = ops::softmax_lastdim(tape, scores, key_valid);
    const int ctx = ops::merge_heads(tape, ops::bmm(tape, probs, vh), heads);
    return o.forward(bind, ctx);
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    q.visit(prefix + ".q", g, f);
    k.visit(prefix + ".k", g, f);
    v.visit(prefix + ".v", g, f);
    o.visit(prefix + ".o", g, f);
  }
};

template <typename Real>
struct FfnParams {
  LinearParams<Real> lin1, lin2;

  void resize(int d, int hidden) {
    lin1.resize(d, hidden);
    lin2.resize(hidden, d);
  }

  void init(Rng& rng) {
    lin1.init(rng);
    lin2.init(rng);
  }

  int forward(TapeBinder<Real>& bind, int x) const {
    return lin2.forward(bind, ops::relu(bind.tape(), lin1.forward(bind, x)));
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    lin1.visit(prefix + ".lin1", g, f);
    lin2.visit(prefix + ".lin2", g, f);
  }
};

// Post-norm encoder layer.
template <typename Real>
struct EncoderLayer {
  AttentionParams<Real> attn;
  FfnParams<Real> ffn;
  LayerNormParams<Real> ln1, ln2;

  void resize(int d, int heads, int ffn_dim) {
    attn.resize(d, heads);
    ffn.resize(d, ffn_dim);
    ln1.resize(d);
    ln2.resize(d);
  }

  void init(Rng& rng) {
    attn.init(rng);
    ffn.init(rng);
    ln1.init(rng);
    ln2.init(rng);
  }

  int forward(TapeBinder<Real>& bind, int x, int key_valid = -1) const {
    Tape<Real>& tape = bind.tape();
    x = ln1.forward(bind, ops::add(tape, x, attn.forward(bind, x, x, key_valid)));
    x = ln2.forward(bind, ops::add(tape, x, ffn.forward(bind, x)));
    return x;
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    attn.visit(prefix + ".attn", g, f);
    ffn.visit(prefix + ".ffn", g, f);
    ln1.visit(prefix + ".ln1", g, f);
    ln2.visit(prefix + ".ln2", g, f);
  }
};

template <typename Real>
struct DecoderLayer {
  AttentionParams<Real> self_attn, cross_attn;
  FfnParams<Real> ffn;
  LayerNormParams<Real> ln1, ln2, ln3;

  void resize(int d, int heads, int ffn_dim) {
    self_attn.resize(d, heads);
    cross_attn.resize(d, heads);
    ffn.resize(d, ffn_dim);
    ln1.resize(d);
    ln2.resize(d);
    ln3.resize(d);
  }

  void init(Rng& rng) {
    self_attn.init(rng);
    cross_attn.init(rng);
    ffn.init(rng);
    ln1.init(rng);
    ln2.init(rng);
    ln3.init(rng);
  }

  int forward(TapeBinder<Real>& bind, int queries, int memory) const {
    Tape<Real>& tape = bind.tape();
    queries = ln1.forward(bind, ops::add(tape, queries, self_attn.forward(bind, queries, queries)));
    queries = ln2.forward(bind, ops::add(tape, queries, cross_attn.forward(bind, queries, memory)));
    queries = ln3.forward(bind, ops::add(tape, queries, ffn.forward(bind, queries)));
    return queries;
  }

  template <class F>
  void visit(const std::string& prefix, ParamGroup g, F&& f) {
    self_attn.visit(prefix + ".self", g, f);
    cross_attn.visit(prefix + ".cross", g, f);
    ffn.visit(prefix + ".ffn", g, f);
    ln1.visit(prefix + ".ln1", g, f);
    ln2.visit(prefix + ".ln2", g, f);
    ln3.visit(prefix + ".ln3", g, f);
  }
};

// Token embeddings followed by one self-attention layer. Trained with the
// rest of the model; padded positions are masked out of attention and carry
// no gradient.
template <typename Real>
struct TextEncoder {
  Tensor<Real> table;  // [V, Dt]
  EncoderLayer<Real> layer;
  int d_text = 0;

  void resize(int vocab, int dt, int heads, int ffn_dim) {
    table = Tensor<Real>({vocab, dt});
    layer.resize(dt, heads, ffn_dim);
    d_text = dt;
  }

  void init(Rng& rng) {
    init_normal(table, rng, 0.02);
    layer.init(rng);
  }

  // token_ids padded to l_max; returns [l_max, Dt].
  int forward(TapeBinder<Real>& bind, const std::vector<int>& token_ids, int valid_len) const {
    Tape<Real>& tape = bind.tape();
    const int e = ops::embedding(tape, bind(table), token_ids);
    const int l = static_cast<int>(token_ids.size());
    const int x = ops::reshape(tape, e, {1, l, d_text});
    const int y = layer.forward(bind, x, valid_len);
    return ops::reshape(tape, y, {l, d_text});
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".embeddings", table, ParamGroup::transformer);
    layer.visit(prefix + ".layer", ParamGroup::transformer, f);
  }
};

// Frame-parallel multimodal transformer: per frame of interest one
// (H*W + L) x D sequence, encoder layers exchange text/visual information
// within the frame, decoder queries share one learned parameter block.
template <typename Real>
struct MultimodalTransformer {
  std::vector<EncoderLayer<Real>> enc;
  std::vector<DecoderLayer<Real>> dec;
  Tensor<Real> query_embed;  // [Nq, D] — the single shared block
  int d_model = 0;

  void resize(int d, int heads, int enc_layers, int dec_layers, int ffn_dim, int num_queries) {
    enc.assign(static_cast<std::size_t>(enc_layers), {});
    for (auto& l : enc) l.resize(d, heads, ffn_dim);
    dec.assign(static_cast<std::size_t>(dec_layers), {});
    for (auto& l : dec) l.resize(d, heads, ffn_dim);
    query_embed = Tensor<Real>({num_queries, d});
    d_model = d;
  }

  void init(Rng& rng) {
    for (auto& l : enc) l.init(rng);
    for (auto& l : dec) l.init(rng);
    init_normal(query_embed, rng, 1.0);
  }

  // visual_tokens [F,HW,D] (already projected), text_tokens [L,D] (already
  // projected and trimmed to the valid length). Sine encodings are added to
  // the visual tokens only.
  int build_multimodal(TapeBinder<Real>& bind, int visual_tokens, int text_tokens, int h,
                       int w) const {
    Tape<Real>& tape = bind.tape();
    auto pe = std::make_shared<Tensor<Real>>(sine_positions_2d<Real>(h, w, d_model));
    const int with_pe = ops::add_const_tokens(tape, visual_tokens, pe);
    return ops::concat_shared_tokens(tape, with_pe, text_tokens);
  }

  int encode(TapeBinder<Real>& bind, int seq) const {
    int x = seq;
    for (const auto& l : enc) x = l.forward(bind, x);
    return x;
  }

  // Returns one [F,Nq,D] output per decoder layer (for auxiliary losses).
  std::vector<int> decode(TapeBinder<Real>& bind, int memory) const {
    Tape<Real>& tape = bind.tape();
    const int frames = tape.value(memory).dim(0);
    int x = ops::broadcast_rows(tape, bind(query_embed), frames);
    std::vector<int> outs;
    for (const auto& l : dec) {
      x = l.forward(bind, x, memory);
      outs.push_back(x);
    }
    return outs;
  }

  // (visual part reshaped to [F,D,h,w], encoded text part [F,L,D])
  std::pair<int, int> split_encoded(TapeBinder<Real>& bind, int encoded, int h, int w) const {
    Tape<Real>& tape = bind.tape();
    const int s = tape.value(encoded).dim(1);
    const int hw = h * w;
    const int vis = ops::slice_tokens(tape, encoded, 0, hw);
    const int txt = ops::slice_tokens(tape, encoded, hw, s);
    return {ops::tokens_to_chw(tape, vis, h, w), txt};
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < enc.size(); ++i)
      enc[i].visit(prefix + ".enc" + std::to_string(i), ParamGroup::transformer, f);
    for (std::size_t i = 0; i < dec.size(); ++i)
      dec[i].visit(prefix + ".dec" + std::to_string(i), ParamGroup::transformer, f);
    f(prefix + ".query_embed", query_embed, ParamGroup::transformer);
  }
};

}  // namespace refseg::model
