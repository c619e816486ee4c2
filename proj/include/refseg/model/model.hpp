#pragma once

#include <string>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/model/seg_head.hpp"
#include "refseg/model/transformer.hpp"
#include "refseg/model/visual_encoder.hpp"
#include "refseg/synthgen/vocab.hpp"

namespace refseg::model {

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int enc_layers = 3;
  int dec_layers = 3;
  int ffn_dim = 128;
  int num_queries = 8;
  int d_seg = 8;
  int d_text = 64;
  int c1 = 32, c2 = 64, cv = 128;
  int fpn16 = 64, fpn8 = 32, fpn4 = 16;
  int gn_groups = 8;
  int temporal_kernel = 3;
  bool temporal_mixing = true;
  int vocab = synthgen::vocab_size();
  int l_max = 5;

  void validate() const {
    if (d_model % 4 != 0 || d_model % heads != 0)
      throw ConfigError("model: d_model must be divisible by 4 and by heads");
    if (!(c1 < c2 && c2 < cv)) throw ConfigError("model: channel widths must satisfy c1 < c2 < cv");
    if (fpn16 % gn_groups || fpn8 % gn_groups || fpn4 % gn_groups)
      throw ConfigError("model: FPN widths must be divisible by the GroupNorm groups");
    if (num_queries < 2) throw ConfigError("model: need at least two queries");
    if (d_text % heads != 0) throw ConfigError("model: d_text must be divisible by heads");
  }
};

// Plain-tensor view of one training/inference window.
template <typename Real>
struct SampleInput {
  Tensor<Real> frames;        // [T,3,H,W]
  std::vector<int> interest;  // window-relative frame indices
  std::vector<int> tokens;    // padded to l_max
  int token_len = 0;
};

template <typename Real>
struct LayerOutput {
  int queries = -1;      // [F,Nq,D]
  int kernels = -1;      // [F,Nq,Ds]
  int mask_logits = -1;  // [F,Nq,H0,W0]
  int mask_probs = -1;   // sigmoid of the logits
  int ref_probs = -1;    // [F,Nq,2]
};

template <typename Real>
struct ForwardResult {
  int fseg = -1;          // [F,Ds,H0/4,W0/4]
  int encoded = -1;       // [F,HW+L,D]
  int encoded_text = -1;  // [F,L,D]
  int h16 = 0, w16 = 0;
  std::vector<LayerOutput<Real>> layers;  // one per decoder layer
};

template <typename Real>
class Model {
 public:
  Model() = default;

  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    visual.resize(cfg_.c1, cfg_.c2, cfg_.cv, cfg_.temporal_kernel, cfg_.temporal_mixing);
    text.resize(cfg_.vocab, cfg_.d_text, cfg_.heads, cfg_.ffn_dim);
    proj_visual.resize(cfg_.cv, cfg_.d_model);
    proj_text.resize(cfg_.d_text, cfg_.d_model);
    transformer.resize(cfg_.d_model, cfg_.heads, cfg_.enc_layers, cfg_.dec_layers, cfg_.ffn_dim,
                       cfg_.num_queries);
    spatial.resize(cfg_.d_model, cfg_.c2, cfg_.c1, cfg_.fpn16, cfg_.fpn8, cfg_.fpn4, cfg_.d_seg,
                   cfg_.gn_groups);
    kernel_head.resize(cfg_.d_model, cfg_.d_seg);
    ref_head.resize(cfg_.d_model);
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    visual.init(rng);
    text.init(rng);
    proj_visual.init(rng);
    proj_text.init(rng);
    transformer.init(rng);
    spatial.init(rng);
    kernel_head.init(rng);
    ref_head.init(rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // (projected per-frame visual tokens [F,HW,D], projected text tokens [L,D])
  std::pair<int, int> project_to_shared(TapeBinder<Real>& bind, int s16, int text_emb) const {
    Tape<Real>& tape = bind.tape();
    const int vis_tokens = proj_visual.forward(bind, ops::chw_to_tokens(tape, s16));
    const int txt_tokens = proj_text.forward(bind, text_emb);
    return {vis_tokens, txt_tokens};
  }

  ForwardResult<Real> forward(Tape<Real>& tape, const SampleInput<Real>& in) const {
    TapeBinder<Real> bind(tape);
    return forward(bind, in);
  }

  ForwardResult<Real> forward(TapeBinder<Real>& bind, const SampleInput<Real>& in) const {
    Tape<Real>& tape = bind.tape();
    if (static_cast<int>(in.tokens.size()) != cfg_.l_max)
      throw std::invalid_argument("forward: token array must be padded to l_max");
    const int frames = tape.leaf(in.frames);
    const auto feats = visual.forward(bind, frames, in.interest);

    const int text_emb = text.forward(bind, in.tokens, in.token_len);
    auto [vis_tokens, txt_all] = project_to_shared(bind, feats.s16, text_emb);

    // trim padded text positions; they take no part in the multimodal blocks
    const int txt_trimmed = ops::reshape(
        tape,
        ops::slice_tokens(tape, ops::reshape(tape, txt_all, {1, cfg_.l_max, cfg_.d_model}), 0,
                          in.token_len),
        {in.token_len, cfg_.d_model});

    const auto& s16v = tape.value(feats.s16);
    const int h16 = s16v.dim(2), w16 = s16v.dim(3);
    const int seq = transformer.build_multimodal(bind, vis_tokens, txt_trimmed, h16, w16);
    const int encoded = transformer.encode(bind, seq);
    auto [e16, enc_text] = transformer.split_encoded(bind, encoded, h16, w16);

    ForwardResult<Real> out;
    out.encoded = encoded;
    out.encoded_text = enc_text;
    out.h16 = h16;
    out.w16 = w16;
    out.fseg = spatial.forward(bind, e16, feats.s8, feats.s4);

    for (int q : transformer.decode(bind, encoded)) {
      LayerOutput<Real> layer;
      layer.queries = q;
      layer.kernels = kernel_head.forward(bind, q);
      layer.mask_logits = predict_masks(tape, layer.kernels, out.fseg);
      layer.mask_probs = ops::sigmoid(tape, layer.mask_logits);
      layer.ref_probs = ref_head.forward(bind, q);
      out.layers.push_back(layer);
    }
    return out;
  }

  template <class F>
  void visit(F&& f) {
    visual.visit("visual", f);
    text.visit("text", f);
    proj_visual.visit("projection.visual", ParamGroup::transformer, f);
    proj_text.visit("projection.text", ParamGroup::transformer, f);
    transformer.visit("transformer", f);
    spatial.visit("spatial", f);
    kernel_head.visit("kernel_head", f);
    ref_head.visit("ref_head", f);
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    visit([&n](const std::string&, Tensor<Real>& t, ParamGroup) { n += t.size(); });
    return n;
  }

  VisualEncoder<Real> visual;
  TextEncoder<Real> text;
  LinearParams<Real> proj_visual, proj_text;
  MultimodalTransformer<Real> transformer;
  SpatialDecoder<Real> spatial;
  KernelHead<Real> kernel_head;
  ReferenceHead<Real> ref_head;

 private:
  ModelConfig cfg_;
};

}  // namespace refseg::model
