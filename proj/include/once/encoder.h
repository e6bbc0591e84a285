#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "once/corpus.h"
#include "once/ops.h"
#include "once/param.h"
#include "once/sha256.h"

namespace once::encoder {

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
};

struct EncoderConfig {
  int layers = 4;        // transformer depth H
  int width = 128;       // hidden width d_n
  int heads = 4;
  int ffn_width = 256;   // feed-forward width
  int out_dim = 64;      // fused output dim d
  int max_len = 32;      // position table length
  int tuned_layers = 4;  // top layers left trainable
  std::optional<LoraConfig> lora;

  void validate() const {
    if (layers < 1) fail("encoder config: layers must be >= 1");
    if (width % heads != 0) {
      fail("encoder config: width ", width, " not divisible by ", heads, " heads");
    }
    if (out_dim > width) {
      fail("encoder config: out_dim ", out_dim, " exceeds width ", width);
    }
    if (tuned_layers < 0 || tuned_layers > layers) {
      fail("encoder config: tuned_layers ", tuned_layers, " outside [0, ", layers, "]");
    }
    if (max_len < 1) fail("encoder config: max_len must be >= 1");
    if (lora && lora->rank < 1) fail("encoder config: lora rank must be >= 1");
  }
};

// Per-content boundary activations: everything below the tuned layers,
// computed once and reused.
template <class S>
struct HiddenCacheT {
  Digest fingerprint{};
  std::map<std::string, TensorT<S>> entries;  // content id -> (seq_len x width)
};

using HiddenCache = HiddenCacheT<float>;

template <class S>
struct LoraPairT {
  ParameterT<S> a;  // (rank x d_in)
  ParameterT<S> b;  // (d_out x rank)
  double scale = 0.0;  // alpha / rank
};

template <class S>
struct EncoderLayerT {
  ParameterT<S> ln1_g, ln1_b;
  ParameterT<S> wq, wk, wv, wo;
  ParameterT<S> ln2_g, ln2_b;
  ParameterT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  std::optional<LoraPairT<S>> lora_q, lora_v;
};

template <class S>
struct LayerCtxT {
  LayerNormCtxT<S> ln1, ln2;
  LinearCtxT<S> q, k, v, o, f1, f2;
  TensorT<S> lora_q_mid, lora_v_mid;  // x A^T activations for adapter grads
  AttentionCtxT<S> attn;
  ActCtxT<S> gelu;
};

template <class S>
struct EncodeCtxT {
  std::vector<int> ids;        // trailing pads stripped
  int start_layer = 0;         // first executed layer (freeze boundary on cache hits)
  std::vector<LayerCtxT<S>> layers;  // contexts for layers >= freeze boundary
  LinearCtxT<S> proj;
  AdditivePoolCtxT<S> pool;
};

// Content encoder: token + learned position embeddings, a causal pre-norm
// transformer stack with GELU feed-forward blocks, a linear projection to
// out_dim, and additive attention pooling over positions. Layers below
// layers - tuned_layers are frozen; their boundary activations can be
// precomputed into a HiddenCache keyed by content id.
template <class S>
class EncoderT {
 public:
  EncoderT(const EncoderConfig& cfg, int vocab_size, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    if (vocab_size < 2) fail("encoder: vocabulary too small");
    auto glorot = [&rng](std::vector<int> shape) {
      return TensorT<S>::glorot(shape[0], shape[1], rng);
    };
    tok_emb_ = ParameterT<S>("enc.tok_emb",
                             TensorT<S>::gaussian({vocab_size, cfg_.width}, rng, 0.02));
    pos_emb_ = ParameterT<S>("enc.pos_emb",
                             TensorT<S>::gaussian({cfg_.max_len, cfg_.width}, rng, 0.02));
    layers_.resize(cfg_.layers);
    for (int i = 0; i < cfg_.layers; ++i) {
      auto& L = layers_[i];
      const std::string p = "enc.layer" + std::to_string(i) + ".";
      auto ones = TensorT<S>({cfg_.width});
      ones.fill(S(1));
      L.ln1_g = ParameterT<S>(p + "ln1.g", ones);
      L.ln1_b = ParameterT<S>(p + "ln1.b", TensorT<S>({cfg_.width}));
      L.wq = ParameterT<S>(p + "wq", glorot({cfg_.width, cfg_.width}));
      L.wk = ParameterT<S>(p + "wk", glorot({cfg_.width, cfg_.width}));
      L.wv = ParameterT<S>(p + "wv", glorot({cfg_.width, cfg_.width}));
      L.wo = ParameterT<S>(p + "wo", glorot({cfg_.width, cfg_.width}));
      L.ln2_g = ParameterT<S>(p + "ln2.g", ones);
      L.ln2_b = ParameterT<S>(p + "ln2.b", TensorT<S>({cfg_.width}));
      L.ffn_w1 = ParameterT<S>(p + "ffn.w1", glorot({cfg_.width, cfg_.ffn_width}));
      L.ffn_b1 = ParameterT<S>(p + "ffn.b1", TensorT<S>({cfg_.ffn_width}));
      L.ffn_w2 = ParameterT<S>(p + "ffn.w2", glorot({cfg_.ffn_width, cfg_.width}));
      L.ffn_b2 = ParameterT<S>(p + "ffn.b2", TensorT<S>({cfg_.width}));
    }
    proj_w_ = ParameterT<S>("enc.proj.w", glorot({cfg_.width, cfg_.out_dim}));
    proj_b_ = ParameterT<S>("enc.proj.b", TensorT<S>({cfg_.out_dim}));
    fuse_wa_ = ParameterT<S>("enc.fuse.wa", glorot({cfg_.out_dim, cfg_.out_dim}));
    fuse_ba_ = ParameterT<S>("enc.fuse.ba", TensorT<S>({cfg_.out_dim}));
    fuse_q_ = ParameterT<S>("enc.fuse.q", TensorT<S>::glorot(cfg_.out_dim, 1, rng));
    fuse_q_.value.shape = {cfg_.out_dim};
    fuse_q_.grad.shape = {cfg_.out_dim};
    lora_rng_ = rng.fork(0x10ad);
    set_freeze(cfg_.tuned_layers);
  }

  const EncoderConfig& config() const { return cfg_; }
  int frozen_below() const { return cfg_.layers - cfg_.tuned_layers; }

  // Marks layers below the boundary (and the embedding tables, unless
  // everything is tuned) frozen and tagged "pretrained"; everything else is
  // trainable and "fresh". Adapter pairs are (re)created on the tuned
  // layers' query/value projections, whose base weights then stay frozen.
  // Call before the optimizer is constructed.
  void set_freeze(int k_tuned) {
    if (k_tuned < 0 || k_tuned > cfg_.layers) {
      fail("set_freeze: k_tuned ", k_tuned, " outside [0, ", cfg_.layers, "]");
    }
    cfg_.tuned_layers = k_tuned;
    const int boundary = frozen_below();
    const bool freeze_embeddings = k_tuned < cfg_.layers;
    mark(tok_emb_, freeze_embeddings);
    mark(pos_emb_, freeze_embeddings);
    for (int i = 0; i < cfg_.layers; ++i) {
      auto& L = layers_[i];
      const bool frozen = i < boundary;
      for (auto* p : {&L.ln1_g, &L.ln1_b, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_g,
                      &L.ln2_b, &L.ffn_w1, &L.ffn_b1, &L.ffn_w2, &L.ffn_b2}) {
        mark(*p, frozen);
      }
      if (!frozen && cfg_.lora) {
        if (!L.lora_q) {
          L.lora_q = make_lora("enc.layer" + std::to_string(i) + ".wq");
          L.lora_v = make_lora("enc.layer" + std::to_string(i) + ".wv");
        }
        // Base projections adapt through the low-rank pairs only.
        mark(L.wq, true);
        mark(L.wv, true);
      } else if (frozen && L.lora_q) {
        L.lora_q.reset();
        L.lora_v.reset();
      }
    }
    mark(proj_w_, false);
    mark(proj_b_, false);
    mark(fuse_wa_, false);
    mark(fuse_ba_, false);
    mark(fuse_q_, false);
  }

  // All parameters, adapters included (optimizer + checkpoint order).
  ParamRefsT<S> params() {
    ParamRefsT<S> out{&tok_emb_, &pos_emb_};
    for (auto& L : layers_) {
      for (auto* p : {&L.ln1_g, &L.ln1_b, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_g,
                      &L.ln2_b, &L.ffn_w1, &L.ffn_b1, &L.ffn_w2, &L.ffn_b2}) {
        out.push_back(p);
      }
      if (L.lora_q) {
        out.push_back(&L.lora_q->a);
        out.push_back(&L.lora_q->b);
        out.push_back(&L.lora_v->a);
        out.push_back(&L.lora_v->b);
      }
    }
    for (auto* p : {&proj_w_, &proj_b_, &fuse_wa_, &fuse_ba_, &fuse_q_}) {
      out.push_back(p);
    }
    return out;
  }

  // Parameters that exist independent of adapter placement; the set a
  // pretrained snapshot is loaded into.
  ParamRefsT<S> base_params() {
    ParamRefsT<S> out;
    for (auto* p : params()) {
      if (p->name.find(".lora_") == std::string::npos) out.push_back(p);
    }
    return out;
  }

  // Verifies the cache was built under the current frozen parameters,
  // template, and vocabulary before any entry is consulted.
  void attach_cache(const HiddenCacheT<S>* cache, const corpus::Vocabulary& vocab,
                    const corpus::ContentTemplate& tmpl) {
    if (cache && cache->fingerprint != frozen_fingerprint(vocab, tmpl)) {
      fail("encoder: cache fingerprint does not match the current frozen ",
           "parameters; rebuild the cache");
    }
    cache_ = cache;
  }

  // Digest of everything that determines the boundary activations: config
  // prefix, frozen parameter values, template text, and vocabulary.
  Digest frozen_fingerprint(const corpus::Vocabulary& vocab,
                            const corpus::ContentTemplate& tmpl) {
    Sha256 h;
    h.update("once-cache-v1|");
    h.update(format(cfg_.layers, "|", cfg_.width, "|", cfg_.heads, "|",
                    cfg_.ffn_width, "|", cfg_.out_dim, "|", cfg_.max_len, "|",
                    frozen_below(), "|"));
    for (auto* p : params()) {
      if (!p->frozen) continue;
      h.update(p->name);
      h.update(p->value.data.data(), p->value.data.size() * sizeof(S));
    }
    h.update(tmpl.describe());
    for (const auto& t : vocab.tokens) {
      h.update(t);
      h.update("\0", 1);
    }
    return h.finish();
  }

  // Runs the frozen prefix only: embeddings then layers below the boundary.
  TensorT<S> boundary_activations(const std::vector<int>& ids_in) {
    const auto ids = strip_pads(ids_in);
    TensorT<S> x;
    embedding_fwd(tok_emb_.value, pos_emb_.value, ids, x);
    LayerCtxT<S> scratch;
    TensorT<S> next;
    for (int i = 0; i < frozen_below(); ++i) {
      layer_fwd(i, x, scratch, next);
      x = std::move(next);
    }
    return x;
  }

  // Full content encoding. When a cache is attached and holds `id`, the
  // frozen prefix is skipped and the stored boundary tensor is used; the
  // result is identical bit-for-bit because the suffix computation is the
  // same operation sequence either way.
  void encode(const std::string& id, const std::vector<int>& ids_in,
              EncodeCtxT<S>& ctx, TensorT<S>& v_out) {
    ctx.ids = strip_pads(ids_in);
    const int boundary = frozen_below();
    TensorT<S> x;
    ctx.start_layer = boundary;
    if (const TensorT<S>* hit = cache_lookup(id)) {
      x = *hit;
    } else {
      embedding_fwd(tok_emb_.value, pos_emb_.value, ctx.ids, x);
      LayerCtxT<S> scratch;
      TensorT<S> next;
      for (int i = 0; i < boundary; ++i) {
        layer_fwd(i, x, scratch, next);
        x = std::move(next);
      }
    }
    ctx.layers.resize(cfg_.layers - boundary);
    TensorT<S> next;
    for (int i = boundary; i < cfg_.layers; ++i) {
      layer_fwd(i, x, ctx.layers[i - boundary], next);
      x = std::move(next);
    }
    TensorT<S> z;
    linear_fwd(x, proj_w_.value, &proj_b_.value, ctx.proj, z);
    additive_pool_fwd(z, fuse_wa_.value, fuse_ba_.value, fuse_q_.value, ctx.pool, v_out);
  }

  // Accumulates gradients for every trainable parameter reached from v_out.
  // Descends only to the freeze boundary; embedding gradients are produced
  // only when nothing is frozen.
  void encode_bwd(const EncodeCtxT<S>& ctx, const TensorT<S>& d_v) {
    TensorT<S> dz, dx;
    additive_pool_bwd(ctx.pool, fuse_wa_.value, fuse_q_.value, d_v, dz,
                      fuse_wa_.grad, fuse_ba_.grad, fuse_q_.grad);
    linear_bwd(ctx.proj, proj_w_.value, dz, &dx, &proj_w_.grad, &proj_b_.grad);
    const int boundary = ctx.start_layer;
    for (int i = cfg_.layers - 1; i >= boundary; --i) {
      TensorT<S> dprev;
      const bool need_dx = i > boundary || boundary == 0;
      layer_bwd(i, ctx.layers[i - boundary], dx, dprev, need_dx);
      if (need_dx) dx = std::move(dprev);
    }
    if (boundary == 0) {
      embedding_bwd(ctx.ids, dx, tok_emb_.grad, pos_emb_.grad);
    }
  }

  // Folds (alpha/rank) * B A into the base query/value weights and drops the
  // adapters, so subsequent forwards use plain projections.
  void merge_lora() {
    for (auto& L : layers_) {
      if (!L.lora_q) continue;
      fold(L.wq, *L.lora_q);
      fold(L.wv, *L.lora_v);
      L.lora_q.reset();
      L.lora_v.reset();
    }
  }

 private:
  static void mark(ParameterT<S>& p, bool frozen) {
    p.frozen = frozen;
    p.group = frozen ? ParamGroup::pretrained : ParamGroup::fresh;
  }

  LoraPairT<S> make_lora(const std::string& base) {
    LoraPairT<S> pair;
    pair.a = ParameterT<S>(
        base + ".lora_a",
        TensorT<S>::gaussian({cfg_.lora->rank, cfg_.width}, lora_rng_, 0.02));
    pair.b = ParameterT<S>(base + ".lora_b",
                           TensorT<S>({cfg_.width, cfg_.lora->rank}));
    pair.scale = cfg_.lora->alpha / cfg_.lora->rank;
    return pair;
  }

  void fold(ParameterT<S>& w, const LoraPairT<S>& pair) {
    const auto& a = pair.a.value;  // (r x d_in)
    const auto& b = pair.b.value;  // (d_out x r)
    const int r = a.shape[0], din = a.shape[1], dout = b.shape[0];
    for (int k = 0; k < r; ++k) {
      for (int i = 0; i < din; ++i) {
        const S av = a.at(k, i);
        if (av == S(0)) continue;
        for (int j = 0; j < dout; ++j) {
          w.value.at(i, j) += static_cast<S>(pair.scale) * av * b.at(j, k);
        }
      }
    }
  }

  static std::vector<int> strip_pads(const std::vector<int>& ids) {
    std::vector<int> out = ids;
    while (!out.empty() && out.back() == corpus::Vocabulary::PAD) out.pop_back();
    if (out.empty()) fail("encoder: cannot encode an empty token sequence");
    return out;
  }

  const TensorT<S>* cache_lookup(const std::string& id) const {
    if (!cache_ || frozen_below() == 0) return nullptr;
    auto it = cache_->entries.find(id);
    return it == cache_->entries.end() ? nullptr : &it->second;
  }

  // y = x W (+ adapters); mid keeps x A^T for the backward pass.
  void project_fwd(const TensorT<S>& x, const ParameterT<S>& w,
                   const std::optional<LoraPairT<S>>& lora, LinearCtxT<S>& ctx,
                   TensorT<S>& mid, TensorT<S>& y) const {
    linear_fwd<S>(x, w.value, nullptr, ctx, y);
    if (!lora) return;
    matmul_nt(x, lora->a.value, mid);
    TensorT<S> delta;
    matmul_nt(mid, lora->b.value, delta);
    const S s = static_cast<S>(lora->scale);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += s * delta.data[i];
  }

  void project_bwd(const LinearCtxT<S>& ctx, ParameterT<S>& w,
                   std::optional<LoraPairT<S>>& lora, const TensorT<S>& mid,
                   const TensorT<S>& dy, TensorT<S>& dx_acc) {
    TensorT<S> dx;
    linear_bwd<S>(ctx, w.value, dy, &dx, w.frozen ? nullptr : &w.grad, nullptr);
    if (lora) {
      const S s = static_cast<S>(lora->scale);
      TensorT<S> sdy = dy;
      for (auto& v : sdy.data) v *= s;
      matmul_tn_acc(sdy, mid, lora->b.grad);     // dB += s dy^T mid  (d_out x r)
      TensorT<S> dmid;
      matmul(sdy, lora->b.value, dmid);          // (l x r)
      matmul_tn_acc(dmid, ctx.x, lora->a.grad);  // dA += dmid^T x   (r x d_in)
      TensorT<S> dx_lora;
      matmul(dmid, lora->a.value, dx_lora);      // (l x d_in)
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_lora.data[i];
    }
    if (dx_acc.data.empty()) {
      dx_acc = std::move(dx);
    } else {
      for (size_t i = 0; i < dx.data.size(); ++i) dx_acc.data[i] += dx.data[i];
    }
  }

  void layer_fwd(int i, const TensorT<S>& x, LayerCtxT<S>& ctx, TensorT<S>& out) {
    auto& L = layers_[i];
    TensorT<S> a, q, k, v, att, att_o;
    layer_norm_fwd(x, L.ln1_g.value, L.ln1_b.value, ctx.ln1, a);
    project_fwd(a, L.wq, L.lora_q, ctx.q, ctx.lora_q_mid, q);
    linear_fwd<S>(a, L.wk.value, nullptr, ctx.k, k);
    project_fwd(a, L.wv, L.lora_v, ctx.v, ctx.lora_v_mid, v);
    causal_attention_fwd(q, k, v, cfg_.heads, ctx.attn, att);
    linear_fwd<S>(att, L.wo.value, nullptr, ctx.o, att_o);

    TensorT<S> x1 = x;
    for (size_t t = 0; t < x1.data.size(); ++t) x1.data[t] += att_o.data[t];

    TensorT<S> b, h, g, f;
    layer_norm_fwd(x1, L.ln2_g.value, L.ln2_b.value, ctx.ln2, b);
    linear_fwd(b, L.ffn_w1.value, &L.ffn_b1.value, ctx.f1, h);
    gelu_fwd(h, ctx.gelu, g);
    linear_fwd(g, L.ffn_w2.value, &L.ffn_b2.value, ctx.f2, f);

    out = std::move(x1);
    for (size_t t = 0; t < out.data.size(); ++t) out.data[t] += f.data[t];
  }

  void layer_bwd(int i, const LayerCtxT<S>& ctx, const TensorT<S>& d_out,
                 TensorT<S>& dx, bool need_dx) {
    auto& L = layers_[i];
    // feed-forward branch
    TensorT<S> dg, dh, db, dx1_ln;
    linear_bwd(ctx.f2, L.ffn_w2.value, d_out, &dg, &L.ffn_w2.grad, &L.ffn_b2.grad);
    gelu_bwd(ctx.gelu, dg, dh);
    linear_bwd(ctx.f1, L.ffn_w1.value, dh, &db, &L.ffn_w1.grad, &L.ffn_b1.grad);
    layer_norm_bwd(ctx.ln2, L.ln2_g.value, db, dx1_ln, L.ln2_g.grad, L.ln2_b.grad);

    TensorT<S> dx1 = d_out;  // residual
    for (size_t t = 0; t < dx1.data.size(); ++t) dx1.data[t] += dx1_ln.data[t];

    // attention branch
    TensorT<S> datt, dq, dk, dv;
    linear_bwd<S>(ctx.o, L.wo.value, dx1, &datt, &L.wo.grad, nullptr);
    causal_attention_bwd(ctx.attn, datt, dq, dk, dv);

    TensorT<S> da;
    project_bwd(ctx.q, L.wq, L.lora_q, ctx.lora_q_mid, dq, da);
    {
      TensorT<S> da_k;
      linear_bwd<S>(ctx.k, L.wk.value, dk, &da_k, &L.wk.grad, nullptr);
      for (size_t t = 0; t < da.data.size(); ++t) da.data[t] += da_k.data[t];
    }
    project_bwd(ctx.v, L.wv, L.lora_v, ctx.lora_v_mid, dv, da);

    if (need_dx) {
      TensorT<S> dx_ln;
      layer_norm_bwd(ctx.ln1, L.ln1_g.value, da, dx_ln, L.ln1_g.grad, L.ln1_b.grad);
      dx = std::move(dx1);
      for (size_t t = 0; t < dx.data.size(); ++t) dx.data[t] += dx_ln.data[t];
    } else {
      // Parameter gradients for ln1 are still needed on the boundary layer.
      TensorT<S> dx_ln;
      layer_norm_bwd(ctx.ln1, L.ln1_g.value, da, dx_ln, L.ln1_g.grad, L.ln1_b.grad);
    }
  }

  EncoderConfig cfg_;
  ParameterT<S> tok_emb_, pos_emb_;
  std::vector<EncoderLayerT<S>> layers_;
  ParameterT<S> proj_w_, proj_b_;
  ParameterT<S> fuse_wa_, fuse_ba_, fuse_q_;
  Rng lora_rng_{0};
  const HiddenCacheT<S>* cache_ = nullptr;
};

using Encoder = EncoderT<float>;

// Cache file IO ("ONCH"): little-endian {magic, version u32, fingerprint
// 32 bytes, entry count u32, then per entry {id length u32, id, seq_len u32,
// width u32, raw f32 data}}. Entries are written in sorted id order, so
// rebuilding an unchanged encoder yields a byte-identical file.
void save_cache(const std::string& path, const HiddenCache& cache);
HiddenCache load_cache(const std::string& path);

// Runs the frozen prefix for every content in the corpus. Requires
// finalized tokens. With nothing frozen the cache is empty (a warning is
// printed) since there is no prefix to reuse.
HiddenCache build_cache(const corpus::Corpus& corpus, EncoderT<float>& enc);

}  // namespace once::encoder
