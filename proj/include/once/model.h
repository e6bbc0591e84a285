#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "once/encoder.h"
#include "once/recommender.h"

namespace once::model {

struct ModelConfig {
  encoder::EncoderConfig encoder;
  rec::HistoryConfig history;
  bool use_profiles = false;
};

// Retained activations for one training sample, reused by the backward pass.
template <class S>
struct SampleCtxT {
  std::vector<std::string> ids;  // distinct contents, first-seen order
  std::map<std::string, int> slot;
  std::vector<encoder::EncodeCtxT<S>> enc;
  std::vector<TensorT<S>> vecs;  // one d-vector per distinct content
  std::vector<int> hist_slots, cand_slots;
  rec::HistoryCtxT<S> hist;
  rec::ProfileCtxT<S> prof;
  TensorT<S> v_user;
  std::vector<S> logits, probs;
};

// Content encoder + history encoder + optional profile fusion + dot-product
// scoring over k+1 candidates with softmax cross-entropy.
template <class S>
class RecModelT {
 public:
  RecModelT(const ModelConfig& cfg, int vocab_size, const rec::ProfileVocab& pv,
            Rng& rng)
      : cfg_(cfg),
        enc_(cfg.encoder, vocab_size, rng),
        hist_(cfg.history, cfg.encoder.out_dim, rng) {
    if (cfg_.use_profiles) {
      prof_.emplace(pv, cfg.encoder.out_dim, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  encoder::EncoderT<S>& content_encoder() { return enc_; }
  rec::HistoryEncoderT<S>& history_encoder() { return hist_; }
  bool uses_profiles() const { return prof_.has_value(); }

  ParamRefsT<S> params() {
    ParamRefsT<S> out = enc_.params();
    for (auto* p : hist_.params()) out.push_back(p);
    if (prof_) {
      for (auto* p : prof_->params()) out.push_back(p);
    }
    return out;
  }

  // Everything except adapter pairs; the set a pretrained snapshot loads into.
  ParamRefsT<S> base_params() {
    ParamRefsT<S> out;
    for (auto* p : params()) {
      if (p->name.find(".lora_") == std::string::npos) out.push_back(p);
    }
    return out;
  }

  // Full forward pass for one sample; returns the cross-entropy loss.
  S loss_forward(const corpus::Corpus& c, const rec::TrainSample& s,
                 SampleCtxT<S>& ctx) {
    if (s.positive < 0 || s.positive >= static_cast<int>(s.candidates.size())) {
      fail("loss: positive index ", s.positive, " out of range");
    }
    ctx.ids.clear();
    ctx.slot.clear();
    ctx.hist_slots.clear();
    ctx.cand_slots.clear();
    auto intern = [&](const std::string& id) {
      auto [it, fresh] = ctx.slot.emplace(id, static_cast<int>(ctx.ids.size()));
      if (fresh) ctx.ids.push_back(id);
      return it->second;
    };
    for (const auto& id : s.history) ctx.hist_slots.push_back(intern(id));
    for (const auto& id : s.candidates) ctx.cand_slots.push_back(intern(id));

    const int n = static_cast<int>(ctx.ids.size());
    const int d = cfg_.encoder.out_dim;
    ctx.enc.resize(n);
    ctx.vecs.resize(n);
    for (int i = 0; i < n; ++i) {
      enc_.encode(ctx.ids[i], c.content(ctx.ids[i]).tokens, ctx.enc[i], ctx.vecs[i]);
    }

    TensorT<S> hist_matrix;
    stack_rows(ctx.hist_slots, ctx.vecs, d, hist_matrix);
    TensorT<S> v_u;
    hist_.forward(hist_matrix, ctx.hist, v_u);
    if (prof_) {
      prof_->forward(v_u, c.user(s.user_id).profile, ctx.prof, ctx.v_user);
    } else {
      ctx.v_user = std::move(v_u);
    }

    TensorT<S> cands;
    stack_rows(ctx.cand_slots, ctx.vecs, d, cands);
    rec::score_candidates(ctx.v_user, cands, ctx.logits);
    return softmax_ce_fwd(ctx.logits, s.positive, ctx.probs);
  }

  // Accumulates gradients into every trainable parameter. Call after
  // loss_forward with the same ctx.
  void loss_backward(const rec::TrainSample& s, SampleCtxT<S>& ctx,
                     S dl = S(1)) {
    const int d = cfg_.encoder.out_dim;
    std::vector<S> d_logits;
    softmax_ce_bwd(ctx.probs, s.positive, dl, d_logits);

    std::vector<TensorT<S>> d_vecs(ctx.ids.size());
    for (auto& t : d_vecs) {
      t.shape = {d};
      t.data.assign(d, S(0));
    }

    TensorT<S> d_vuser;
    d_vuser.shape = {d};
    d_vuser.data.assign(d, S(0));
    for (size_t j = 0; j < d_logits.size(); ++j) {
      const auto& vj = ctx.vecs[ctx.cand_slots[j]];
      axpy(d_logits[j], vj.data.data(), d_vuser.data.data(), d);
      axpy(d_logits[j], ctx.v_user.data.data(),
           d_vecs[ctx.cand_slots[j]].data.data(), d);
    }

    TensorT<S> d_vu;
    if (prof_) {
      prof_->backward(ctx.prof, d_vuser, d_vu);
    } else {
      d_vu = std::move(d_vuser);
    }

    TensorT<S> d_hist;
    hist_.backward(ctx.hist, d_vu, d_hist);
    for (size_t i = 0; i < ctx.hist_slots.size(); ++i) {
      axpy(S(1), d_hist.row(static_cast<int>(i)),
           d_vecs[ctx.hist_slots[i]].data.data(), d);
    }

    for (size_t i = 0; i < ctx.ids.size(); ++i) {
      enc_.encode_bwd(ctx.enc[i], d_vecs[i]);
    }
  }

  // Encodes every corpus content once (no gradient retention); the basis for
  // evaluation scoring.
  std::map<std::string, TensorT<S>> encode_contents(const corpus::Corpus& c) {
    std::map<std::string, TensorT<S>> out;
    encoder::EncodeCtxT<S> scratch;
    for (const auto& [id, item] : c.contents) {
      TensorT<S> v;
      enc_.encode(id, item.tokens, scratch, v);
      out.emplace(id, std::move(v));
    }
    return out;
  }

  TensorT<S> user_vector(const corpus::UserRecord& user,
                         const std::map<std::string, TensorT<S>>& content_vecs) {
    const int d = cfg_.encoder.out_dim;
    const auto history = rec::effective_history(user, cfg_.history.max_history);
    TensorT<S> hist_matrix;
    hist_matrix.shape = {static_cast<int>(history.size()), d};
    hist_matrix.data.reserve(history.size() * d);
    for (const auto& id : history) {
      const auto& v = content_vecs.at(id);
      hist_matrix.data.insert(hist_matrix.data.end(), v.data.begin(), v.data.end());
    }
    rec::HistoryCtxT<S> hctx;
    TensorT<S> v_u;
    hist_.forward(hist_matrix, hctx, v_u);
    if (!prof_) return v_u;
    rec::ProfileCtxT<S> pctx;
    TensorT<S> v_iu;
    prof_->forward(v_u, user.profile, pctx, v_iu);
    return v_iu;
  }

  std::vector<double> score_impression(const corpus::Corpus& c,
                                       const corpus::Impression& imp,
                                       const std::map<std::string, TensorT<S>>& content_vecs) {
    const auto v_user = user_vector(c.user(imp.user_id), content_vecs);
    std::vector<double> scores;
    scores.reserve(imp.candidates.size());
    const int d = cfg_.encoder.out_dim;
    for (const auto& id : imp.candidates) {
      const auto& v = content_vecs.at(id);
      scores.push_back(static_cast<double>(dot(v_user.data.data(), v.data.data(), d)));
    }
    return scores;
  }

 private:
  static void stack_rows(const std::vector<int>& slots,
                         const std::vector<TensorT<S>>& vecs, int d,
                         TensorT<S>& out) {
    out.shape = {static_cast<int>(slots.size()), d};
    out.data.clear();
    out.data.reserve(slots.size() * d);
    for (int s : slots) {
      out.data.insert(out.data.end(), vecs[s].data.begin(), vecs[s].data.end());
    }
  }

  ModelConfig cfg_;
  encoder::EncoderT<S> enc_;
  rec::HistoryEncoderT<S> hist_;
  std::optional<rec::ProfileModuleT<S>> prof_;
};

using RecModel = RecModelT<float>;

}  // namespace once::model
