#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "once/corpus.h"
#include "once/ops.h"
#include "once/param.h"

namespace once::rec {

enum class HistoryKind { attention_pool, self_attention };

struct HistoryConfig {
  HistoryKind kind = HistoryKind::attention_pool;
  int heads = 4;         // self_attention only
  int max_history = 50;  // most recent items kept

  void validate() const {
    if (max_history < 1) fail("history config: max_history must be >= 1");
    if (heads < 1) fail("history config: heads must be >= 1");
  }
};

template <class S>
struct HistoryCtxT {
  bool empty = false;
  LinearCtxT<S> q, k;     // self_attention only
  AttentionCtxT<S> attn;  // self_attention only
  AdditivePoolCtxT<S> pool;
};

// Aggregates a (m x d) stack of browsed-content vectors into one d-vector.
// attention_pool: additive attention straight over the stack. self_attention:
// one bidirectional multi-head layer first — learned query/key projections,
// raw rows as values, so a history of identical vectors reproduces that
// vector — then the same additive pooling. An empty history yields a zero
// vector.
template <class S>
class HistoryEncoderT {
 public:
  HistoryEncoderT() = default;
  HistoryEncoderT(const HistoryConfig& cfg, int dim, Rng& rng) : cfg_(cfg), dim_(dim) {
    cfg_.validate();
    if (dim % cfg_.heads != 0 && cfg_.kind == HistoryKind::self_attention) {
      fail("history config: dim ", dim, " not divisible by ", cfg_.heads, " heads");
    }
    if (cfg_.kind == HistoryKind::self_attention) {
      wq_ = ParameterT<S>("hist.wq", TensorT<S>::glorot(dim, dim, rng));
      wk_ = ParameterT<S>("hist.wk", TensorT<S>::glorot(dim, dim, rng));
    }
    pool_wa_ = ParameterT<S>("hist.pool.wa", TensorT<S>::glorot(dim, dim, rng));
    pool_ba_ = ParameterT<S>("hist.pool.ba", TensorT<S>({dim}));
    pool_q_ = ParameterT<S>("hist.pool.q", TensorT<S>::glorot(dim, 1, rng));
    pool_q_.value.shape = {dim};
    pool_q_.grad.shape = {dim};
  }

  const HistoryConfig& config() const { return cfg_; }

  ParamRefsT<S> params() {
    ParamRefsT<S> out;
    if (cfg_.kind == HistoryKind::self_attention) {
      out.push_back(&wq_);
      out.push_back(&wk_);
    }
    out.push_back(&pool_wa_);
    out.push_back(&pool_ba_);
    out.push_back(&pool_q_);
    return out;
  }

  void forward(const TensorT<S>& x, HistoryCtxT<S>& ctx, TensorT<S>& v_u) {
    ctx.empty = x.data.empty();
    if (ctx.empty) {
      v_u.shape = {dim_};
      v_u.data.assign(dim_, S(0));
      return;
    }
    const TensorT<S>* pooled = &x;
    TensorT<S> attended;
    if (cfg_.kind == HistoryKind::self_attention) {
      TensorT<S> q, k;
      linear_fwd<S>(x, wq_.value, nullptr, ctx.q, q);
      linear_fwd<S>(x, wk_.value, nullptr, ctx.k, k);
      attention_fwd(q, k, x, cfg_.heads, false, ctx.attn, attended);
      pooled = &attended;
    }
    additive_pool_fwd(*pooled, pool_wa_.value, pool_ba_.value, pool_q_.value,
                      ctx.pool, v_u);
  }

  // dx gets d(loss)/d(input rows); empty history produces an empty dx.
  void backward(const HistoryCtxT<S>& ctx, const TensorT<S>& d_vu, TensorT<S>& dx) {
    if (ctx.empty) {
      dx = TensorT<S>();
      return;
    }
    TensorT<S> d_pooled;
    additive_pool_bwd(ctx.pool, pool_wa_.value, pool_q_.value, d_vu, d_pooled,
                      pool_wa_.grad, pool_ba_.grad, pool_q_.grad);
    if (cfg_.kind == HistoryKind::attention_pool) {
      dx = std::move(d_pooled);
      return;
    }
    TensorT<S> dq, dk, dv;
    attention_bwd(ctx.attn, d_pooled, dq, dk, dv);
    dx = std::move(dv);  // raw rows served as values
    TensorT<S> dx_q, dx_k;
    linear_bwd<S>(ctx.q, wq_.value, dq, &dx_q, &wq_.grad, nullptr);
    linear_bwd<S>(ctx.k, wk_.value, dk, &dx_k, &wk_.grad, nullptr);
    for (size_t i = 0; i < dx.data.size(); ++i) {
      dx.data[i] += dx_q.data[i] + dx_k.data[i];
    }
  }

 private:
  HistoryConfig cfg_;
  int dim_ = 0;
  ParameterT<S> wq_, wk_;
  ParameterT<S> pool_wa_, pool_ba_, pool_q_;
};

// String-to-row maps for profile topics and regions. Row 0 of each table is
// the UNK row every unseen string maps to.
struct ProfileVocab {
  std::map<std::string, int> topics;
  std::map<std::string, int> regions;

  static constexpr int UNK = 0;

  int topic_rows() const { return static_cast<int>(topics.size()) + 1; }
  int region_rows() const { return static_cast<int>(regions.size()) + 1; }
  int topic(const std::string& s) const {
    auto it = topics.find(s);
    return it == topics.end() ? UNK : it->second;
  }
  int region(const std::string& s) const {
    auto it = regions.find(s);
    return it == regions.end() ? UNK : it->second;
  }

  // Collects every topic/region string appearing in user profiles, in sorted
  // order, so index assignment is deterministic.
  static ProfileVocab build(const corpus::Corpus& c) {
    std::set<std::string> ts, rs;
    for (const auto& [id, user] : c.users) {
      if (!user.profile) continue;
      ts.insert(user.profile->topics.begin(), user.profile->topics.end());
      rs.insert(user.profile->regions.begin(), user.profile->regions.end());
    }
    ProfileVocab v;
    int i = 1;
    for (const auto& t : ts) v.topics.emplace(t, i++);
    i = 1;
    for (const auto& r : rs) v.regions.emplace(r, i++);
    return v;
  }
};

template <class S>
struct ProfileCtxT {
  std::vector<int> topic_ids, region_ids;
  TensorT<S> joined;  // (1 x 3d) [v_u ; mean topics ; mean regions]
  LinearCtxT<S> l1, l2;
  ActCtxT<S> relu;
};

// Interest-profile fusion: v_i = [mean topic rows ; mean region rows] (2d),
// an empty or absent list pooling to zeros, then v_iu = W2 relu(W1 [v_u; v_i]
// + b1) + b2. The fused vector replaces the plain user vector everywhere.
template <class S>
class ProfileModuleT {
 public:
  ProfileModuleT() = default;
  ProfileModuleT(const ProfileVocab& vocab, int dim, Rng& rng)
      : vocab_(vocab), dim_(dim) {
    topics_ = ParameterT<S>(
        "prof.topics", TensorT<S>::gaussian({vocab_.topic_rows(), dim}, rng, 0.02));
    regions_ = ParameterT<S>(
        "prof.regions", TensorT<S>::gaussian({vocab_.region_rows(), dim}, rng, 0.02));
    w1_ = ParameterT<S>("prof.mlp.w1", TensorT<S>::glorot(3 * dim, dim, rng));
    b1_ = ParameterT<S>("prof.mlp.b1", TensorT<S>({dim}));
    w2_ = ParameterT<S>("prof.mlp.w2", TensorT<S>::glorot(dim, dim, rng));
    b2_ = ParameterT<S>("prof.mlp.b2", TensorT<S>({dim}));
  }

  const ProfileVocab& vocab() const { return vocab_; }

  ParamRefsT<S> params() {
    return {&topics_, &regions_, &w1_, &b1_, &w2_, &b2_};
  }

  void forward(const TensorT<S>& v_u, const std::optional<corpus::Profile>& profile,
               ProfileCtxT<S>& ctx, TensorT<S>& v_iu) {
    ctx.topic_ids.clear();
    ctx.region_ids.clear();
    if (profile) {
      for (const auto& t : profile->topics) ctx.topic_ids.push_back(vocab_.topic(t));
      for (const auto& r : profile->regions) ctx.region_ids.push_back(vocab_.region(r));
    }
    // Canonical order makes the mean bit-exactly permutation invariant.
    std::sort(ctx.topic_ids.begin(), ctx.topic_ids.end());
    std::sort(ctx.region_ids.begin(), ctx.region_ids.end());
    ctx.joined.shape = {1, 3 * dim_};
    ctx.joined.data.assign(3 * dim_, S(0));
    std::copy(v_u.data.begin(), v_u.data.end(), ctx.joined.data.begin());
    mean_rows(topics_.value, ctx.topic_ids, ctx.joined.data.data() + dim_);
    mean_rows(regions_.value, ctx.region_ids, ctx.joined.data.data() + 2 * dim_);

    TensorT<S> h, a, out;
    linear_fwd(ctx.joined, w1_.value, &b1_.value, ctx.l1, h);
    relu_fwd(h, ctx.relu, a);
    linear_fwd(a, w2_.value, &b2_.value, ctx.l2, out);
    v_iu.shape = {dim_};
    v_iu.data.assign(out.data.begin(), out.data.end());
  }

  void backward(const ProfileCtxT<S>& ctx, const TensorT<S>& d_viu, TensorT<S>& d_vu) {
    TensorT<S> dy;
    dy.shape = {1, dim_};
    dy.data.assign(d_viu.data.begin(), d_viu.data.end());
    TensorT<S> da, dh, djoined;
    linear_bwd(ctx.l2, w2_.value, dy, &da, &w2_.grad, &b2_.grad);
    relu_bwd(ctx.relu, da, dh);
    linear_bwd(ctx.l1, w1_.value, dh, &djoined, &w1_.grad, &b1_.grad);

    d_vu.shape = {dim_};
    d_vu.data.assign(djoined.data.begin(), djoined.data.begin() + dim_);
    scatter_mean(ctx.topic_ids, djoined.data.data() + dim_, topics_.grad);
    scatter_mean(ctx.region_ids, djoined.data.data() + 2 * dim_, regions_.grad);
  }

 private:
  void mean_rows(const TensorT<S>& table, const std::vector<int>& ids, S* dst) const {
    if (ids.empty()) return;  // dst stays zero
    for (int id : ids) {
      const S* row = table.row(id);
      for (int j = 0; j < dim_; ++j) dst[j] += row[j];
    }
    const S inv = S(1) / static_cast<S>(ids.size());
    for (int j = 0; j < dim_; ++j) dst[j] *= inv;
  }

  void scatter_mean(const std::vector<int>& ids, const S* d_mean, TensorT<S>& grad) const {
    if (ids.empty()) return;
    const S inv = S(1) / static_cast<S>(ids.size());
    for (int id : ids) {
      S* row = grad.row(id);
      for (int j = 0; j < dim_; ++j) row[j] += inv * d_mean[j];
    }
  }

  ProfileVocab vocab_;
  int dim_ = 0;
  ParameterT<S> topics_, regions_;
  ParameterT<S> w1_, b1_, w2_, b2_;
};

// logit_j = v_user . v_candidates[j]
template <class S>
void score_candidates(const TensorT<S>& v_user, const TensorT<S>& v_cands,
                      std::vector<S>& logits) {
  check_2d(v_cands, "score", "candidates");
  if (static_cast<int>(v_user.data.size()) != v_cands.shape[1]) {
    fail("score: user dim ", v_user.data.size(), " does not match candidates ",
         v_cands.shape_str());
  }
  const int n = v_cands.shape[0];
  logits.assign(n, S(0));
  for (int j = 0; j < n; ++j) {
    logits[j] = dot(v_user.data.data(), v_cands.row(j), v_cands.shape[1]);
  }
}

struct TrainSample {
  std::string user_id;
  std::vector<std::string> history;     // truncated, oldest first
  std::vector<std::string> candidates;  // k negatives plus one positive
  int positive = 0;                     // index into candidates
};

// Real history followed by synthetic items, truncated to the most recent
// max_history entries.
inline std::vector<std::string> effective_history(const corpus::UserRecord& user,
                                                  int max_history) {
  std::vector<std::string> h = user.history;
  h.insert(h.end(), user.synthetic_history.begin(), user.synthetic_history.end());
  if (static_cast<int>(h.size()) > max_history) {
    h.erase(h.begin(), h.end() - max_history);
  }
  return h;
}

// Sorted unique content ids that ever appear with label 0; the top-up source
// when an impression has fewer than k negatives.
inline std::vector<std::string> negative_pool(
    const std::vector<corpus::Impression>& impressions) {
  std::set<std::string> ids;
  for (const auto& imp : impressions) {
    for (size_t i = 0; i < imp.candidates.size(); ++i) {
      if (imp.labels[i] == 0) ids.insert(imp.candidates[i]);
    }
  }
  return {ids.begin(), ids.end()};
}

// One sample per positive: k negatives drawn without replacement from the
// impression's own label-0 candidates, topped up with replacement from the
// pool when the impression runs short; the positive lands at a random slot.
inline std::vector<TrainSample> sample_negatives(const corpus::Impression& imp,
                                                 const corpus::UserRecord& user,
                                                 int k, int max_history,
                                                 const std::vector<std::string>& pool,
                                                 Rng& rng) {
  if (k < 1) fail("sample_negatives: k must be >= 1");
  std::vector<std::string> positives, negatives;
  for (size_t i = 0; i < imp.candidates.size(); ++i) {
    (imp.labels[i] == 1 ? positives : negatives).push_back(imp.candidates[i]);
  }
  if (negatives.empty() && pool.empty()) {
    fail("sample_negatives: impression ", imp.id, " has no negatives and the pool is empty");
  }
  const auto history = effective_history(user, max_history);

  std::vector<TrainSample> out;
  out.reserve(positives.size());
  for (const auto& pos : positives) {
    std::vector<std::string> negs = negatives;
    rng.shuffle(negs);
    if (static_cast<int>(negs.size()) > k) negs.resize(k);
    const auto& top_up = pool.empty() ? negatives : pool;
    while (static_cast<int>(negs.size()) < k) {
      negs.push_back(top_up[rng.below(top_up.size())]);
    }
    TrainSample s;
    s.user_id = imp.user_id;
    s.history = history;
    s.positive = static_cast<int>(rng.below(static_cast<uint64_t>(k) + 1));
    s.candidates = std::move(negs);
    s.candidates.insert(s.candidates.begin() + s.positive, pos);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace once::rec
