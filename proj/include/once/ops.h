#pragma once

#include <cmath>
#include <vector>

#include "once/tensor.h"

namespace once {

// Every block follows the same pattern: fwd fills a ctx with whatever the
// backward pass needs, bwd consumes it and accumulates parameter gradients
// (+=) while writing input gradients. Saved activations are copied, not
// referenced, so callers may reuse their buffers between fwd and bwd.

// ---- linear: y = x W (+ b), x (m x d_in), W (d_in x d_out) ----

template <class S>
struct LinearCtxT {
  TensorT<S> x;
};

template <class S>
void linear_fwd(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* b,
                LinearCtxT<S>& ctx, TensorT<S>& out) {
  check_2d(x, "linear", "x");
  check_2d(w, "linear", "W");
  if (x.shape[1] != w.shape[0]) {
    fail("linear: x ", x.shape_str(), " does not match W ", w.shape_str());
  }
  matmul(x, w, out);
  if (b) {
    if (static_cast<int>(b->data.size()) != w.shape[1]) {
      fail("linear: bias has ", b->data.size(), " entries, W is ", w.shape_str());
    }
    for (int i = 0; i < out.shape[0]; ++i) {
      S* r = out.row(i);
      for (int j = 0; j < out.shape[1]; ++j) r[j] += b->data[j];
    }
  }
  ctx.x = x;
}

template <class S>
void linear_bwd(const LinearCtxT<S>& ctx, const TensorT<S>& w, const TensorT<S>& d_out,
                TensorT<S>* dx, TensorT<S>* dw, TensorT<S>* db) {
  if (dw) matmul_tn_acc(ctx.x, d_out, *dw);
  if (db) {
    for (int i = 0; i < d_out.shape[0]; ++i) {
      const S* r = d_out.row(i);
      for (int j = 0; j < d_out.shape[1]; ++j) db->data[j] += r[j];
    }
  }
  if (dx) matmul_nt(d_out, w, *dx);
}

// ---- token + position embedding lookup ----

template <class S>
void embedding_fwd(const TensorT<S>& tok_table, const TensorT<S>& pos_table,
                   const std::vector<int>& ids, TensorT<S>& out) {
  const int l = static_cast<int>(ids.size());
  const int d = tok_table.shape[1];
  if (l > pos_table.shape[0]) {
    fail("embedding: sequence length ", l, " exceeds position table ",
         pos_table.shape_str());
  }
  out.shape = {l, d};
  out.data.resize(static_cast<size_t>(l) * d);
  for (int i = 0; i < l; ++i) {
    const int id = ids[i];
    if (id < 0 || id >= tok_table.shape[0]) {
      fail("embedding: token id ", id, " out of range for table ",
           tok_table.shape_str());
    }
    const S* tr = tok_table.row(id);
    const S* pr = pos_table.row(i);
    S* o = out.row(i);
    for (int j = 0; j < d; ++j) o[j] = tr[j] + pr[j];
  }
}

template <class S>
void embedding_bwd(const std::vector<int>& ids, const TensorT<S>& d_out,
                   TensorT<S>& d_tok, TensorT<S>& d_pos) {
  const int l = static_cast<int>(ids.size());
  const int d = d_out.shape[1];
  for (int i = 0; i < l; ++i) {
    const S* g = d_out.row(i);
    axpy(S(1), g, d_tok.row(ids[i]), d);
    axpy(S(1), g, d_pos.row(i), d);
  }
}

// ---- layer norm (per row, eps 1e-5) ----

template <class S>
struct LayerNormCtxT {
  TensorT<S> xhat;
  std::vector<S> inv_sigma;
};

template <class S>
void layer_norm_fwd(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                    LayerNormCtxT<S>& ctx, TensorT<S>& out) {
  const int m = x.shape[0], d = x.shape[1];
  const S eps = S(1e-5);
  out.shape = x.shape;
  out.data.resize(x.data.size());
  ctx.xhat.shape = x.shape;
  ctx.xhat.data.resize(x.data.size());
  ctx.inv_sigma.assign(m, S(0));
  for (int i = 0; i < m; ++i) {
    const S* r = x.row(i);
    S mu = S(0);
    for (int j = 0; j < d; ++j) mu += r[j];
    mu /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      const S c = r[j] - mu;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    ctx.inv_sigma[i] = inv;
    S* xh = ctx.xhat.row(i);
    S* o = out.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (r[j] - mu) * inv;
      o[j] = xh[j] * gamma.data[j] + beta.data[j];
    }
  }
}

template <class S>
void layer_norm_bwd(const LayerNormCtxT<S>& ctx, const TensorT<S>& gamma,
                    const TensorT<S>& d_out, TensorT<S>& dx,
                    TensorT<S>& d_gamma, TensorT<S>& d_beta) {
  const int m = d_out.shape[0], d = d_out.shape[1];
  dx.shape = d_out.shape;
  dx.data.assign(d_out.data.size(), S(0));
  for (int i = 0; i < m; ++i) {
    const S* g = d_out.row(i);
    const S* xh = ctx.xhat.row(i);
    S* dxi = dx.row(i);
    S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
    for (int j = 0; j < d; ++j) {
      const S dxhat = g[j] * gamma.data[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[j];
      d_gamma.data[j] += g[j] * xh[j];
      d_beta.data[j] += g[j];
    }
    const S inv = ctx.inv_sigma[i];
    for (int j = 0; j < d; ++j) {
      const S dxhat = g[j] * gamma.data[j];
      dxi[j] = inv * (dxhat - sum_dxhat / S(d) - xh[j] * sum_dxhat_xhat / S(d));
    }
  }
}

// ---- row softmax ----

template <class S>
void softmax_row(S* x, int n) {
  S mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  S sum = S(0);
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

// dx = y * (dy - <y, dy>), where y is the softmax output.
template <class S>
void softmax_bwd_row(const S* y, const S* dy, S* dx, int n) {
  S dot_yd = S(0);
  for (int i = 0; i < n; ++i) dot_yd += y[i] * dy[i];
  for (int i = 0; i < n; ++i) dx[i] = y[i] * (dy[i] - dot_yd);
}

// ---- activations ----

template <class S>
struct ActCtxT {
  TensorT<S> x;
};

// tanh-approximated gelu.
template <class S>
S gelu_scalar(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S u = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <class S>
S gelu_grad_scalar(S x) {
  const S c = S(0.7978845608028654);
  const S u = c * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = c * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

template <class S>
void gelu_fwd(const TensorT<S>& x, ActCtxT<S>& ctx, TensorT<S>& out) {
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = gelu_scalar(x.data[i]);
  ctx.x = x;
}

template <class S>
void gelu_bwd(const ActCtxT<S>& ctx, const TensorT<S>& d_out, TensorT<S>& dx) {
  dx.shape = d_out.shape;
  dx.data.resize(d_out.data.size());
  for (size_t i = 0; i < d_out.data.size(); ++i) {
    dx.data[i] = d_out.data[i] * gelu_grad_scalar(ctx.x.data[i]);
  }
}

template <class S>
void relu_fwd(const TensorT<S>& x, ActCtxT<S>& ctx, TensorT<S>& out) {
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
  }
  ctx.x = x;
}

template <class S>
void relu_bwd(const ActCtxT<S>& ctx, const TensorT<S>& d_out, TensorT<S>& dx) {
  dx.shape = d_out.shape;
  dx.data.resize(d_out.data.size());
  for (size_t i = 0; i < d_out.data.size(); ++i) {
    dx.data[i] = ctx.x.data[i] > S(0) ? d_out.data[i] : S(0);
  }
}

// ---- causal multi-head self-attention core ----
//
// Operates on already-projected Q, K, V (each l x d, d divisible by heads).
// Position i attends to positions 0..i. Output is the concatenation of the
// per-head mixes; the caller applies any output projection.

template <class S>
struct AttentionCtxT {
  int heads = 1;
  bool causal = true;
  TensorT<S> q, k, v;
  TensorT<S> probs;  // (heads*l x l); row h*l+i holds row i of head h
};

template <class S>
void attention_fwd(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                   int heads, bool causal, AttentionCtxT<S>& ctx, TensorT<S>& out) {
  if (!same_shape(q, k) || !same_shape(q, v)) {
    fail("attention: Q ", q.shape_str(), ", K ", k.shape_str(), ", V ",
         v.shape_str(), " must match");
  }
  const int l = q.shape[0], d = q.shape[1];
  if (d % heads != 0) fail("attention: dim ", d, " not divisible by ", heads, " heads");
  const int dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));

  ctx.heads = heads;
  ctx.causal = causal;
  ctx.q = q;
  ctx.k = k;
  ctx.v = v;
  ctx.probs.shape = {heads * l, l};
  ctx.probs.data.assign(static_cast<size_t>(heads) * l * l, S(0));

  out.shape = {l, d};
  out.data.assign(static_cast<size_t>(l) * d, S(0));

  std::vector<S> scores;
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < l; ++i) {
      const int last = causal ? i : l - 1;
      scores.assign(last + 1, S(0));
      const S* qi = q.row(i) + off;
      for (int j = 0; j <= last; ++j) {
        scores[j] = dot(qi, k.row(j) + off, dh) * scale;
      }
      softmax_row(scores.data(), last + 1);
      S* prow = ctx.probs.row(h * l + i);
      S* orow = out.row(i) + off;
      for (int j = 0; j <= last; ++j) {
        prow[j] = scores[j];
        axpy(scores[j], v.row(j) + off, orow, dh);
      }
    }
  }
}

template <class S>
void attention_bwd(const AttentionCtxT<S>& ctx, const TensorT<S>& d_out,
                   TensorT<S>& dq, TensorT<S>& dk, TensorT<S>& dv) {
  const int l = ctx.q.shape[0], d = ctx.q.shape[1];
  const int heads = ctx.heads, dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));

  dq.shape = {l, d};
  dq.data.assign(static_cast<size_t>(l) * d, S(0));
  dk.shape = {l, d};
  dk.data.assign(static_cast<size_t>(l) * d, S(0));
  dv.shape = {l, d};
  dv.data.assign(static_cast<size_t>(l) * d, S(0));

  std::vector<S> d_probs, d_scores;
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < l; ++i) {
      const int last = ctx.causal ? i : l - 1;
      const S* go = d_out.row(i) + off;
      const S* prow = ctx.probs.row(h * l + i);
      d_probs.assign(last + 1, S(0));
      for (int j = 0; j <= last; ++j) {
        d_probs[j] = dot(go, ctx.v.row(j) + off, dh);
        axpy(prow[j], go, dv.row(j) + off, dh);
      }
      d_scores.assign(last + 1, S(0));
      softmax_bwd_row(prow, d_probs.data(), d_scores.data(), last + 1);
      S* dqi = dq.row(i) + off;
      const S* qi = ctx.q.row(i) + off;
      for (int j = 0; j <= last; ++j) {
        const S g = d_scores[j] * scale;
        axpy(g, ctx.k.row(j) + off, dqi, dh);
        axpy(g, qi, dk.row(j) + off, dh);
      }
    }
  }
}

template <class S>
void causal_attention_fwd(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                          int heads, AttentionCtxT<S>& ctx, TensorT<S>& out) {
  attention_fwd(q, k, v, heads, true, ctx, out);
}

template <class S>
void causal_attention_bwd(const AttentionCtxT<S>& ctx, const TensorT<S>& d_out,
                          TensorT<S>& dq, TensorT<S>& dk, TensorT<S>& dv) {
  attention_bwd(ctx, d_out, dq, dk, dv);
}

// ---- additive attention pooling ----
//
// alpha = softmax over rows of q^T tanh(Z Wa + ba); out = sum_i alpha_i Z_i.
// Z is (m x d), Wa (d x d_a), ba and q are d_a vectors, out is a d vector.

template <class S>
struct AdditivePoolCtxT {
  TensorT<S> z;
  TensorT<S> t;  // tanh(Z Wa + ba), (m x d_a)
  std::vector<S> alpha;
};

template <class S>
void additive_pool_fwd(const TensorT<S>& z, const TensorT<S>& wa, const TensorT<S>& ba,
                       const TensorT<S>& qv, AdditivePoolCtxT<S>& ctx, TensorT<S>& out) {
  check_2d(z, "additive_pool", "Z");
  if (z.shape[1] != wa.shape[0]) {
    fail("additive_pool: Z ", z.shape_str(), " does not match Wa ", wa.shape_str());
  }
  const int m = z.shape[0], d = z.shape[1], da = wa.shape[1];
  TensorT<S> u;
  matmul(z, wa, u);
  ctx.t.shape = {m, da};
  ctx.t.data.resize(static_cast<size_t>(m) * da);
  ctx.alpha.assign(m, S(0));
  for (int i = 0; i < m; ++i) {
    const S* ur = u.row(i);
    S* tr = ctx.t.row(i);
    for (int j = 0; j < da; ++j) tr[j] = std::tanh(ur[j] + ba.data[j]);
    ctx.alpha[i] = dot(tr, qv.data.data(), da);
  }
  softmax_row(ctx.alpha.data(), m);
  ctx.z = z;
  out.shape = {d};
  out.data.assign(d, S(0));
  for (int i = 0; i < m; ++i) axpy(ctx.alpha[i], z.row(i), out.data.data(), d);
}

template <class S>
void additive_pool_bwd(const AdditivePoolCtxT<S>& ctx, const TensorT<S>& wa,
                       const TensorT<S>& qv, const TensorT<S>& d_out, TensorT<S>& dz,
                       TensorT<S>& d_wa, TensorT<S>& d_ba, TensorT<S>& d_qv) {
  const int m = ctx.z.shape[0], d = ctx.z.shape[1], da = wa.shape[1];
  dz.shape = {m, d};
  dz.data.assign(static_cast<size_t>(m) * d, S(0));

  std::vector<S> d_alpha(m), d_score(m);
  for (int i = 0; i < m; ++i) {
    d_alpha[i] = dot(d_out.data.data(), ctx.z.row(i), d);
    axpy(ctx.alpha[i], d_out.data.data(), dz.row(i), d);
  }
  softmax_bwd_row(ctx.alpha.data(), d_alpha.data(), d_score.data(), m);

  TensorT<S> du({m, da});
  for (int i = 0; i < m; ++i) {
    const S* tr = ctx.t.row(i);
    S* dur = du.row(i);
    for (int j = 0; j < da; ++j) {
      d_qv.data[j] += d_score[i] * tr[j];
      dur[j] = d_score[i] * qv.data[j] * (S(1) - tr[j] * tr[j]);
      d_ba.data[j] += dur[j];
    }
  }
  matmul_tn_acc(ctx.z, du, d_wa);
  TensorT<S> dz_attn;
  matmul_nt(du, wa, dz_attn);
  for (size_t i = 0; i < dz.data.size(); ++i) dz.data[i] += dz_attn.data[i];
}

// ---- softmax cross-entropy over one logit group ----

// Returns -log softmax(logits)[pos]; fills probs.
template <class S>
S softmax_ce_fwd(const std::vector<S>& logits, int pos, std::vector<S>& probs) {
  probs = logits;
  softmax_row(probs.data(), static_cast<int>(probs.size()));
  const S p = probs[pos];
  return -std::log(std::max(p, S(1e-12)));
}

// d_logits[i] = probs[i] - 1[i == pos], scaled by upstream dl.
template <class S>
void softmax_ce_bwd(const std::vector<S>& probs, int pos, S dl, std::vector<S>& d_logits) {
  d_logits.resize(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    d_logits[i] = dl * (probs[i] - (static_cast<int>(i) == pos ? S(1) : S(0)));
  }
}

}  // namespace once
