#pragma once

#include <memory>

#include "usdn/ad/ops.hpp"
#include "usdn/attn/stripe.hpp"

namespace usdn::attn {

// Multi-head attention within stripe windows of one orientation.
// q/k/v: (N, Ch, H, W) where Ch = heads * head_dim. Windows, heads and batch
// entries are independent; the attention probabilities are retained for the
// backward pass.
template <typename T>
ad::Node<T>* stripe_attention(ad::Tape<T>& tape, ad::Node<T>* q, ad::Node<T>* k,
                              ad::Node<T>* v, const StripeSpec& spec, int64_t heads) {
  using ad::Node;
  const auto& qs = q->value.shape();
  if (qs.size() != 4) throw ContractError("stripe_attention: want (N,Ch,H,W)");
  check_same_shape(q->value, k->value, "stripe_attention q/k");
  check_same_shape(q->value, v->value, "stripe_attention q/v");
  const int64_t n = qs[0], ch = qs[1], h = qs[2], w = qs[3];
  if (heads < 1 || ch % heads != 0)
    throw ConfigError("stripe_attention: heads must divide channels");
  const int64_t hd = ch / heads;
  const StripeLayout lay = stripe_layout(spec, h, w);
  const int64_t tokens = lay.tokens;

  auto probs = std::make_shared<Tensor<T>>(
      std::vector<int64_t>{n * lay.windows * heads, tokens, tokens});

  auto gather = [spec, h, w, ch, hd, tokens](const T* src, int64_t img, int64_t head,
                                             int64_t win, Tensor<T>& dst) {
    for (int64_t t = 0; t < tokens; ++t) {
      auto [y, x] = stripe_token_coords(spec, h, w, win, t);
      const T* base = src + ((img * ch + head * hd) * h + y) * w + x;
      T* row = dst.data() + t * hd;
      for (int64_t d = 0; d < hd; ++d) row[d] = base[d * h * w];
    }
  };
  auto scatter_add = [spec, h, w, ch, hd, tokens](T* dst, int64_t img, int64_t head,
                                                  int64_t win, const Tensor<T>& src) {
    for (int64_t t = 0; t < tokens; ++t) {
      auto [y, x] = stripe_token_coords(spec, h, w, win, t);
      T* base = dst + ((img * ch + head * hd) * h + y) * w + x;
      const T* row = src.data() + t * hd;
      for (int64_t d = 0; d < hd; ++d) base[d * h * w] += row[d];
    }
  };

  Tensor<T> out(qs);
  {
    const T* pq = q->value.data();
    const T* pk = k->value.data();
    const T* pv = v->value.data();
    T* po = out.data();
    const int64_t jobs = n * lay.windows * heads;
    parallel_for_grain(jobs, 1, [&](int64_t j0, int64_t j1) {
      Tensor<T> qm({tokens, hd}), km({tokens, hd}), vm({tokens, hd});
      for (int64_t j = j0; j < j1; ++j) {
        const int64_t img = j / (lay.windows * heads);
        const int64_t win = (j / heads) % lay.windows;
        const int64_t head = j % heads;
        gather(pq, img, head, win, qm);
        gather(pk, img, head, win, km);
        gather(pv, img, head, win, vm);
        Tensor<T> pmat;
        Tensor<T> om = scaled_dot_attention(qm, km, vm, &pmat);
        std::memcpy(probs->data() + j * tokens * tokens, pmat.data(),
                    sizeof(T) * static_cast<size_t>(tokens * tokens));
        // outputs of distinct (img, win, head) jobs are disjoint
        for (int64_t t = 0; t < tokens; ++t) {
          auto [y, x] = stripe_token_coords(spec, h, w, win, t);
          T* base = po + ((img * ch + head * hd) * h + y) * w + x;
          const T* row = om.data() + t * hd;
          for (int64_t d = 0; d < hd; ++d) base[d * h * w] = row[d];
        }
      }
    });
  }

  Node<T>* node = tape.make(std::move(out), ad::any_requires<T>({q, k, v}));
  if (node->requires_grad)
    node->backward = [node, q, k, v, probs, gather, spec, lay, heads, n, ch, hd, h, w,
                      tokens, scatter_add] {
      const T* pq = q->value.data();
      const T* pk = k->value.data();
      const T* pv = v->value.data();
      const T* pg = node->grad.data();
      const int64_t jobs = n * lay.windows * heads;
      parallel_for_grain(jobs, 1, [&](int64_t j0, int64_t j1) {
        Tensor<T> qm({tokens, hd}), km({tokens, hd}), vm({tokens, hd}), gm({tokens, hd});
        Tensor<T> dq({tokens, hd}), dk({tokens, hd}), dv({tokens, hd});
        Tensor<T> pmat({tokens, tokens});
        for (int64_t j = j0; j < j1; ++j) {
          const int64_t img = j / (lay.windows * heads);
          const int64_t win = (j / heads) % lay.windows;
          const int64_t head = j % heads;
          gather(pq, img, head, win, qm);
          gather(pk, img, head, win, km);
          gather(pv, img, head, win, vm);
          gather(pg, img, head, win, gm);
          std::memcpy(pmat.data(), probs->data() + j * tokens * tokens,
                      sizeof(T) * static_cast<size_t>(tokens * tokens));
          dq.zero();
          dk.zero();
          dv.zero();
          scaled_dot_attention_backward(qm, km, vm, pmat, gm, dq, dk, dv);
          if (q->requires_grad) scatter_add(q->grad.data(), img, head, win, dq);
          if (k->requires_grad) scatter_add(k->grad.data(), img, head, win, dk);
          if (v->requires_grad) scatter_add(v->grad.data(), img, head, win, dv);
        }
      });
    };
  return node;
}

// Parameter set of one cswin block. All nodes are parameter leaves owned by
// the model.
template <typename T>
struct CswinBlockParams {
  ad::Node<T>* ln1_gamma = nullptr;
  ad::Node<T>* ln1_beta = nullptr;
  ad::Node<T>* qkv_w = nullptr;  // (3C, C, 1, 1)
  ad::Node<T>* qkv_b = nullptr;  // (3C)
  ad::Node<T>* lepe_w[2] = {nullptr, nullptr};  // (C/2, 3, 3) per orientation
  ad::Node<T>* proj_w = nullptr;  // (C, C, 1, 1)
  ad::Node<T>* proj_b = nullptr;
  ad::Node<T>* ln2_gamma = nullptr;
  ad::Node<T>* ln2_beta = nullptr;
  ad::Node<T>* mlp1_w = nullptr;  // (mlp_ratio*C, C, 1, 1)
  ad::Node<T>* mlp1_b = nullptr;
  ad::Node<T>* mlp2_w = nullptr;  // (C, mlp_ratio*C, 1, 1)
  ad::Node<T>* mlp2_b = nullptr;
};

// Intermediate handles exposed for oracle tests.
template <typename T>
struct CswinBlockTrace {
  ad::Node<T>* attn_half[2] = {nullptr, nullptr};  // attention + LePE, pre-concat
  ad::Node<T>* core = nullptr;                     // after projection, pre-residual
};

// Pre-norm cswin transformer block: LN -> qkv -> split heads across
// horizontal/vertical stripes -> per-stripe attention + LePE on V -> concat
// -> projection -> residual, then LN -> MLP (GELU) -> residual.
template <typename T>
ad::Node<T>* cswin_block(ad::Tape<T>& tape, ad::Node<T>* x, const CswinBlockParams<T>& p,
                         int64_t sw, int64_t heads, CswinBlockTrace<T>* trace = nullptr) {
  using ad::Node;
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractError("cswin_block: want (N,C,H,W)");
  const int64_t c = xs[1];
  if (heads % 2 != 0) throw ConfigError("cswin_block: head count must be even");
  if (c % heads != 0) throw ConfigError("cswin_block: heads must divide channels");

  Node<T>* ln1 = ad::layernorm(tape, x, p.ln1_gamma, p.ln1_beta);
  Node<T>* qkv = ad::conv2d(tape, ln1, p.qkv_w, p.qkv_b);
  Node<T>* q = ad::slice_channels(tape, qkv, 0, c);
  Node<T>* k = ad::slice_channels(tape, qkv, c, 2 * c);
  Node<T>* v = ad::slice_channels(tape, qkv, 2 * c, 3 * c);

  const int64_t half = c / 2;
  Node<T>* half_out[2];
  for (int i = 0; i < 2; ++i) {
    StripeSpec spec{i == 0 ? Orientation::horizontal : Orientation::vertical, sw};
    Node<T>* qh = ad::slice_channels(tape, q, i * half, (i + 1) * half);
    Node<T>* kh = ad::slice_channels(tape, k, i * half, (i + 1) * half);
    Node<T>* vh = ad::slice_channels(tape, v, i * half, (i + 1) * half);
    Node<T>* attn = stripe_attention(tape, qh, kh, vh, spec, heads / 2);
    Node<T>* pos = ad::depthwise3x3(tape, vh, p.lepe_w[i]);
    half_out[i] = ad::add(tape, attn, pos);
    if (trace) trace->attn_half[i] = half_out[i];
  }

  Node<T>* merged = ad::concat_channels(tape, half_out[0], half_out[1]);
  Node<T>* core = ad::conv2d(tape, merged, p.proj_w, p.proj_b);
  if (trace) trace->core = core;
  Node<T>* x1 = ad::add(tape, x, core);

  Node<T>* ln2 = ad::layernorm(tape, x1, p.ln2_gamma, p.ln2_beta);
  Node<T>* m1 = ad::conv2d(tape, ln2, p.mlp1_w, p.mlp1_b);
  Node<T>* act = ad::gelu(tape, m1);
  Node<T>* m2 = ad::conv2d(tape, act, p.mlp2_w, p.mlp2_b);
  return ad::add(tape, x1, m2);
}

}  // namespace usdn::attn
