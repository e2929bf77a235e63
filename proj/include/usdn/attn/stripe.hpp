#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "usdn/core/tensor.hpp"

namespace usdn::attn {

enum class Orientation { horizontal, vertical };

// A stripe window: `width` rows (horizontal) or columns (vertical).
struct StripeSpec {
  Orientation orientation = Orientation::horizontal;
  int64_t width = 1;
};

struct StripeLayout {
  int64_t windows = 0;
  int64_t tokens = 0;  // tokens per window
};

inline StripeLayout stripe_layout(const StripeSpec& spec, int64_t h, int64_t w) {
  if (spec.width < 1) throw ConfigError("stripe width must be >= 1");
  StripeLayout lay;
  if (spec.orientation == Orientation::horizontal) {
    if (h % spec.width != 0)
      throw ConfigError("stripe width " + std::to_string(spec.width) +
                        " does not divide height " + std::to_string(h));
    lay.windows = h / spec.width;
    lay.tokens = spec.width * w;
  } else {
    if (w % spec.width != 0)
      throw ConfigError("stripe width " + std::to_string(spec.width) +
                        " does not divide width " + std::to_string(w));
    lay.windows = w / spec.width;
    lay.tokens = h * spec.width;
  }
  return lay;
}

// (y,x) of token t inside window `win`; token order is row-major within the
// stripe for both orientations.
inline std::pair<int64_t, int64_t> stripe_token_coords(const StripeSpec& spec, int64_t h,
                                                       int64_t w, int64_t win, int64_t t) {
  (void)h;
  if (spec.orientation == Orientation::horizontal)
    return {win * spec.width + t / w, t % w};
  return {t / spec.width, win * spec.width + t % spec.width};
}

// Partition of a (C,H,W) feature map into a disjoint cover of stripe windows,
// each flattened to (tokens, C).
template <typename T>
std::vector<Tensor<T>> stripe_partition(const Tensor<T>& feat, const StripeSpec& spec) {
  if (feat.ndim() != 3) throw ContractError("stripe_partition: want (C,H,W)");
  const int64_t c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  const StripeLayout lay = stripe_layout(spec, h, w);

  std::vector<Tensor<T>> windows;
  windows.reserve(static_cast<size_t>(lay.windows));
  for (int64_t win = 0; win < lay.windows; ++win) {
    Tensor<T> tokens({lay.tokens, c});
    for (int64_t t = 0; t < lay.tokens; ++t) {
      auto [y, x] = stripe_token_coords(spec, h, w, win, t);
      for (int64_t ch = 0; ch < c; ++ch)
        tokens[t * c + ch] = feat[(ch * h + y) * w + x];
    }
    windows.push_back(std::move(tokens));
  }
  return windows;
}

// Exact inverse of stripe_partition.
template <typename T>
Tensor<T> stripe_merge(const std::vector<Tensor<T>>& windows, const StripeSpec& spec,
                       int64_t h, int64_t w) {
  const StripeLayout lay = stripe_layout(spec, h, w);
  if (static_cast<int64_t>(windows.size()) != lay.windows)
    throw ContractError("stripe_merge: expected " + std::to_string(lay.windows) +
                        " windows, got " + std::to_string(windows.size()));
  if (windows.empty()) throw ContractError("stripe_merge: no windows");
  const int64_t c = windows[0].dim(1);
  for (const auto& win : windows)
    if (win.ndim() != 2 || win.dim(0) != lay.tokens || win.dim(1) != c)
      throw ContractError("stripe_merge: window shape mismatch " + win.shape_str());

  Tensor<T> feat({c, h, w});
  for (int64_t win = 0; win < lay.windows; ++win)
    for (int64_t t = 0; t < lay.tokens; ++t) {
      auto [y, x] = stripe_token_coords(spec, h, w, win, t);
      for (int64_t ch = 0; ch < c; ++ch)
        feat[(ch * h + y) * w + x] = windows[static_cast<size_t>(win)][t * c + ch];
    }
  return feat;
}

namespace detail {

// Small serial matmuls used inside per-window attention. `Acc` adds into C.
template <typename T, bool Acc = false>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if constexpr (!Acc)
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    for (int64_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) = A (m x k) * B^T, B is (n x k)
template <typename T, bool Acc = false>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if constexpr (Acc)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

// C (m x n) += A^T * B, A is (k x m), B is (k x n)
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// softmax(q k^T / sqrt(d)) v on row-major (tokens x d) matrices. When `probs`
// is non-null the (tokens x tokens) attention matrix is written there.
// Any NaN in the logits raises a NumericError.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               Tensor<T>* probs = nullptr) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw ContractError("scaled_dot_attention: want (tokens,d) matrices");
  const int64_t t = q.dim(0), d = q.dim(1);
  if (k.dim(0) != t || k.dim(1) != d || v.dim(0) != t || v.dim(1) != d)
    throw ContractError("scaled_dot_attention: q/k/v shape mismatch");

  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d)));
  Tensor<T> p({t, t});
  detail::mm_nt(q.data(), k.data(), p.data(), t, d, t);

  for (int64_t i = 0; i < t; ++i) {
    T* row = p.data() + i * t;
    T mx = row[0] * scale;
    for (int64_t j = 0; j < t; ++j) {
      row[j] *= scale;
      if (row[j] > mx) mx = row[j];
    }
    if (std::isnan(static_cast<double>(mx))) throw NumericError("NaN attention logits");
    T sum = T(0);
    for (int64_t j = 0; j < t; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int64_t j = 0; j < t; ++j) row[j] *= inv;
  }

  Tensor<T> out({t, d});
  detail::mm_nn(p.data(), v.data(), out.data(), t, t, d);
  if (probs != nullptr) *probs = std::move(p);
  return out;
}

// Gradients of scaled_dot_attention given saved probabilities. dq/dk/dv are
// accumulated (+=), matching tape semantics.
template <typename T>
void scaled_dot_attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const Tensor<T>& probs, const Tensor<T>& dout,
                                   Tensor<T>& dq, Tensor<T>& dk, Tensor<T>& dv) {
  const int64_t t = q.dim(0), d = q.dim(1);
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d)));

  // dV += P^T dOut
  detail::mm_tn_acc(probs.data(), dout.data(), dv.data(), t, t, d);

  // dP = dOut V^T ; dS = P * (dP - rowdot(dP,P)) * scale
  Tensor<T> ds({t, t});
  detail::mm_nt(dout.data(), v.data(), ds.data(), t, d, t);
  for (int64_t i = 0; i < t; ++i) {
    const T* prow = probs.data() + i * t;
    T* dsrow = ds.data() + i * t;
    T dot = T(0);
    for (int64_t j = 0; j < t; ++j) dot += prow[j] * dsrow[j];
    for (int64_t j = 0; j < t; ++j) dsrow[j] = prow[j] * (dsrow[j] - dot) * scale;
  }

  // dQ += dS K ; dK += dS^T Q
  detail::mm_nn<T, true>(ds.data(), k.data(), dq.data(), t, t, d);
  detail::mm_tn_acc(ds.data(), q.data(), dk.data(), t, t, d);
}

}  // namespace usdn::attn
