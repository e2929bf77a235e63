#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "usdn/ad/graph.hpp"
#include "usdn/core/gemm.hpp"
#include "usdn/core/parallel.hpp"

namespace usdn::ad {

// ---------------------------------------------------------------------------
// shared helpers

inline int64_t reflect_i(int64_t i, int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Persistent scratch buffers for im2col-style staging. Op execution is
// orchestrated from one thread, so two slots are enough (col + dcol).
template <typename T, int Slot>
inline T* scratch(size_t n) {
  static thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

template <typename T>
inline bool any_requires(std::initializer_list<const Node<T>*> nodes) {
  for (const Node<T>* n : nodes)
    if (n && n->requires_grad) return true;
  return false;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Node<T>* add(Tape<T>& tape, Node<T>* a, Node<T>* b) {
  check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  const int64_t n = out.numel();
  parallel_for_grain(n, 1 << 14, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] + pb[i];
  });
  Node<T>* node = tape.make(std::move(out), any_requires<T>({a, b}));
  if (node->requires_grad)
    node->backward = [node, a, b] {
      const T* g = node->grad.data();
      const int64_t m = node->grad.numel();
      if (a->requires_grad) {
        T* ga = a->grad.data();
        parallel_for_grain(m, 1 << 14, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) ga[i] += g[i];
        });
      }
      if (b->requires_grad) {
        T* gb = b->grad.data();
        parallel_for_grain(m, 1 << 14, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) gb[i] += g[i];
        });
      }
    };
  return node;
}

template <typename T>
Node<T>* leaky_relu(Tape<T>& tape, Node<T>* x, T slope) {
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  T* po = out.data();
  const int64_t n = out.numel();
  parallel_for_grain(n, 1 << 14, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = px[i] >= T(0) ? px[i] : slope * px[i];
  });
  Node<T>* node = tape.make(std::move(out), x->requires_grad);
  if (node->requires_grad)
    node->backward = [node, x, slope] {
      const T* g = node->grad.data();
      const T* px2 = x->value.data();
      T* gx = x->grad.data();
      parallel_for_grain(node->grad.numel(), 1 << 14, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) gx[i] += px2[i] >= T(0) ? g[i] : slope * g[i];
      });
    };
  return node;
}

template <typename T>
Node<T>* gelu(Tape<T>& tape, Node<T>* x) {
  // exact erf form
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  T* po = out.data();
  const T inv_sqrt2 = T(0.70710678118654752440);
  parallel_for_grain(out.numel(), 1 << 13, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i)
      po[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
  });
  Node<T>* node = tape.make(std::move(out), x->requires_grad);
  if (node->requires_grad)
    node->backward = [node, x, inv_sqrt2] {
      const T inv_sqrt2pi = T(0.39894228040143267794);
      const T* g = node->grad.data();
      const T* px2 = x->value.data();
      T* gx = x->grad.data();
      parallel_for_grain(node->grad.numel(), 1 << 13, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
          T v = px2[i];
          T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
          gx[i] += g[i] * (cdf + v * pdf);
        }
      });
    };
  return node;
}

template <typename T>
Node<T>* tanh_op(Tape<T>& tape, Node<T>* x) {
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  T* po = out.data();
  parallel_for_grain(out.numel(), 1 << 13, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = std::tanh(px[i]);
  });
  Node<T>* node = tape.make(std::move(out), x->requires_grad);
  if (node->requires_grad)
    node->backward = [node, x] {
      const T* g = node->grad.data();
      const T* y = node->value.data();
      T* gx = x->grad.data();
      parallel_for_grain(node->grad.numel(), 1 << 13, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
      });
    };
  return node;
}

// ---------------------------------------------------------------------------
// channel concat / slice (NCHW)

template <typename T>
Node<T>* concat_channels(Tape<T>& tape, Node<T>* a, Node<T>* b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ContractError("concat_channels: incompatible shapes " + a->value.shape_str() + " vs " +
                        b->value.shape_str());
  const int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor<T> out({n, ca + cb, sa[2], sa[3]});
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * hw, a->value.data() + i * ca * hw,
                sizeof(T) * static_cast<size_t>(ca * hw));
    std::memcpy(out.data() + i * (ca + cb) * hw + ca * hw, b->value.data() + i * cb * hw,
                sizeof(T) * static_cast<size_t>(cb * hw));
  }
  Node<T>* node = tape.make(std::move(out), any_requires<T>({a, b}));
  if (node->requires_grad)
    node->backward = [node, a, b, n, ca, cb, hw] {
      const T* g = node->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        if (a->requires_grad) {
          T* ga = a->grad.data() + i * ca * hw;
          const T* gi = g + i * (ca + cb) * hw;
          for (int64_t j = 0; j < ca * hw; ++j) ga[j] += gi[j];
        }
        if (b->requires_grad) {
          T* gb = b->grad.data() + i * cb * hw;
          const T* gi = g + i * (ca + cb) * hw + ca * hw;
          for (int64_t j = 0; j < cb * hw; ++j) gb[j] += gi[j];
        }
      }
    };
  return node;
}

template <typename T>
Node<T>* slice_channels(Tape<T>& tape, Node<T>* x, int64_t c0, int64_t c1) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || c0 < 0 || c1 <= c0 || c1 > s[1])
    throw ContractError("slice_channels: bad range [" + std::to_string(c0) + "," +
                        std::to_string(c1) + ") for " + x->value.shape_str());
  const int64_t n = s[0], c = s[1], hw = s[2] * s[3], cs = c1 - c0;
  Tensor<T> out({n, cs, s[2], s[3]});
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * cs * hw, x->value.data() + (i * c + c0) * hw,
                sizeof(T) * static_cast<size_t>(cs * hw));
  Node<T>* node = tape.make(std::move(out), x->requires_grad);
  if (node->requires_grad)
    node->backward = [node, x, n, c, c0, cs, hw] {
      const T* g = node->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        T* gx = x->grad.data() + (i * c + c0) * hw;
        const T* gi = g + i * cs * hw;
        for (int64_t j = 0; j < cs * hw; ++j) gx[j] += gi[j];
      }
    };
  return node;
}

// ---------------------------------------------------------------------------
// conv2d, reflect padding k/2, stride 1 or 2
//
// x (N,Cin,H,W), w (Cout,Cin,k,k), b (Cout) or null. Lowered to one GEMM per
// image over an im2col staging buffer; 1x1 stride-1 convolutions skip the
// staging entirely.

namespace detail {

struct ConvGeom {
  int64_t n, cin, h, w, cout, k, stride, pad, oh, ow;
};

template <typename T>
ConvGeom conv_geom(const Node<T>* x, const Node<T>* w, int64_t stride) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4) throw ContractError("conv2d: need 4-D tensors");
  if (ws[2] != ws[3] || ws[2] % 2 == 0) throw ContractError("conv2d: kernel must be odd square");
  if (xs[1] != ws[1])
    throw ContractError("conv2d: channel mismatch " + x->value.shape_str() + " vs " +
                        w->value.shape_str());
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  ConvGeom g;
  g.n = xs[0];
  g.cin = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.cout = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.pad = g.k / 2;
  if (g.h <= g.pad || g.w <= g.pad)
    throw ContractError("conv2d: spatial side too small for reflect padding");
  g.oh = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / stride + 1;
  return g;
}

// Gathers the im2col matrix (Cin*k*k rows, OH*OW cols) for one image.
template <typename T>
void im2col(const ConvGeom& g, const T* src, T* col) {
  const int64_t rows = g.cin * g.k * g.k;
  const int64_t ohw = g.oh * g.ow;
  parallel_for_grain(rows, 1, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t ci = r / (g.k * g.k);
      const int64_t ky = (r / g.k) % g.k;
      const int64_t kx = r % g.k;
      const T* plane = src + ci * g.h * g.w;
      T* dst = col + r * ohw;
      for (int64_t oy = 0; oy < g.oh; ++oy) {
        const T* row = plane + reflect_i(oy * g.stride + ky - g.pad, g.h) * g.w;
        T* out = dst + oy * g.ow;
        if (g.stride == 1) {
          // interior of the row is a contiguous copy
          int64_t shift = kx - g.pad;
          int64_t lo = std::max<int64_t>(0, -shift);
          int64_t hi = std::min<int64_t>(g.ow, g.w - shift);
          for (int64_t ox = 0; ox < lo; ++ox) out[ox] = row[reflect_i(ox + shift, g.w)];
          if (hi > lo)
            std::memcpy(out + lo, row + lo + shift, sizeof(T) * static_cast<size_t>(hi - lo));
          for (int64_t ox = hi; ox < g.ow; ++ox) out[ox] = row[reflect_i(ox + shift, g.w)];
        } else {
          for (int64_t ox = 0; ox < g.ow; ++ox)
            out[ox] = row[reflect_i(ox * g.stride + kx - g.pad, g.w)];
        }
      }
    }
  });
}

// Scatter-adds a dcol matrix back into the input gradient of one image.
// Parallel over input channels; every col row with channel ci only touches
// plane ci.
template <typename T>
void col2im_add(const ConvGeom& g, const T* dcol, T* dst) {
  const int64_t ohw = g.oh * g.ow;
  parallel_for_grain(g.cin, 1, [&](int64_t c0, int64_t c1) {
    for (int64_t ci = c0; ci < c1; ++ci) {
      T* plane = dst + ci * g.h * g.w;
      for (int64_t ky = 0; ky < g.k; ++ky)
        for (int64_t kx = 0; kx < g.k; ++kx) {
          const T* srow = dcol + ((ci * g.k + ky) * g.k + kx) * ohw;
          for (int64_t oy = 0; oy < g.oh; ++oy) {
            T* row = plane + reflect_i(oy * g.stride + ky - g.pad, g.h) * g.w;
            const T* s = srow + oy * g.ow;
            for (int64_t ox = 0; ox < g.ow; ++ox)
              row[reflect_i(ox * g.stride + kx - g.pad, g.w)] += s[ox];
          }
        }
    }
  });
}

}  // namespace detail

template <typename T>
Node<T>* conv2d(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* b, int64_t stride = 1) {
  using detail::ConvGeom;
  const ConvGeom g = detail::conv_geom(x, w, stride);
  if (b != nullptr && (b->value.ndim() != 1 || b->value.dim(0) != g.cout))
    throw ContractError("conv2d: bias shape mismatch");

  const int64_t kk = g.k * g.k;
  const int64_t rows = g.cin * kk;
  const int64_t ohw = g.oh * g.ow;
  const bool pointwise = (g.k == 1 && stride == 1);

  Tensor<T> out({g.n, g.cout, g.oh, g.ow});
  for (int64_t i = 0; i < g.n; ++i) {
    const T* src = x->value.data() + i * g.cin * g.h * g.w;
    const T* col = src;
    if (!pointwise) {
      T* colbuf = scratch<T, 0>(static_cast<size_t>(rows * ohw));
      detail::im2col(g, src, colbuf);
      col = colbuf;
    }
    T* dst = out.data() + i * g.cout * ohw;
    gemm(false, false, g.cout, ohw, rows, T(1), w->value.data(), rows, col, ohw, T(0), dst, ohw);
    if (b != nullptr) {
      const T* bias = b->value.data();
      parallel_for_grain(g.cout, 1, [&](int64_t c0, int64_t c1) {
        for (int64_t co = c0; co < c1; ++co) {
          T* rowp = dst + co * ohw;
          const T bv = bias[co];
          for (int64_t j = 0; j < ohw; ++j) rowp[j] += bv;
        }
      });
    }
  }

  Node<T>* node = tape.make(std::move(out), any_requires<T>({x, w, b}));
  if (node->requires_grad)
    node->backward = [node, x, w, b, g, rows, ohw, pointwise] {
      for (int64_t i = 0; i < g.n; ++i) {
        const T* gout = node->grad.data() + i * g.cout * ohw;
        if (w->requires_grad) {
          const T* src = x->value.data() + i * g.cin * g.h * g.w;
          const T* col = src;
          if (!pointwise) {
            T* colbuf = scratch<T, 0>(static_cast<size_t>(rows * ohw));
            detail::im2col(g, src, colbuf);
            col = colbuf;
          }
          // dW += gout * col^T
          gemm(false, true, g.cout, rows, ohw, T(1), gout, ohw, col, ohw, T(1),
               w->grad.data(), rows);
        }
        if (b != nullptr && b->requires_grad) {
          T* gb = b->grad.data();
          for (int64_t co = 0; co < g.cout; ++co) {
            T acc = T(0);
            const T* rowp = gout + co * ohw;
            for (int64_t j = 0; j < ohw; ++j) acc += rowp[j];
            gb[co] += acc;
          }
        }
        if (x->requires_grad) {
          T* gx = x->grad.data() + i * g.cin * g.h * g.w;
          if (pointwise) {
            // dX += W^T * gout
            gemm(true, false, g.cin, ohw, g.cout, T(1), w->value.data(), rows, gout, ohw, T(1),
                 gx, ohw);
          } else {
            T* dcol = scratch<T, 1>(static_cast<size_t>(rows * ohw));
            gemm(true, false, rows, ohw, g.cout, T(1), w->value.data(), rows, gout, ohw, T(0),
                 dcol, ohw);
            detail::col2im_add(g, dcol, gx);
          }
        }
      }
    };
  return node;
}

// Depthwise 3x3 convolution, reflect padding, no bias (LePE kernel).
// w has shape (C,3,3).
template <typename T>
Node<T>* depthwise3x3(Tape<T>& tape, Node<T>* x, Node<T>* w) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 3 || ws[0] != xs[1] || ws[1] != 3 || ws[2] != 3)
    throw ContractError("depthwise3x3: want x (N,C,H,W) and w (C,3,3)");
  const int64_t n = xs[0], c = xs[1], h = xs[2], w_ = xs[3];
  if (h < 2 || w_ < 2) throw ContractError("depthwise3x3: spatial side too small");

  Tensor<T> out(xs);
  const T* px = x->value.data();
  const T* pw = w->value.data();
  T* po = out.data();
  parallel_for_grain(n * c, 1, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const T* plane = px + p * h * w_;
      const T* ker = pw + (p % c) * 9;
      T* dst = po + p * h * w_;
      for (int64_t y = 0; y < h; ++y) {
        const T* r0 = plane + reflect_i(y - 1, h) * w_;
        const T* r1 = plane + y * w_;
        const T* r2 = plane + reflect_i(y + 1, h) * w_;
        for (int64_t xx = 0; xx < w_; ++xx) {
          int64_t xm = reflect_i(xx - 1, w_), xp = reflect_i(xx + 1, w_);
          dst[y * w_ + xx] = ker[0] * r0[xm] + ker[1] * r0[xx] + ker[2] * r0[xp] +
                             ker[3] * r1[xm] + ker[4] * r1[xx] + ker[5] * r1[xp] +
                             ker[6] * r2[xm] + ker[7] * r2[xx] + ker[8] * r2[xp];
        }
      }
    }
  });

  Node<T>* node = tape.make(std::move(out), any_requires<T>({x, w}));
  if (node->requires_grad)
    node->backward = [node, x, w, n, c, h, w_] {
      const T* g = node->grad.data();
      const T* px2 = x->value.data();
      const T* pw2 = w->value.data();
      if (w->requires_grad) {
        // per-channel kernel grads; parallel over channels, serial over batch
        T* gw = w->grad.data();
        parallel_for_grain(c, 1, [&](int64_t c0, int64_t c1) {
          for (int64_t ch = c0; ch < c1; ++ch) {
            T acc[9] = {};
            for (int64_t b = 0; b < n; ++b) {
              const T* plane = px2 + (b * c + ch) * h * w_;
              const T* gp = g + (b * c + ch) * h * w_;
              for (int64_t y = 0; y < h; ++y) {
                int64_t ys[3] = {reflect_i(y - 1, h), y, reflect_i(y + 1, h)};
                for (int64_t xx = 0; xx < w_; ++xx) {
                  int64_t xs2[3] = {reflect_i(xx - 1, w_), xx, reflect_i(xx + 1, w_)};
                  T gv = gp[y * w_ + xx];
                  for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                      acc[ky * 3 + kx] += gv * plane[ys[ky] * w_ + xs2[kx]];
                }
              }
            }
            for (int i = 0; i < 9; ++i) gw[ch * 9 + i] += acc[i];
          }
        });
      }
      if (x->requires_grad) {
        T* gx = x->grad.data();
        parallel_for_grain(n * c, 1, [&](int64_t p0, int64_t p1) {
          for (int64_t p = p0; p < p1; ++p) {
            const T* ker = pw2 + (p % c) * 9;
            const T* gp = g + p * h * w_;
            T* dst = gx + p * h * w_;
            for (int64_t y = 0; y < h; ++y) {
              int64_t ys[3] = {reflect_i(y - 1, h), y, reflect_i(y + 1, h)};
              for (int64_t xx = 0; xx < w_; ++xx) {
                int64_t xs2[3] = {reflect_i(xx - 1, w_), xx, reflect_i(xx + 1, w_)};
                T gv = gp[y * w_ + xx];
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx)
                    dst[ys[ky] * w_ + xs2[kx]] += gv * ker[ky * 3 + kx];
              }
            }
          }
        });
      }
    };
  return node;
}

// ---------------------------------------------------------------------------
// layer norm over the channel dimension at every spatial position

template <typename T>
Node<T>* layernorm(Tape<T>& tape, Node<T>* x, Node<T>* gamma, Node<T>* beta, T eps = T(1e-5)) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractError("layernorm: want (N,C,H,W)");
  const int64_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw ContractError("layernorm: gamma/beta must have C elements");

  auto mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{n, hw});
  auto invstd = std::make_shared<Tensor<T>>(std::vector<int64_t>{n, hw});
  Tensor<T> out(xs);

  const T* px = x->value.data();
  const T* pg = gamma->value.data();
  const T* pb = beta->value.data();
  T* po = out.data();
  const T invc = T(1) / static_cast<T>(c);

  for (int64_t b = 0; b < n; ++b) {
    const T* im = px + b * c * hw;
    T* om = po + b * c * hw;
    T* mu = mean->data() + b * hw;
    T* is = invstd->data() + b * hw;
    parallel_for_grain(hw, 1 << 12, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) mu[p] = T(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* row = im + ch * hw;
        for (int64_t p = p0; p < p1; ++p) mu[p] += row[p];
      }
      for (int64_t p = p0; p < p1; ++p) mu[p] *= invc;
      for (int64_t p = p0; p < p1; ++p) is[p] = T(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* row = im + ch * hw;
        for (int64_t p = p0; p < p1; ++p) {
          T d = row[p] - mu[p];
          is[p] += d * d;
        }
      }
      for (int64_t p = p0; p < p1; ++p) is[p] = T(1) / std::sqrt(is[p] * invc + eps);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* row = im + ch * hw;
        T* orow = om + ch * hw;
        const T gch = pg[ch], bch = pb[ch];
        for (int64_t p = p0; p < p1; ++p) orow[p] = (row[p] - mu[p]) * is[p] * gch + bch;
      }
    });
  }

  Node<T>* node = tape.make(std::move(out), any_requires<T>({x, gamma, beta}));
  if (node->requires_grad)
    node->backward = [node, x, gamma, beta, mean, invstd, n, c, hw, invc] {
      const T* g = node->grad.data();
      const T* px2 = x->value.data();
      const T* pg2 = gamma->value.data();
      if (gamma->requires_grad || beta->requires_grad) {
        T* ggam = gamma->requires_grad ? gamma->grad.data() : nullptr;
        T* gbet = beta->requires_grad ? beta->grad.data() : nullptr;
        parallel_for_grain(c, 1, [&](int64_t c0, int64_t c1) {
          for (int64_t ch = c0; ch < c1; ++ch) {
            T accg = T(0), accb = T(0);
            for (int64_t b = 0; b < n; ++b) {
              const T* grow = g + (b * c + ch) * hw;
              const T* xrow = px2 + (b * c + ch) * hw;
              const T* mu = mean->data() + b * hw;
              const T* is = invstd->data() + b * hw;
              for (int64_t p = 0; p < hw; ++p) {
                accg += grow[p] * (xrow[p] - mu[p]) * is[p];
                accb += grow[p];
              }
            }
            if (ggam) ggam[ch] += accg;
            if (gbet) gbet[ch] += accb;
          }
        });
      }
      if (x->requires_grad) {
        T* gx = x->grad.data();
        for (int64_t b = 0; b < n; ++b) {
          const T* im = px2 + b * c * hw;
          const T* gm = g + b * c * hw;
          T* gxm = gx + b * c * hw;
          const T* mu = mean->data() + b * hw;
          const T* is = invstd->data() + b * hw;
          parallel_for_grain(hw, 1 << 12, [&](int64_t p0, int64_t p1) {
            std::vector<T> s1(static_cast<size_t>(p1 - p0), T(0));
            std::vector<T> s2(static_cast<size_t>(p1 - p0), T(0));
            for (int64_t ch = 0; ch < c; ++ch) {
              const T* grow = gm + ch * hw;
              const T* xrow = im + ch * hw;
              const T gch = pg2[ch];
              for (int64_t p = p0; p < p1; ++p) {
                T dxh = grow[p] * gch;
                T xh = (xrow[p] - mu[p]) * is[p];
                s1[static_cast<size_t>(p - p0)] += dxh;
                s2[static_cast<size_t>(p - p0)] += dxh * xh;
              }
            }
            for (int64_t ch = 0; ch < c; ++ch) {
              const T* grow = gm + ch * hw;
              const T* xrow = im + ch * hw;
              T* gxrow = gxm + ch * hw;
              const T gch = pg2[ch];
              for (int64_t p = p0; p < p1; ++p) {
                T dxh = grow[p] * gch;
                T xh = (xrow[p] - mu[p]) * is[p];
                gxrow[p] += is[p] * (dxh - (s1[static_cast<size_t>(p - p0)] +
                                            xh * s2[static_cast<size_t>(p - p0)]) *
                                               invc);
              }
            }
          });
        }
      }
    };
  return node;
}

// ---------------------------------------------------------------------------
// 2x bilinear upsample, align_corners=false

template <typename T>
Node<T>* upsample_bilinear2x(Tape<T>& tape, Node<T>* x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw ContractError("upsample: want (N,C,H,W)");
  const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int64_t oh = 2 * h, ow = 2 * w;

  // source index/weight tables: src = o/2 - 0.25
  auto make_tables = [](int64_t in, int64_t out, std::vector<int64_t>& i0,
                        std::vector<int64_t>& i1, std::vector<T>& t) {
    i0.resize(static_cast<size_t>(out));
    i1.resize(static_cast<size_t>(out));
    t.resize(static_cast<size_t>(out));
    for (int64_t o = 0; o < out; ++o) {
      double s = 0.5 * (o + 0.5) - 0.5;
      double fl = std::floor(s);
      int64_t a = static_cast<int64_t>(fl);
      t[static_cast<size_t>(o)] = static_cast<T>(s - fl);
      i0[static_cast<size_t>(o)] = std::clamp<int64_t>(a, 0, in - 1);
      i1[static_cast<size_t>(o)] = std::clamp<int64_t>(a + 1, 0, in - 1);
    }
  };
  auto y0 = std::make_shared<std::vector<int64_t>>();
  auto y1 = std::make_shared<std::vector<int64_t>>();
  auto ty = std::make_shared<std::vector<T>>();
  auto x0 = std::make_shared<std::vector<int64_t>>();
  auto x1 = std::make_shared<std::vector<int64_t>>();
  auto tx = std::make_shared<std::vector<T>>();
  make_tables(h, oh, *y0, *y1, *ty);
  make_tables(w, ow, *x0, *x1, *tx);

  Tensor<T> out({n, c, oh, ow});
  const T* px = x->value.data();
  T* po = out.data();
  parallel_for_grain(n * c, 1, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const T* plane = px + p * h * w;
      T* dst = po + p * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        const T* r0 = plane + (*y0)[static_cast<size_t>(oy)] * w;
        const T* r1 = plane + (*y1)[static_cast<size_t>(oy)] * w;
        const T wy = (*ty)[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t a = (*x0)[static_cast<size_t>(ox)], bx = (*x1)[static_cast<size_t>(ox)];
          const T wx = (*tx)[static_cast<size_t>(ox)];
          T top = r0[a] + (r0[bx] - r0[a]) * wx;
          T bot = r1[a] + (r1[bx] - r1[a]) * wx;
          dst[oy * ow + ox] = top + (bot - top) * wy;
        }
      }
    }
  });

  Node<T>* node = tape.make(std::move(out), x->requires_grad);
  if (node->requires_grad)
    node->backward = [node, x, y0, y1, ty, x0, x1, tx, n, c, h, w, oh, ow] {
      const T* g = node->grad.data();
      T* gx = x->grad.data();
      parallel_for_grain(n * c, 1, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
          const T* gp = g + p * oh * ow;
          T* dst = gx + p * h * w;
          for (int64_t oy = 0; oy < oh; ++oy) {
            T* r0 = dst + (*y0)[static_cast<size_t>(oy)] * w;
            T* r1 = dst + (*y1)[static_cast<size_t>(oy)] * w;
            const T wy = (*ty)[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t a = (*x0)[static_cast<size_t>(ox)], bx = (*x1)[static_cast<size_t>(ox)];
              const T wx = (*tx)[static_cast<size_t>(ox)];
              const T gv = gp[oy * ow + ox];
              r0[a] += gv * (T(1) - wy) * (T(1) - wx);
              r0[bx] += gv * (T(1) - wy) * wx;
              r1[a] += gv * wy * (T(1) - wx);
              r1[bx] += gv * wy * wx;
            }
          }
        }
      });
    };
  return node;
}

// ---------------------------------------------------------------------------
// mean absolute error against a constant target

template <typename T>
Node<T>* l1_loss(Tape<T>& tape, Node<T>* pred, std::shared_ptr<Tensor<T>> target) {
  check_same_shape(pred->value, *target, "l1_loss");
  const T* pp = pred->value.data();
  const T* pt = target->data();
  const int64_t n = pred->value.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pp[i]) - static_cast<double>(pt[i]));
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (std::isnan(static_cast<double>(out[0])))
    throw NumericError("l1_loss produced NaN");

  Node<T>* node = tape.make(std::move(out), pred->requires_grad);
  if (node->requires_grad)
    node->backward = [node, pred, target, n] {
      const T g = node->grad[0] / static_cast<T>(n);
      const T* pp2 = pred->value.data();
      const T* pt2 = target->data();
      T* gp = pred->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        T d = pp2[i] - pt2[i];
        gp[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
      }
    };
  return node;
}

}  // namespace usdn::ad
