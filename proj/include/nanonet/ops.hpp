#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nanonet/tensor.hpp"

namespace nanonet {

struct Stride {
  int h = 1;
  int w = 1;
};

struct Pad {
  int h = 0;
  int w = 0;
};

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_dim(int in, int k, int s, int p) {
  return (in + 2 * p - k) / s + 1;
}

// Lowers one image's patches to a (Cin*kh*kw) x (Ho*Wo) matrix, zero-filled
// where the kernel overhangs the padding border. The buffer stays small
// enough to live in cache across the GEMM.
template <typename T>
void im2col(const TensorT<T>& x, int image, int kh, int kw, Stride s, Pad p,
            int ho, int wo, MatRM<T>& col) {
  const int c = x.c(), h = x.h(), w = x.w();
  col.setZero(c * kh * kw, static_cast<Eigen::Index>(ho) * wo);
  const size_t ncols = col.cols();
  for (int ic = 0; ic < c; ++ic) {
    const T* src = x.data.data() + x.index(image, ic, 0, 0);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ic * kh + ky) * kw + kx;
        T* dst = col.data() + row * ncols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.h + ky - p.h;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.w + kx - p.w;
            if (ix < 0 || ix >= w) continue;
            dst[oy * wo + ox] = src[iy * w + ix];
          }
        }
      }
    }
  }
}

// Scatter-add of one image's column matrix back to input layout; adjoint of
// im2col.
template <typename T>
void col2im(const MatRM<T>& col, int image, int kh, int kw, Stride s, Pad p,
            int ho, int wo, TensorT<T>& x) {
  const int c = x.c(), h = x.h(), w = x.w();
  const size_t ncols = col.cols();
  for (int ic = 0; ic < c; ++ic) {
    T* dst = x.data.data() + x.index(image, ic, 0, 0);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ic * kh + ky) * kw + kx;
        const T* src = col.data() + row * ncols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.h + ky - p.h;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.w + kx - p.w;
            if (ix < 0 || ix >= w) continue;
            dst[iy * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation with bias. weights: Cout x Cin x kh x kw.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const LayerParamsT<T>& params,
                          Stride stride = {}, Pad pad = {},
                          const std::string& where = "conv2d") {
  const TensorT<T>& wt = params.weights;
  const int cout = wt.n(), cin = wt.c(), kh = wt.h(), kw = wt.w();
  if (x.c() != cin)
    throw ShapeError(where + ": input channels " + std::to_string(x.c()) +
                     " != weight Cin " + std::to_string(cin) + " (input " +
                     x.shape_str() + ", weights " + wt.shape_str() + ")");
  if (static_cast<int>(params.bias.size()) != cout)
    throw ShapeError(where + ": bias size " + std::to_string(params.bias.size()) +
                     " != Cout " + std::to_string(cout));
  const int ho = detail::conv_out_dim(x.h(), kh, stride.h, pad.h);
  const int wo = detail::conv_out_dim(x.w(), kw, stride.w, pad.w);
  if (ho < 1 || wo < 1)
    throw ShapeError(where + ": output would be " + std::to_string(ho) + "x" +
                     std::to_string(wo) + " for input " + x.shape_str() +
                     ", kernel " + std::to_string(kh) + "x" + std::to_string(kw));

  Eigen::Map<const detail::MatRM<T>> wmat(wt.data.data(), cout,
                                          static_cast<Eigen::Index>(cin) * kh * kw);
  TensorT<T> y(x.n(), cout, ho, wo);
  const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
  detail::MatRM<T> col;
  for (int in = 0; in < x.n(); ++in) {
    detail::im2col(x, in, kh, kw, stride, pad, ho, wo, col);
    // image slices of y are already channel-major (Cout x Ho*Wo)
    Eigen::Map<detail::MatRM<T>> out(y.data.data() + y.index(in, 0, 0, 0), cout,
                                     hwo);
    out.noalias() = wmat * col;
    for (int oc = 0; oc < cout; ++oc) out.row(oc).array() += params.bias[oc];
  }
  return y;
}

template <typename T>
struct ConvGrads {
  TensorT<T> input;
  TensorT<T> weights;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const LayerParamsT<T>& params,
                             const TensorT<T>& upstream, Stride stride = {},
                             Pad pad = {}, const std::string& where = "conv2d") {
  const TensorT<T>& wt = params.weights;
  const int cout = wt.n(), cin = wt.c(), kh = wt.h(), kw = wt.w();
  const int ho = detail::conv_out_dim(x.h(), kh, stride.h, pad.h);
  const int wo = detail::conv_out_dim(x.w(), kw, stride.w, pad.w);
  if (upstream.n() != x.n() || upstream.c() != cout || upstream.h() != ho ||
      upstream.w() != wo)
    throw ShapeError(where + ": upstream grad " + upstream.shape_str() +
                     " != forward output " + std::to_string(x.n()) + "x" +
                     std::to_string(cout) + "x" + std::to_string(ho) + "x" +
                     std::to_string(wo));

  ConvGrads<T> g;
  g.bias.assign(cout, T(0));
  const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
  for (int in = 0; in < x.n(); ++in)
    for (int oc = 0; oc < cout; ++oc) {
      const T* src = upstream.data.data() + upstream.index(in, oc, 0, 0);
      T acc = 0;
      for (Eigen::Index i = 0; i < hwo; ++i) acc += src[i];
      g.bias[oc] += acc;
    }

  const Eigen::Index k = static_cast<Eigen::Index>(cin) * kh * kw;
  Eigen::Map<const detail::MatRM<T>> wmat(wt.data.data(), cout, k);
  detail::MatRM<T> gw = detail::MatRM<T>::Zero(cout, k);
  g.input = TensorT<T>::zeros_like(x);
  detail::MatRM<T> col, gcol;
  for (int in = 0; in < x.n(); ++in) {
    Eigen::Map<const detail::MatRM<T>> gy(
        upstream.data.data() + upstream.index(in, 0, 0, 0), cout, hwo);
    detail::im2col(x, in, kh, kw, stride, pad, ho, wo, col);
    gw.noalias() += gy * col.transpose();
    gcol.noalias() = wmat.transpose() * gy;  // (Cin*kh*kw) x (Ho*Wo)
    detail::col2im(gcol, in, kh, kw, stride, pad, ho, wo, g.input);
  }
  g.weights = TensorT<T>(cout, cin, kh, kw);
  std::copy_n(gw.data(), g.weights.size(), g.weights.data.data());
  return g;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

/// Masks upstream by x > 0 (the forward input, not the forward output).
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream) {
  if (!x.same_shape(upstream))
    throw ShapeError("relu: upstream " + upstream.shape_str() + " != input " +
                     x.shape_str());
  TensorT<T> g = upstream;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (!(x.data[i] > T(0))) g.data[i] = T(0);
  return g;
}

template <typename T>
TensorT<T> add_merge(const TensorT<T>& a, const TensorT<T>& b,
                     const std::string& where = "add") {
  if (!a.same_shape(b))
    throw ShapeError(where + ": shapes differ, " + a.shape_str() + " vs " +
                     b.shape_str());
  TensorT<T> y = a;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
  return y;
}

// add backward is the identity on both branches; callers reuse the upstream
// tensor directly.

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs,
                           const std::string& where = "concat") {
  if (xs.empty()) throw ShapeError(where + ": no inputs");
  const TensorT<T>& first = *xs[0];
  int ctotal = 0;
  for (const TensorT<T>* x : xs) {
    if (x->n() != first.n() || x->h() != first.h() || x->w() != first.w())
      throw ShapeError(where + ": spatial/batch mismatch, " + x->shape_str() +
                       " vs " + first.shape_str());
    ctotal += x->c();
  }
  TensorT<T> y(first.n(), ctotal, first.h(), first.w());
  const int hw = first.h() * first.w();
  for (int in = 0; in < first.n(); ++in) {
    int co = 0;
    for (const TensorT<T>* x : xs) {
      std::copy_n(x->data.data() + x->index(in, 0, 0, 0),
                  static_cast<size_t>(x->c()) * hw,
                  y.data.data() + y.index(in, co, 0, 0));
      co += x->c();
    }
  }
  return y;
}

/// Splits the upstream gradient back into per-input slices; channel_counts
/// must list the forward inputs' channel counts in order.
template <typename T>
std::vector<TensorT<T>> concat_channels_backward(
    const TensorT<T>& upstream, const std::vector<int>& channel_counts) {
  int ctotal = 0;
  for (int c : channel_counts) ctotal += c;
  if (ctotal != upstream.c())
    throw ShapeError("concat backward: channel counts sum " +
                     std::to_string(ctotal) + " != upstream C " +
                     std::to_string(upstream.c()));
  std::vector<TensorT<T>> grads;
  grads.reserve(channel_counts.size());
  const int hw = upstream.h() * upstream.w();
  int co = 0;
  for (int c : channel_counts) {
    TensorT<T> g(upstream.n(), c, upstream.h(), upstream.w());
    for (int in = 0; in < upstream.n(); ++in)
      std::copy_n(upstream.data.data() + upstream.index(in, co, 0, 0),
                  static_cast<size_t>(c) * hw,
                  g.data.data() + g.index(in, 0, 0, 0));
    co += c;
    grads.push_back(std::move(g));
  }
  return grads;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  TensorT<T> y(x.n(), x.c(), 1, 1);
  const int hw = x.h() * x.w();
  for (int in = 0; in < x.n(); ++in)
    for (int ic = 0; ic < x.c(); ++ic) {
      const T* src = x.data.data() + x.index(in, ic, 0, 0);
      T acc = 0;
      for (int i = 0; i < hw; ++i) acc += src[i];
      y.at(in, ic, 0, 0) = acc / static_cast<T>(hw);
    }
  return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const std::array<int, 4>& input_shape,
                                    const TensorT<T>& upstream) {
  TensorT<T> g(input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
  if (upstream.n() != g.n() || upstream.c() != g.c() || upstream.h() != 1 ||
      upstream.w() != 1)
    throw ShapeError("global_avg_pool backward: upstream " +
                     upstream.shape_str() + " incompatible with input " +
                     g.shape_str());
  const int hw = g.h() * g.w();
  for (int in = 0; in < g.n(); ++in)
    for (int ic = 0; ic < g.c(); ++ic) {
      const T v = upstream.at(in, ic, 0, 0) / static_cast<T>(hw);
      T* dst = g.data.data() + g.index(in, ic, 0, 0);
      for (int i = 0; i < hw; ++i) dst[i] = v;
    }
  return g;
}

/// Affine head: y = Wx + b on flattened (N,C,1,1) input.
template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const LayerParamsT<T>& params,
                         const std::string& where = "dense") {
  if (x.h() != 1 || x.w() != 1)
    throw ShapeError(where + ": input must be flattened (N,C,1,1), got " +
                     x.shape_str());
  const TensorT<T>& wt = params.weights;  // out x in x 1 x 1
  const int out = wt.n(), in = wt.c();
  if (x.c() != in)
    throw ShapeError(where + ": input features " + std::to_string(x.c()) +
                     " != weight in " + std::to_string(in));
  Eigen::Map<const detail::MatRM<T>> xm(x.data.data(), x.n(), in);
  Eigen::Map<const detail::MatRM<T>> wm(wt.data.data(), out, in);
  detail::MatRM<T> ym = xm * wm.transpose();
  TensorT<T> y(x.n(), out, 1, 1);
  for (int r = 0; r < x.n(); ++r)
    for (int k = 0; k < out; ++k) y.at(r, k, 0, 0) = ym(r, k) + params.bias[k];
  return y;
}

template <typename T>
ConvGrads<T> dense_backward(const TensorT<T>& x, const LayerParamsT<T>& params,
                            const TensorT<T>& upstream,
                            const std::string& where = "dense") {
  const TensorT<T>& wt = params.weights;
  const int out = wt.n(), in = wt.c();
  if (upstream.n() != x.n() || upstream.c() != out || upstream.h() != 1 ||
      upstream.w() != 1)
    throw ShapeError(where + ": upstream grad " + upstream.shape_str() +
                     " != output shape " + std::to_string(x.n()) + "x" +
                     std::to_string(out) + "x1x1");
  Eigen::Map<const detail::MatRM<T>> xm(x.data.data(), x.n(), in);
  Eigen::Map<const detail::MatRM<T>> wm(wt.data.data(), out, in);
  Eigen::Map<const detail::MatRM<T>> gym(upstream.data.data(), x.n(), out);

  ConvGrads<T> g;
  detail::MatRM<T> gx = gym * wm;              // N x in
  detail::MatRM<T> gw = gym.transpose() * xm;  // out x in
  g.input = TensorT<T>(x.n(), in, 1, 1);
  std::copy_n(gx.data(), g.input.size(), g.input.data.data());
  g.weights = TensorT<T>(out, in, 1, 1);
  std::copy_n(gw.data(), g.weights.size(), g.weights.data.data());
  g.bias.assign(out, T(0));
  for (int r = 0; r < x.n(); ++r)
    for (int k = 0; k < out; ++k) g.bias[k] += upstream.at(r, k, 0, 0);
  return g;
}

/// Row softmax of (N,K,1,1) logits, max-subtracted for stability.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.h() != 1 || logits.w() != 1)
    throw ShapeError("softmax: logits must be (N,K,1,1), got " +
                     logits.shape_str());
  TensorT<T> p = TensorT<T>::zeros_like(logits);
  const int k = logits.c();
  for (int in = 0; in < logits.n(); ++in) {
    const T* row = logits.data.data() + logits.index(in, 0, 0, 0);
    T* out = p.data.data() + p.index(in, 0, 0, 0);
    T mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    T sum = 0;
    for (int i = 0; i < k; ++i) {
      out[i] = std::exp(row[i] - mx);
      sum += out[i];
    }
    for (int i = 0; i < k; ++i) out[i] /= sum;
  }
  return p;
}

template <typename T>
struct SoftmaxXentResult {
  double loss = 0;          // mean over the batch
  TensorT<T> grad_logits;   // (probs - onehot) / N
  TensorT<T> probs;
};

/// Mean cross-entropy over the batch. When class_weights (length K) is
/// given, each row's loss and gradient are scaled by the weight of its true
/// class; pass nullptr for the unweighted default.
template <typename T>
SoftmaxXentResult<T> softmax_xent(const TensorT<T>& logits,
                                  const std::vector<int>& labels,
                                  const std::vector<double>* class_weights = nullptr) {
  if (static_cast<int>(labels.size()) != logits.n())
    throw ValueError("softmax_xent: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(logits.n()));
  const int k = logits.c();
  if (class_weights && static_cast<int>(class_weights->size()) != k)
    throw ValueError("softmax_xent: class_weights size " +
                     std::to_string(class_weights->size()) + " != " +
                     std::to_string(k));
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= k)
      throw ValueError("softmax_xent: label " + std::to_string(labels[i]) +
                       " out of range [0," + std::to_string(k) + ") at row " +
                       std::to_string(i));

  SoftmaxXentResult<T> r;
  r.probs = softmax(logits);
  r.grad_logits = r.probs;
  const int n = logits.n();
  double loss = 0;
  for (int in = 0; in < n; ++in) {
    // log prob of the true class, recomputed in log-space for accuracy
    const T* row = logits.data.data() + logits.index(in, 0, 0, 0);
    T mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double lse = 0;
    for (int i = 0; i < k; ++i) lse += std::exp(static_cast<double>(row[i] - mx));
    const double w = class_weights ? (*class_weights)[labels[in]] : 1.0;
    loss += w * (std::log(lse) - static_cast<double>(row[labels[in]] - mx));
  }
  r.loss = loss / n;
  for (int in = 0; in < n; ++in) {
    T* row = r.grad_logits.data.data() + r.grad_logits.index(in, 0, 0, 0);
    const double w = class_weights ? (*class_weights)[labels[in]] : 1.0;
    row[labels[in]] -= T(1);
    for (int i = 0; i < k; ++i)
      row[i] = static_cast<T>(w * row[i] / static_cast<double>(n));
  }
  return r;
}

}  // namespace nanonet
