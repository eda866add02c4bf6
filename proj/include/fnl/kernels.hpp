#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "fnl/tensor.hpp"

// Numerical kernels with their exact backward passes. All kernels are pure
// functions of their inputs and run single-threaded, so identical inputs give
// bit-identical outputs.
//
// Convolution is cross-correlation (no kernel flip) with zero padding.
// The im2col path accumulates each output element over (channel, ky, kx) in
// ascending order, matching a naive nested-loop evaluation bit for bit.

namespace fnl {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad,
            int out_h, int out_w, T* col) {
  // col is [out_h*out_w, cin*k*k], one row per output position.
  const int64_t q_total = static_cast<int64_t>(cin) * k * k;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      T* dst = col + (static_cast<int64_t>(oy) * out_w + ox) * q_total;
      int64_t q = 0;
      for (int c = 0; c < cin; ++c) {
        const T* xc = x + static_cast<int64_t>(c) * h * w;
        for (int u = 0; u < k; ++u) {
          const int iy = oy * stride + u - pad;
          for (int v = 0; v < k; ++v, ++q) {
            const int ix = ox * stride + v - pad;
            dst[q] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                         ? xc[static_cast<int64_t>(iy) * w + ix]
                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad,
                int out_h, int out_w, T* x) {
  const int64_t q_total = static_cast<int64_t>(cin) * k * k;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const T* src = col + (static_cast<int64_t>(oy) * out_w + ox) * q_total;
      int64_t q = 0;
      for (int c = 0; c < cin; ++c) {
        T* xc = x + static_cast<int64_t>(c) * h * w;
        for (int u = 0; u < k; ++u) {
          const int iy = oy * stride + u - pad;
          for (int v = 0; v < k; ++v, ++q) {
            const int ix = ox * stride + v - pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              xc[static_cast<int64_t>(iy) * w + ix] += src[q];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_check(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                  int stride, int pad) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + Tensor<T>::dims_str(x.dims));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + Tensor<T>::dims_str(w.dims));
  if (w.dims[2] != w.dims[3]) throw ShapeError("conv2d: kernel must be square");
  if (w.dims[1] != x.dims[0])
    throw ShapeError("conv2d: input channels " + std::to_string(x.dims[0]) +
                     " != weight Cin " + std::to_string(w.dims[1]));
  if (b && (b->rank() != 1 || b->dims[0] != w.dims[0]))
    throw ShapeError("conv2d: bias must be [Cout]");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  const int k = w.dims[2];
  if (k > x.dims[1] + 2 * pad || k > x.dims[2] + 2 * pad)
    throw ShapeError("conv2d: kernel larger than padded input");
}

}  // namespace detail

/// y[o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * x_padded[c, i*stride+u, j*stride+v]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  detail::conv2d_check(x, w, &b, stride, pad);
  const int cin = x.dims[0], h = x.dims[1], wd = x.dims[2];
  const int cout = w.dims[0], k = w.dims[2];
  const int out_h = conv_out_extent(h, k, stride, pad);
  const int out_w = conv_out_extent(wd, k, stride, pad);
  const int64_t p_total = static_cast<int64_t>(out_h) * out_w;
  const int64_t q_total = static_cast<int64_t>(cin) * k * k;

  std::vector<T> col(p_total * q_total);
  detail::im2col(x.ptr(), cin, h, wd, k, stride, pad, out_h, out_w, col.data());

  Tensor<T> y({cout, out_h, out_w});
  for (int o = 0; o < cout; ++o) {
    const T* wrow = w.ptr() + static_cast<int64_t>(o) * q_total;
    T* yrow = y.ptr() + static_cast<int64_t>(o) * p_total;
    for (int64_t p = 0; p < p_total; ++p) {
      const T* crow = col.data() + p * q_total;
      T acc = b[o];
      for (int64_t q = 0; q < q_total; ++q) acc += wrow[q] * crow[q];
      yrow[p] = acc;
    }
  }
  return y;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> x;
  Tensor<T> w;
  Tensor<T> b;
};

/// Exact partials of sum(grad_y . conv2d(x,w,b)) w.r.t. x, w and b.
template <typename T>
Conv2dGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& grad_y, int stride, int pad) {
  detail::conv2d_check<T>(x, w, nullptr, stride, pad);
  const int cin = x.dims[0], h = x.dims[1], wd = x.dims[2];
  const int cout = w.dims[0], k = w.dims[2];
  const int out_h = conv_out_extent(h, k, stride, pad);
  const int out_w = conv_out_extent(wd, k, stride, pad);
  if (grad_y.dims != std::vector<int>{cout, out_h, out_w})
    throw ShapeError("conv2d_grad: grad_y dims " + Tensor<T>::dims_str(grad_y.dims) +
                     " do not match conv output [" + std::to_string(cout) + "," +
                     std::to_string(out_h) + "," + std::to_string(out_w) + "]");

  const int64_t p_total = static_cast<int64_t>(out_h) * out_w;
  const int64_t q_total = static_cast<int64_t>(cin) * k * k;

  std::vector<T> col(p_total * q_total);
  detail::im2col(x.ptr(), cin, h, wd, k, stride, pad, out_h, out_w, col.data());

  Conv2dGrads<T> g;
  g.x = Tensor<T>::zeros(x.dims);
  g.w = Tensor<T>::zeros(w.dims);
  g.b = Tensor<T>::zeros({cout});

  for (int o = 0; o < cout; ++o) {
    const T* gyrow = grad_y.ptr() + static_cast<int64_t>(o) * p_total;
    T acc = T(0);
    for (int64_t p = 0; p < p_total; ++p) acc += gyrow[p];
    g.b[o] = acc;
    T* gwrow = g.w.ptr() + static_cast<int64_t>(o) * q_total;
    for (int64_t p = 0; p < p_total; ++p) {
      const T gy = gyrow[p];
      if (gy == T(0)) continue;
      const T* crow = col.data() + p * q_total;
      for (int64_t q = 0; q < q_total; ++q) gwrow[q] += gy * crow[q];
    }
  }

  std::vector<T> gcol(p_total * q_total, T(0));
  for (int64_t p = 0; p < p_total; ++p) {
    T* grow = gcol.data() + p * q_total;
    for (int o = 0; o < cout; ++o) {
      const T gy = grad_y.ptr()[static_cast<int64_t>(o) * p_total + p];
      if (gy == T(0)) continue;
      const T* wrow = w.ptr() + static_cast<int64_t>(o) * q_total;
      for (int64_t q = 0; q < q_total; ++q) grow[q] += gy * wrow[q];
    }
  }
  detail::col2im_add(gcol.data(), cin, h, wd, k, stride, pad, out_h, out_w, g.x.ptr());
  return g;
}

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<int64_t> argmax;  // per output element: flat index into the input
};

/// Max pooling over k-by-k windows. Ties resolve to the lowest flat index so
/// the backward pass is deterministic.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  if (x.rank() != 3) throw ShapeError("maxpool2d: input must be [C,H,W]");
  const int c = x.dims[0], h = x.dims[1], w = x.dims[2];
  if (k < 1 || stride < 1) throw ShapeError("maxpool2d: k and stride must be >= 1");
  if (k > h || k > w) throw ShapeError("maxpool2d: window " + std::to_string(k) +
                                       " larger than input " + Tensor<T>::dims_str(x.dims));
  const int out_h = (h - k) / stride + 1;
  const int out_w = (w - k) / stride + 1;

  PoolResult<T> r;
  r.y = Tensor<T>({c, out_h, out_w});
  r.argmax.resize(r.y.numel());
  int64_t p = 0;
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x.ptr() + static_cast<int64_t>(ch) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, ++p) {
        T best = xc[static_cast<int64_t>(oy * stride) * w + ox * stride];
        int64_t best_idx = static_cast<int64_t>(oy * stride) * w + ox * stride;
        for (int u = 0; u < k; ++u) {
          const int64_t row = static_cast<int64_t>(oy * stride + u) * w;
          for (int v = 0; v < k; ++v) {
            const int64_t idx = row + ox * stride + v;
            if (xc[idx] > best) {
              best = xc[idx];
              best_idx = idx;
            }
          }
        }
        r.y[p] = best;
        r.argmax[p] = static_cast<int64_t>(ch) * h * w + best_idx;
      }
    }
  }
  return r;
}

/// Routes grad_y back to the recorded argmax positions (accumulating).
template <typename T>
Tensor<T> maxpool2d_grad(const std::vector<int64_t>& argmax, const Tensor<T>& grad_y,
                         const std::vector<int>& input_dims) {
  Tensor<T> gx = Tensor<T>::zeros(input_dims);
  if (static_cast<int64_t>(argmax.size()) != grad_y.numel())
    throw ShapeError("maxpool2d_grad: argmax size does not match grad_y");
  for (int64_t p = 0; p < grad_y.numel(); ++p) {
    if (argmax[p] < 0 || argmax[p] >= gx.numel())
      throw ShapeError("maxpool2d_grad: argmax index out of input range (stale argmax?)");
    gx[argmax[p]] += grad_y[p];
  }
  return gx;
}

enum class Pointwise { Sigmoid, Tanh, Relu, Add, Sub, Hadamard };

inline bool pointwise_is_binary(Pointwise kind) {
  return kind == Pointwise::Add || kind == Pointwise::Sub || kind == Pointwise::Hadamard;
}

template <typename T>
Tensor<T> pointwise(Pointwise kind, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
  if (pointwise_is_binary(kind)) {
    if (!b) throw ArgumentError("pointwise: binary kind needs two operands");
    if (a.dims != b->dims)
      throw ShapeError("pointwise: dims mismatch " + Tensor<T>::dims_str(a.dims) + " vs " +
                       Tensor<T>::dims_str(b->dims));
  }
  Tensor<T> y(a.dims);
  const int64_t n = a.numel();
  switch (kind) {
    case Pointwise::Sigmoid:
      for (int64_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-a[i]));
      break;
    case Pointwise::Tanh:
      for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(a[i]);
      break;
    case Pointwise::Relu:
      for (int64_t i = 0; i < n; ++i) y[i] = a[i] > T(0) ? a[i] : T(0);
      break;
    case Pointwise::Add:
      for (int64_t i = 0; i < n; ++i) y[i] = a[i] + (*b)[i];
      break;
    case Pointwise::Sub:
      for (int64_t i = 0; i < n; ++i) y[i] = a[i] - (*b)[i];
      break;
    case Pointwise::Hadamard:
      for (int64_t i = 0; i < n; ++i) y[i] = a[i] * (*b)[i];
      break;
  }
  return y;
}

/// Exact backward rule for each pointwise kind. `y` is the forward output,
/// which the sigmoid/tanh rules reuse. grad_b may be null for unary kinds.
template <typename T>
void pointwise_backward(Pointwise kind, const Tensor<T>& a, const Tensor<T>* b,
                        const Tensor<T>& y, const Tensor<T>& grad_y,
                        Tensor<T>& grad_a, Tensor<T>* grad_b) {
  if (grad_y.dims != y.dims) throw ShapeError("pointwise_backward: grad_y dims mismatch");
  grad_a = Tensor<T>(a.dims);
  if (pointwise_is_binary(kind)) {
    if (!b || !grad_b) throw ArgumentError("pointwise_backward: binary kind needs b and grad_b");
    *grad_b = Tensor<T>(b->dims);
  }
  const int64_t n = a.numel();
  switch (kind) {
    case Pointwise::Sigmoid:
      for (int64_t i = 0; i < n; ++i) grad_a[i] = grad_y[i] * y[i] * (T(1) - y[i]);
      break;
    case Pointwise::Tanh:
      for (int64_t i = 0; i < n; ++i) grad_a[i] = grad_y[i] * (T(1) - y[i] * y[i]);
      break;
    case Pointwise::Relu:
      for (int64_t i = 0; i < n; ++i) grad_a[i] = a[i] > T(0) ? grad_y[i] : T(0);
      break;
    case Pointwise::Add:
      for (int64_t i = 0; i < n; ++i) {
        grad_a[i] = grad_y[i];
        (*grad_b)[i] = grad_y[i];
      }
      break;
    case Pointwise::Sub:
      for (int64_t i = 0; i < n; ++i) {
        grad_a[i] = grad_y[i];
        (*grad_b)[i] = -grad_y[i];
      }
      break;
    case Pointwise::Hadamard:
      for (int64_t i = 0; i < n; ++i) {
        grad_a[i] = grad_y[i] * (*b)[i];
        (*grad_b)[i] = grad_y[i] * a[i];
      }
      break;
  }
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) { return pointwise(Pointwise::Sigmoid, a); }
template <typename T>
Tensor<T> tanh_map(const Tensor<T>& a) { return pointwise(Pointwise::Tanh, a); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return pointwise(Pointwise::Relu, a); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return pointwise(Pointwise::Add, a, &b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return pointwise(Pointwise::Sub, a, &b); }
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) { return pointwise(Pointwise::Hadamard, a, &b); }

/// y = W x + b for a vector x. Accumulation starts at b[m] and walks the inner
/// dimension in ascending order (same order as a 1x1 convolution).
template <typename T>
Tensor<T> matmul_affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1)
    throw ShapeError("matmul_affine: expected x[n], W[m,n], b[m]");
  if (w.dims[1] != x.dims[0] || w.dims[0] != b.dims[0])
    throw ShapeError("matmul_affine: dims mismatch W" + Tensor<T>::dims_str(w.dims) + " x" +
                     Tensor<T>::dims_str(x.dims) + " b" + Tensor<T>::dims_str(b.dims));
  const int m = w.dims[0], n = w.dims[1];
  Tensor<T> y({m});
  for (int i = 0; i < m; ++i) {
    const T* wrow = w.ptr() + static_cast<int64_t>(i) * n;
    T acc = b[i];
    for (int j = 0; j < n; ++j) acc += wrow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

template <typename T>
struct AffineGrads {
  Tensor<T> x;
  Tensor<T> w;
  Tensor<T> b;
};

/// grad_W = grad_y outer x, grad_x = W^T grad_y, grad_b = grad_y.
template <typename T>
AffineGrads<T> matmul_affine_grad(const Tensor<T>& x, const Tensor<T>& w,
                                  const Tensor<T>& grad_y) {
  if (grad_y.rank() != 1 || grad_y.dims[0] != w.dims[0])
    throw ShapeError("matmul_affine_grad: grad_y dims mismatch");
  if (w.dims[1] != x.dims[0]) throw ShapeError("matmul_affine_grad: W/x dims mismatch");
  const int m = w.dims[0], n = w.dims[1];
  AffineGrads<T> g;
  g.x = Tensor<T>::zeros({n});
  g.w = Tensor<T>({m, n});
  g.b = Tensor<T>({m});
  for (int i = 0; i < m; ++i) {
    const T gy = grad_y[i];
    g.b[i] = gy;
    const T* wrow = w.ptr() + static_cast<int64_t>(i) * n;
    T* gwrow = g.w.ptr() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      gwrow[j] = gy * x[j];
      g.x[j] += wrow[j] * gy;
    }
  }
  return g;
}

/// Bilinear resize with corner-aligned sampling: source coordinate
/// i * (in-1) / (out-1), degenerating to 0 when out == 1. Constant images map
/// to constant images.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear: input must be [C,H,W]");
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear: target dims must be positive");
  const int c = img.dims[0], h = img.dims[1], w = img.dims[2];
  if (out_h == h && out_w == w) return img;

  Tensor<T> out({c, out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < h ? y0 + 1 : y0;
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < w ? x0 + 1 : x0;
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const T* p = img.ptr() + static_cast<int64_t>(ch) * h * w;
        const double top = (1.0 - wx) * p[static_cast<int64_t>(y0) * w + x0] +
                           wx * p[static_cast<int64_t>(y0) * w + x1];
        const double bot = (1.0 - wx) * p[static_cast<int64_t>(y1) * w + x0] +
                           wx * p[static_cast<int64_t>(y1) * w + x1];
        out.at(ch, oy, ox) = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

}  // namespace fnl
