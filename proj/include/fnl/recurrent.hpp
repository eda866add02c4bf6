#pragma once

#include <vector>

#include "fnl/kernels.hpp"
#include "fnl/layers.hpp"
#include "fnl/tensor.hpp"

// Recurrent cells: a convolutional LSTM whose gate transformations are
// convolutions over feature maps, and the fully-connected LSTM baseline with
// the same gate algebra. Gate order throughout is i, f, g (candidate), o.
//
// The four gates of each source are stored fused as one weight tensor so a
// step needs two convolutions (input and hidden). Per output channel the
// accumulation order is identical to convolving each gate slice separately,
// so the fused step stays bit-compatible with a straight-line per-gate
// composition from the raw kernels.

namespace fnl {

/// Gate weights for the convolutional cell. Kernels are square with odd k;
/// all gate convolutions use stride 1 and same-padding (k-1)/2 so hidden and
/// input share spatial dims across steps.
template <typename T>
struct ConvLstmParams {
  int in_channels = 0;
  int channels = 0;
  int kernel = 0;
  Tensor<T> wx;  // [4*Ch, Cin, k, k]
  Tensor<T> wh;  // [4*Ch, Ch, k, k]
  Tensor<T> b;   // [4*Ch]

  ConvLstmParams() = default;

  ConvLstmParams(int cin, int ch, int k, Rng& rng) : in_channels(cin), channels(ch), kernel(k) {
    if (k < 1 || k % 2 == 0) throw ArgumentError("convlstm: kernel must be odd, got " + std::to_string(k));
    wx = xavier_init<T>({4 * ch, cin, k, k}, cin * k * k, ch * k * k, rng);
    wh = xavier_init<T>({4 * ch, ch, k, k}, ch * k * k, ch * k * k, rng);
    b = Tensor<T>::zeros({4 * ch});
  }

  int pad() const { return (kernel - 1) / 2; }

  int64_t param_count() const { return wx.numel() + wh.numel() + b.numel(); }
};

template <typename T>
struct ConvLstmState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
ConvLstmState<T> convlstm_zero_state(const ConvLstmParams<T>& p, int height, int width) {
  return {Tensor<T>::zeros({p.channels, height, width}),
          Tensor<T>::zeros({p.channels, height, width})};
}

/// Slice one gate's channels out of a fused [4*Ch, ...] tensor.
template <typename T>
Tensor<T> gate_slice(const Tensor<T>& fused, int gate, int channels) {
  std::vector<int> d = fused.dims;
  d[0] = channels;
  Tensor<T> out(d);
  const int64_t n = out.numel();
  std::memcpy(out.ptr(), fused.ptr() + static_cast<int64_t>(gate) * n, sizeof(T) * n);
  return out;
}

template <typename T>
struct ConvLstmStepCache {
  Tensor<T> x, h_prev, c_prev;
  Tensor<T> i, f, g, o;
  Tensor<T> c_new, tanh_c;
};

namespace detail {

template <typename T>
void split_gates(const Tensor<T>& pre, int channels, Tensor<T>& i, Tensor<T>& f,
                 Tensor<T>& g, Tensor<T>& o) {
  i = sigmoid(gate_slice(pre, 0, channels));
  f = sigmoid(gate_slice(pre, 1, channels));
  g = tanh_map(gate_slice(pre, 2, channels));
  o = sigmoid(gate_slice(pre, 3, channels));
}

}  // namespace detail

/// One recurrence step:
///   i = sigmoid(wx_i * x + wh_i * h + b_i)      f, o analogous
///   g = tanh(wx_g * x + wh_g * h + b_g)
///   c' = g (.) i + c (.) f
///   h' = o (.) tanh(c')
template <typename T>
ConvLstmState<T> convlstm_step(const Tensor<T>& x, const ConvLstmState<T>& prev,
                               const ConvLstmParams<T>& p,
                               ConvLstmStepCache<T>* cache = nullptr) {
  if (x.rank() != 3 || x.dims[0] != p.in_channels)
    throw ShapeError("convlstm_step: input must be [" + std::to_string(p.in_channels) +
                     ",H,W], got " + Tensor<T>::dims_str(x.dims));
  if (prev.h.dims != std::vector<int>{p.channels, x.dims[1], x.dims[2]} ||
      prev.c.dims != prev.h.dims)
    throw ShapeError("convlstm_step: state dims " + Tensor<T>::dims_str(prev.h.dims) +
                     " do not match input " + Tensor<T>::dims_str(x.dims));

  const Tensor<T> zero_bias = Tensor<T>::zeros({4 * p.channels});
  Tensor<T> pre = conv2d(x, p.wx, p.b, 1, p.pad());
  Tensor<T> pre_h = conv2d(prev.h, p.wh, zero_bias, 1, p.pad());
  pre = add(pre, pre_h);

  Tensor<T> i, f, g, o;
  detail::split_gates(pre, p.channels, i, f, g, o);

  Tensor<T> c_new = add(hadamard(g, i), hadamard(prev.c, f));
  Tensor<T> tanh_c = tanh_map(c_new);
  Tensor<T> h_new = hadamard(o, tanh_c);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c_new = c_new;
    cache->tanh_c = std::move(tanh_c);
  }
  return {std::move(h_new), std::move(c_new)};
}

template <typename T>
struct ConvLstmSeqCache {
  std::vector<ConvLstmStepCache<T>> steps;
};

/// Folds convlstm_step over the sequence from zero-or-given initial state and
/// returns the final hidden state. The cache records every step for BPTT.
template <typename T>
ConvLstmState<T> convlstm_sequence(const std::vector<Tensor<T>>& inputs,
                                   const ConvLstmParams<T>& p, const ConvLstmState<T>& init,
                                   ConvLstmSeqCache<T>* cache = nullptr) {
  if (inputs.empty()) throw ArgumentError("convlstm_sequence: empty input list");
  if (cache) {
    cache->steps.clear();
    cache->steps.resize(inputs.size());
  }
  ConvLstmState<T> state = init;
  for (size_t t = 0; t < inputs.size(); ++t)
    state = convlstm_step(inputs[t], state, p, cache ? &cache->steps[t] : nullptr);
  return state;
}

template <typename T>
struct ConvLstmGrads {
  Tensor<T> wx, wh, b;

  explicit ConvLstmGrads(const ConvLstmParams<T>& p)
      : wx(Tensor<T>::zeros(p.wx.dims)), wh(Tensor<T>::zeros(p.wh.dims)),
        b(Tensor<T>::zeros(p.b.dims)) {}

  void zero() {
    wx.fill(T(0));
    wh.fill(T(0));
    b.fill(T(0));
  }
};

namespace detail {

// Backprop through one step. dh/dc carry the running gradients w.r.t. h_t and
// c_t; on return they hold the gradients w.r.t. h_{t-1} and c_{t-1}.
template <typename T>
Tensor<T> convlstm_step_backward(Tensor<T>& dh, Tensor<T>& dc,
                                 const ConvLstmStepCache<T>& s, const ConvLstmParams<T>& p,
                                 ConvLstmGrads<T>& grads) {
  const int ch = p.channels;
  const int64_t n = s.i.numel();
  Tensor<T> dpre({4 * ch, s.i.dims[1], s.i.dims[2]});
  T* dpre_i = dpre.ptr();
  T* dpre_f = dpre.ptr() + n;
  T* dpre_g = dpre.ptr() + 2 * n;
  T* dpre_o = dpre.ptr() + 3 * n;

  for (int64_t j = 0; j < n; ++j) {
    const T dho = dh[j];
    const T dout = dho * s.tanh_c[j];
    const T dcj = dc[j] + dho * s.o[j] * (T(1) - s.tanh_c[j] * s.tanh_c[j]);
    const T di = dcj * s.g[j];
    const T df = dcj * s.c_prev[j];
    const T dg = dcj * s.i[j];
    dc[j] = dcj * s.f[j];  // -> dc_{t-1}
    dpre_i[j] = di * s.i[j] * (T(1) - s.i[j]);
    dpre_f[j] = df * s.f[j] * (T(1) - s.f[j]);
    dpre_g[j] = dg * (T(1) - s.g[j] * s.g[j]);
    dpre_o[j] = dout * s.o[j] * (T(1) - s.o[j]);
  }

  auto gx = conv2d_grad(s.x, p.wx, dpre, 1, p.pad());
  for (int64_t j = 0; j < grads.wx.numel(); ++j) grads.wx[j] += gx.w[j];
  for (int64_t j = 0; j < grads.b.numel(); ++j) grads.b[j] += gx.b[j];

  auto gh = conv2d_grad(s.h_prev, p.wh, dpre, 1, p.pad());
  for (int64_t j = 0; j < grads.wh.numel(); ++j) grads.wh[j] += gh.w[j];
  dh = std::move(gh.x);  // -> dh_{t-1}

  return std::move(gx.x);
}

}  // namespace detail

/// BPTT from a gradient on the final hidden state. Accumulates parameter
/// gradients and returns the gradient w.r.t. every input frame.
template <typename T>
std::vector<Tensor<T>> convlstm_sequence_backward(const Tensor<T>& grad_h_final,
                                                  const ConvLstmSeqCache<T>& cache,
                                                  const ConvLstmParams<T>& p,
                                                  ConvLstmGrads<T>& grads) {
  if (cache.steps.empty()) throw StateError("convlstm_sequence_backward: empty cache");
  const size_t steps = cache.steps.size();
  if (grad_h_final.dims != cache.steps.back().tanh_c.dims)
    throw ShapeError("convlstm_sequence_backward: grad dims mismatch");

  std::vector<Tensor<T>> grad_inputs(steps);
  Tensor<T> dh = grad_h_final;
  Tensor<T> dc = Tensor<T>::zeros(grad_h_final.dims);
  for (size_t t = steps; t-- > 0;)
    grad_inputs[t] = detail::convlstm_step_backward(dh, dc, cache.steps[t], p, grads);
  return grad_inputs;
}

// ---------------------------------------------------------------------------
// Fully-connected LSTM baseline.

template <typename T>
struct LstmParams {
  int in_dim = 0;
  int units = 0;
  Tensor<T> wx;  // [4*U, in]
  Tensor<T> wh;  // [4*U, U]
  Tensor<T> b;   // [4*U]

  LstmParams() = default;

  LstmParams(int in, int u, Rng& rng) : in_dim(in), units(u) {
    wx = xavier_init<T>({4 * u, in}, in, u, rng);
    wh = xavier_init<T>({4 * u, u}, u, u, rng);
    b = Tensor<T>::zeros({4 * u});
  }

  int64_t param_count() const { return wx.numel() + wh.numel() + b.numel(); }
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
LstmState<T> lstm_zero_state(const LstmParams<T>& p) {
  return {Tensor<T>::zeros({p.units}), Tensor<T>::zeros({p.units})};
}

template <typename T>
struct LstmStepCache {
  Tensor<T> x, h_prev, c_prev;
  Tensor<T> i, f, g, o;
  Tensor<T> c_new, tanh_c;
};

/// Same gate structure as the convolutional cell with convolution replaced by
/// matrix product.
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& prev, const LstmParams<T>& p,
                       LstmStepCache<T>* cache = nullptr) {
  if (x.rank() != 1 || x.dims[0] != p.in_dim)
    throw ShapeError("lstm_step: input must be [" + std::to_string(p.in_dim) + "], got " +
                     Tensor<T>::dims_str(x.dims));
  if (prev.h.dims != std::vector<int>{p.units} || prev.c.dims != prev.h.dims)
    throw ShapeError("lstm_step: state dims mismatch");

  const Tensor<T> zero_bias = Tensor<T>::zeros({4 * p.units});
  Tensor<T> pre = matmul_affine(x, p.wx, p.b);
  Tensor<T> pre_h = matmul_affine(prev.h, p.wh, zero_bias);
  pre = add(pre, pre_h);

  const int u = p.units;
  Tensor<T> i({u}), f({u}), g({u}), o({u});
  for (int j = 0; j < u; ++j) {
    i[j] = T(1) / (T(1) + std::exp(-pre[j]));
    f[j] = T(1) / (T(1) + std::exp(-pre[u + j]));
    g[j] = std::tanh(pre[2 * u + j]);
    o[j] = T(1) / (T(1) + std::exp(-pre[3 * u + j]));
  }
  Tensor<T> c_new = add(hadamard(g, i), hadamard(prev.c, f));
  Tensor<T> tanh_c = tanh_map(c_new);
  Tensor<T> h_new = hadamard(o, tanh_c);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c_new = c_new;
    cache->tanh_c = std::move(tanh_c);
  }
  return {std::move(h_new), std::move(c_new)};
}

template <typename T>
struct LstmSeqCache {
  std::vector<LstmStepCache<T>> steps;
};

template <typename T>
LstmState<T> lstm_sequence(const std::vector<Tensor<T>>& inputs, const LstmParams<T>& p,
                           const LstmState<T>& init, LstmSeqCache<T>* cache = nullptr) {
  if (inputs.empty()) throw ArgumentError("lstm_sequence: empty input list");
  if (cache) {
    cache->steps.clear();
    cache->steps.resize(inputs.size());
  }
  LstmState<T> state = init;
  for (size_t t = 0; t < inputs.size(); ++t)
    state = lstm_step(inputs[t], state, p, cache ? &cache->steps[t] : nullptr);
  return state;
}

template <typename T>
struct LstmGrads {
  Tensor<T> wx, wh, b;

  explicit LstmGrads(const LstmParams<T>& p)
      : wx(Tensor<T>::zeros(p.wx.dims)), wh(Tensor<T>::zeros(p.wh.dims)),
        b(Tensor<T>::zeros(p.b.dims)) {}

  void zero() {
    wx.fill(T(0));
    wh.fill(T(0));
    b.fill(T(0));
  }
};

template <typename T>
std::vector<Tensor<T>> lstm_sequence_backward(const Tensor<T>& grad_h_final,
                                              const LstmSeqCache<T>& cache,
                                              const LstmParams<T>& p, LstmGrads<T>& grads) {
  if (cache.steps.empty()) throw StateError("lstm_sequence_backward: empty cache");
  const size_t steps = cache.steps.size();
  const int u = p.units;
  if (grad_h_final.dims != std::vector<int>{u})
    throw ShapeError("lstm_sequence_backward: grad dims mismatch");

  std::vector<Tensor<T>> grad_inputs(steps);
  Tensor<T> dh = grad_h_final;
  Tensor<T> dc = Tensor<T>::zeros({u});
  for (size_t t = steps; t-- > 0;) {
    const LstmStepCache<T>& s = cache.steps[t];
    Tensor<T> dpre({4 * u});
    for (int j = 0; j < u; ++j) {
      const T dho = dh[j];
      const T dout = dho * s.tanh_c[j];
      const T dcj = dc[j] + dho * s.o[j] * (T(1) - s.tanh_c[j] * s.tanh_c[j]);
      const T di = dcj * s.g[j];
      const T df = dcj * s.c_prev[j];
      const T dg = dcj * s.i[j];
      dc[j] = dcj * s.f[j];
      dpre[j] = di * s.i[j] * (T(1) - s.i[j]);
      dpre[u + j] = df * s.f[j] * (T(1) - s.f[j]);
      dpre[2 * u + j] = dg * (T(1) - s.g[j] * s.g[j]);
      dpre[3 * u + j] = dout * s.o[j] * (T(1) - s.o[j]);
    }
    auto gx = matmul_affine_grad(s.x, p.wx, dpre);
    for (int64_t j = 0; j < grads.wx.numel(); ++j) grads.wx[j] += gx.w[j];
    for (int64_t j = 0; j < grads.b.numel(); ++j) grads.b[j] += gx.b[j];
    auto gh = matmul_affine_grad(s.h_prev, p.wh, dpre);
    for (int64_t j = 0; j < grads.wh.numel(); ++j) grads.wh[j] += gh.w[j];
    dh = std::move(gh.x);
    grad_inputs[t] = std::move(gx.x);
  }
  return grad_inputs;
}

}  // namespace fnl
