#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fnl/kernels.hpp"
#include "fnl/mode.hpp"
#include "fnl/tensor.hpp"

// Stateful layer abstractions over the raw kernels. Layers operate on batched
// tensors with a leading sample dimension N; a "sample" is one video frame for
// the convolutional stack and one clip-level feature vector for the head.
// Forward caches whatever backward needs; the cache is overwritten on every
// forward call and backward throws StateError when no cache is present.

namespace fnl {

template <typename T>
struct ParamRef {
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for non-trainable buffers
};

template <typename T>
using ParamMap = std::map<std::string, ParamRef<T>>;

/// Values i.i.d. uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
/// For conv kernels the fans include the receptive field.
template <typename T>
Tensor<T> xavier_init(std::vector<int> dims, int fan_in, int fan_out, Rng& rng) {
  if (fan_in <= 0 || fan_out <= 0)
    throw ArgumentError("xavier_init: fans must be positive, got " + std::to_string(fan_in) +
                        "/" + std::to_string(fan_out));
  const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
  Tensor<T> t(std::move(dims));
  rng.fill_uniform(t, -a, a);
  return t;
}

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_y) = 0;

  /// Register trainable params and persistent buffers under this layer's name.
  virtual void collect(ParamMap<T>& params, ParamMap<T>& buffers) { (void)params; (void)buffers; }
  virtual void zero_grads() {}

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }
  const std::string& name() const { return name_; }

 protected:
  void require_cache(const char* op) const {
    if (!has_cache_) throw StateError(name_ + ": " + op + " called before forward");
  }

  std::string name_;
  Mode mode_ = Mode::Train;
  bool has_cache_ = false;
};

template <typename T>
class Conv2dLayer : public Layer<T> {
 public:
  Conv2dLayer(std::string name, int cin, int cout, int k, int stride, int pad, Rng& rng)
      : Layer<T>(std::move(name)), stride_(stride), pad_(pad) {
    w_ = xavier_init<T>({cout, cin, k, k}, cin * k * k, cout * k * k, rng);
    b_ = Tensor<T>::zeros({cout});
    gw_ = Tensor<T>::zeros(w_.dims);
    gb_ = Tensor<T>::zeros(b_.dims);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4) throw ShapeError(this->name_ + ": expected [N,C,H,W]");
    x_ = x;
    const int n = x.dims[0];
    Tensor<T> y0 = conv2d(slice_outer(x, 0), w_, b_, stride_, pad_);
    std::vector<int> yd = {n, y0.dims[0], y0.dims[1], y0.dims[2]};
    Tensor<T> y(yd);
    set_outer(y, 0, y0);
    for (int i = 1; i < n; ++i) set_outer(y, i, conv2d(slice_outer(x, i), w_, b_, stride_, pad_));
    this->has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    const int n = x_.dims[0];
    if (grad_y.dims[0] != n) throw ShapeError(this->name_ + ": grad batch mismatch");
    Tensor<T> gx(x_.dims);
    for (int i = 0; i < n; ++i) {
      auto g = conv2d_grad(slice_outer(x_, i), w_, slice_outer(grad_y, i), stride_, pad_);
      set_outer(gx, i, g.x);
      for (int64_t j = 0; j < gw_.numel(); ++j) gw_[j] += g.w[j];
      for (int64_t j = 0; j < gb_.numel(); ++j) gb_[j] += g.b[j];
    }
    return gx;
  }

  void collect(ParamMap<T>& params, ParamMap<T>&) override {
    params[this->name_ + ".w"] = {&w_, &gw_};
    params[this->name_ + ".b"] = {&b_, &gb_};
  }

  void zero_grads() override {
    gw_.fill(T(0));
    gb_.fill(T(0));
  }

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  int stride_, pad_;
  Tensor<T> w_, b_, gw_, gb_;
  Tensor<T> x_;
};

template <typename T>
class ReluLayer : public Layer<T> {
 public:
  explicit ReluLayer(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    x_ = x;
    this->has_cache_ = true;
    Tensor<T> y(x.dims);
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    if (grad_y.dims != x_.dims) throw ShapeError(this->name_ + ": grad dims mismatch");
    Tensor<T> gx(x_.dims);
    for (int64_t i = 0; i < x_.numel(); ++i) gx[i] = x_[i] > T(0) ? grad_y[i] : T(0);
    return gx;
  }

 private:
  Tensor<T> x_;
};

template <typename T>
class MaxPoolLayer : public Layer<T> {
 public:
  MaxPoolLayer(std::string name, int k, int stride)
      : Layer<T>(std::move(name)), k_(k), stride_(stride) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4) throw ShapeError(this->name_ + ": expected [N,C,H,W]");
    in_dims_ = {x.dims[1], x.dims[2], x.dims[3]};
    const int n = x.dims[0];
    argmax_.clear();
    PoolResult<T> r0 = maxpool2d(slice_outer(x, 0), k_, stride_);
    Tensor<T> y({n, r0.y.dims[0], r0.y.dims[1], r0.y.dims[2]});
    set_outer(y, 0, r0.y);
    argmax_.push_back(std::move(r0.argmax));
    for (int i = 1; i < n; ++i) {
      PoolResult<T> r = maxpool2d(slice_outer(x, i), k_, stride_);
      set_outer(y, i, r.y);
      argmax_.push_back(std::move(r.argmax));
    }
    this->has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    const int n = grad_y.dims[0];
    if (static_cast<size_t>(n) != argmax_.size())
      throw ShapeError(this->name_ + ": grad batch mismatch");
    Tensor<T> gx({n, in_dims_[0], in_dims_[1], in_dims_[2]});
    for (int i = 0; i < n; ++i)
      set_outer(gx, i, maxpool2d_grad(argmax_[i], slice_outer(grad_y, i), in_dims_));
    return gx;
  }

 private:
  int k_, stride_;
  std::vector<int> in_dims_;
  std::vector<std::vector<int64_t>> argmax_;
};

template <typename T>
class FlattenLayer : public Layer<T> {
 public:
  explicit FlattenLayer(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    in_dims_ = x.dims;
    this->has_cache_ = true;
    Tensor<T> y = x;
    y.reshape({x.dims[0], static_cast<int>(x.numel() / x.dims[0])});
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    Tensor<T> gx = grad_y;
    gx.reshape(in_dims_);
    return gx;
  }

 private:
  std::vector<int> in_dims_;
};

template <typename T>
class FullyConnectedLayer : public Layer<T> {
 public:
  FullyConnectedLayer(std::string name, int in, int out, Rng& rng)
      : Layer<T>(std::move(name)) {
    w_ = xavier_init<T>({out, in}, in, out, rng);
    b_ = Tensor<T>::zeros({out});
    gw_ = Tensor<T>::zeros(w_.dims);
    gb_ = Tensor<T>::zeros(b_.dims);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 2 || x.dims[1] != w_.dims[1])
      throw ShapeError(this->name_ + ": expected [N," + std::to_string(w_.dims[1]) + "], got " +
                       Tensor<T>::dims_str(x.dims));
    x_ = x;
    const int n = x.dims[0];
    Tensor<T> y({n, w_.dims[0]});
    for (int i = 0; i < n; ++i) set_outer(y, i, matmul_affine(slice_outer(x, i), w_, b_));
    this->has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    const int n = x_.dims[0];
    Tensor<T> gx(x_.dims);
    for (int i = 0; i < n; ++i) {
      auto g = matmul_affine_grad(slice_outer(x_, i), w_, slice_outer(grad_y, i));
      set_outer(gx, i, g.x);
      for (int64_t j = 0; j < gw_.numel(); ++j) gw_[j] += g.w[j];
      for (int64_t j = 0; j < gb_.numel(); ++j) gb_[j] += g.b[j];
    }
    return gx;
  }

  void collect(ParamMap<T>& params, ParamMap<T>&) override {
    params[this->name_ + ".w"] = {&w_, &gw_};
    params[this->name_ + ".b"] = {&b_, &gb_};
  }

  void zero_grads() override {
    gw_.fill(T(0));
    gb_.fill(T(0));
  }

 private:
  Tensor<T> w_, b_, gw_, gb_;
  Tensor<T> x_;
};

template <typename T>
class SigmoidLayer : public Layer<T> {
 public:
  explicit SigmoidLayer(std::string name) : Layer<T>(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    y_ = sigmoid(x);
    this->has_cache_ = true;
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    Tensor<T> gx(y_.dims);
    for (int64_t i = 0; i < y_.numel(); ++i) gx[i] = grad_y[i] * y_[i] * (T(1) - y_[i]);
    return gx;
  }

 private:
  Tensor<T> y_;
};

/// Batch normalization over [N,C] or [N,C,H,W], per-channel statistics across
/// the batch and spatial dims. Train mode needs N >= 2 and updates running
/// stats as running = (1 - momentum) * running + momentum * batch (population
/// variance). Eval mode is a pure function of the running stats.
template <typename T>
class BatchNormLayer : public Layer<T> {
 public:
  BatchNormLayer(std::string name, int channels, double momentum = 0.1, double epsilon = 1e-5)
      : Layer<T>(std::move(name)), momentum_(momentum), epsilon_(epsilon) {
    gamma_ = Tensor<T>::full({channels}, T(1));
    beta_ = Tensor<T>::zeros({channels});
    ggamma_ = Tensor<T>::zeros({channels});
    gbeta_ = Tensor<T>::zeros({channels});
    running_mean_ = Tensor<T>::zeros({channels});
    running_var_ = Tensor<T>::full({channels}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    check_input(x);
    const int n = x.dims[0], c = x.dims[1];
    const int64_t spatial = x.numel() / (static_cast<int64_t>(n) * c);
    const int64_t m = static_cast<int64_t>(n) * spatial;
    Tensor<T> y(x.dims);
    cached_train_ = (this->mode_ == Mode::Train);

    if (cached_train_) {
      if (n < 2) throw ArgumentError(this->name_ + ": train mode needs batch >= 2");
      xhat_ = Tensor<T>(x.dims);
      inv_std_.assign(c, 0.0);
      for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = channel_ptr(x, i, ch, spatial);
          for (int64_t s = 0; s < spatial; ++s) {
            sum += p[s];
            sumsq += static_cast<double>(p[s]) * p[s];
          }
        }
        const double mean = sum / m;
        const double var = sumsq / m - mean * mean;
        const double inv = 1.0 / std::sqrt(var + epsilon_);
        inv_std_[ch] = inv;
        running_mean_[ch] = static_cast<T>((1.0 - momentum_) * running_mean_[ch] + momentum_ * mean);
        running_var_[ch] = static_cast<T>((1.0 - momentum_) * running_var_[ch] + momentum_ * var);
        for (int i = 0; i < n; ++i) {
          const T* p = channel_ptr(x, i, ch, spatial);
          T* xh = channel_ptr(xhat_, i, ch, spatial);
          T* py = channel_ptr(y, i, ch, spatial);
          for (int64_t s = 0; s < spatial; ++s) {
            xh[s] = static_cast<T>((p[s] - mean) * inv);
            py[s] = gamma_[ch] * xh[s] + beta_[ch];
          }
        }
      }
    } else {
      for (int ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[ch]) + epsilon_);
        for (int i = 0; i < n; ++i) {
          const T* p = channel_ptr(x, i, ch, spatial);
          T* py = channel_ptr(y, i, ch, spatial);
          for (int64_t s = 0; s < spatial; ++s)
            py[s] = static_cast<T>(gamma_[ch] * (p[s] - running_mean_[ch]) * inv + beta_[ch]);
        }
      }
      eval_dims_ = x.dims;
    }
    this->has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_y) override {
    this->require_cache("backward");
    if (cached_train_) {
      const int n = xhat_.dims[0], c = xhat_.dims[1];
      const int64_t spatial = xhat_.numel() / (static_cast<int64_t>(n) * c);
      const int64_t m = static_cast<int64_t>(n) * spatial;
      if (grad_y.dims != xhat_.dims) throw ShapeError(this->name_ + ": grad dims mismatch");
      Tensor<T> gx(xhat_.dims);
      for (int ch = 0; ch < c; ++ch) {
        double dgamma = 0.0, dbeta = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* gy = channel_ptr(grad_y, i, ch, spatial);
          const T* xh = channel_ptr(xhat_, i, ch, spatial);
          for (int64_t s = 0; s < spatial; ++s) {
            dgamma += static_cast<double>(gy[s]) * xh[s];
            dbeta += gy[s];
          }
        }
        ggamma_[ch] += static_cast<T>(dgamma);
        gbeta_[ch] += static_cast<T>(dbeta);
        const double scale = gamma_[ch] * inv_std_[ch] / m;
        for (int i = 0; i < n; ++i) {
          const T* gy = channel_ptr(grad_y, i, ch, spatial);
          const T* xh = channel_ptr(xhat_, i, ch, spatial);
          T* pgx = channel_ptr(gx, i, ch, spatial);
          for (int64_t s = 0; s < spatial; ++s)
            pgx[s] = static_cast<T>(scale * (m * gy[s] - dbeta - xh[s] * dgamma));
        }
      }
      return gx;
    }
    // Eval-mode backward treats running stats as constants.
    const int n = grad_y.dims[0], c = grad_y.dims[1];
    if (grad_y.dims != eval_dims_) throw ShapeError(this->name_ + ": grad dims mismatch");
    const int64_t spatial = grad_y.numel() / (static_cast<int64_t>(n) * c);
    Tensor<T> gx(grad_y.dims);
    for (int ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[ch]) + epsilon_);
      for (int i = 0; i < n; ++i) {
        const T* gy = channel_ptr(grad_y, i, ch, spatial);
        T* pgx = channel_ptr(gx, i, ch, spatial);
        for (int64_t s = 0; s < spatial; ++s) pgx[s] = static_cast<T>(gy[s] * gamma_[ch] * inv);
      }
    }
    return gx;
  }

  void collect(ParamMap<T>& params, ParamMap<T>& buffers) override {
    params[this->name_ + ".gamma"] = {&gamma_, &ggamma_};
    params[this->name_ + ".beta"] = {&beta_, &gbeta_};
    buffers[this->name_ + ".running_mean"] = {&running_mean_, nullptr};
    buffers[this->name_ + ".running_var"] = {&running_var_, nullptr};
  }

  void zero_grads() override {
    ggamma_.fill(T(0));
    gbeta_.fill(T(0));
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() < 2 || x.dims[1] != gamma_.dims[0])
      throw ShapeError(this->name_ + ": expected [N," + std::to_string(gamma_.dims[0]) +
                       ",...], got " + Tensor<T>::dims_str(x.dims));
  }

  static T* channel_ptr(Tensor<T>& t, int i, int ch, int64_t spatial) {
    return t.ptr() + (static_cast<int64_t>(i) * t.dims[1] + ch) * spatial;
  }
  static const T* channel_ptr(const Tensor<T>& t, int i, int ch, int64_t spatial) {
    return t.ptr() + (static_cast<int64_t>(i) * t.dims[1] + ch) * spatial;
  }

  double momentum_, epsilon_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  std::vector<int> eval_dims_;
  bool cached_train_ = false;
};

}  // namespace fnl
