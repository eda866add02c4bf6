#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fnl/error.hpp"

namespace fnl {

/// Dense N-dimensional array of scalars, row-major, contiguous.
/// The universal value type for images, activations, parameters and gradients.
/// Convention: feature maps are [channels, height, width], with an optional
/// leading batch dimension where a function documents it.
template <typename T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> d) : dims(std::move(d)), data(checked_count(dims), T(0)) {}

  Tensor(std::vector<int> d, std::vector<T> values) : dims(std::move(d)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != checked_count(dims))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match dims " + dims_str(dims));
  }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }

  static Tensor full(std::vector<int> d, T value) {
    Tensor t(std::move(d));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(dims.size()); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  bool same_dims(const Tensor& other) const { return dims == other.dims; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void fill(T value) { std::fill(data.begin(), data.end(), value); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<size_t>(i)]; }

  T& at(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }

  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }

  T& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }

  /// Reshape in place; the element count must be preserved.
  void reshape(std::vector<int> d) {
    if (checked_count(d) != numel())
      throw ShapeError("reshape to " + dims_str(d) + " changes element count");
    dims = std::move(d);
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static std::string dims_str(const std::vector<int>& d) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
    os << "]";
    return os.str();
  }

  static int64_t checked_count(const std::vector<int>& d) {
    int64_t n = 1;
    for (int v : d) {
      if (v <= 0) throw ShapeError("non-positive dimension in " + dims_str(d));
      n *= v;
    }
    return n;
  }
};

/// Copy one slice along the leading dimension: x[i, ...].
template <typename T>
Tensor<T> slice_outer(const Tensor<T>& x, int i) {
  if (x.rank() < 2) throw ShapeError("slice_outer needs rank >= 2, got " + Tensor<T>::dims_str(x.dims));
  if (i < 0 || i >= x.dims[0]) throw ShapeError("slice index out of range");
  std::vector<int> d(x.dims.begin() + 1, x.dims.end());
  Tensor<T> out(d);
  const int64_t n = out.numel();
  std::memcpy(out.ptr(), x.ptr() + static_cast<int64_t>(i) * n, sizeof(T) * n);
  return out;
}

/// Write v into x[i, ...].
template <typename T>
void set_outer(Tensor<T>& x, int i, const Tensor<T>& v) {
  std::vector<int> d(x.dims.begin() + 1, x.dims.end());
  if (d != v.dims) throw ShapeError("set_outer dims mismatch");
  std::memcpy(x.ptr() + static_cast<int64_t>(i) * v.numel(), v.ptr(), sizeof(T) * v.numel());
}

/// Stack equally shaped tensors along a new leading dimension.
template <typename T>
Tensor<T> stack_outer(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ArgumentError("stack_outer: empty list");
  std::vector<int> d;
  d.push_back(static_cast<int>(xs.size()));
  d.insert(d.end(), xs[0].dims.begin(), xs[0].dims.end());
  Tensor<T> out(d);
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].dims != xs[0].dims) throw ShapeError("stack_outer: ragged inputs");
    std::memcpy(out.ptr() + static_cast<int64_t>(i) * xs[i].numel(), xs[i].ptr(),
                sizeof(T) * xs[i].numel());
  }
  return out;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.dims == b.dims &&
         std::memcmp(a.ptr(), b.ptr(), sizeof(T) * a.numel()) == 0;
}

/// Deterministic random source. The engine is mt19937_64 (bit-exact by the
/// standard) and every transform below is hand-rolled, so the same seed gives
/// the same scalar stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo reduction; bias is negligible for the
  /// small n used here and keeps the stream layout fixed.
  uint64_t below(uint64_t n) { return engine_() % n; }

  bool coin() { return (engine_() & 1u) != 0; }

  /// Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
  }

  template <typename T>
  void fill_normal(Tensor<T>& t) {
    for (auto& v : t.data) v = static_cast<T>(normal());
  }

  void shuffle(std::vector<int>& idx) {
    for (size_t i = idx.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(idx[i - 1], idx[j]);
    }
  }

  template <typename S>
  void shuffle_items(std::vector<S>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fnl
