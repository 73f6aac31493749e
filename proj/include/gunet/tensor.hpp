#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "gunet/errors.hpp"

namespace gunet {

// Shape of a rank-4 array: batch, channels, rows, cols.
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

// Dense rank-4 array in NCHW row-major layout.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 s) : shape_(checked(s)), data_(s.size(), T{}) {}
  Tensor4(Shape4 s, std::vector<T> values) : shape_(checked(s)), data_(std::move(values)) {
    if (data_.size() != s.size())
      throw ShapeError("tensor init: " + std::to_string(data_.size()) + " values for shape " +
                       s.str());
  }

  static Tensor4 full(Shape4 s, T v) {
    Tensor4 t(s);
    t.fill(v);
    return t;
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { data_.assign(data_.size(), v); }
  void zero() { fill(T{}); }

  bool operator==(const Tensor4&) const = default;

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static Shape4 checked(Shape4 s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw ShapeError("tensor dims must be >= 1, got " + s.str());
    return s;
  }

  Shape4 shape_;
  std::vector<T> data_;
};

namespace detail {
template <typename T>
void require_same_shape(const char* op, const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() +
                     " differ");
}
}  // namespace detail

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape("add", a, b);
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s) {
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  return out;
}

// Numerically stable logistic function; never forms exp of a positive argument.
template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  return out;
}

// Channel concatenation with a's channels first.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape4 sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: shapes " + sa.str() + " and " + sb.str() +
                     " differ outside the channel dim");
  Tensor4<T> out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = static_cast<std::size_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.n; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * (sa.c + sb.c) * plane;
    const T* pa = a.data() + static_cast<std::size_t>(n) * sa.c * plane;
    const T* pb = b.data() + static_cast<std::size_t>(n) * sb.c * plane;
    std::copy(pa, pa + sa.c * plane, dst);
    std::copy(pb, pb + sb.c * plane, dst + sa.c * plane);
  }
  return out;
}

// Channels [c0, c0+count) of x as a new tensor.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int c0, int count) {
  const Shape4 s = x.shape();
  if (c0 < 0 || count < 1 || c0 + count > s.c)
    throw ShapeError("slice_channels: [" + std::to_string(c0) + ", " + std::to_string(c0 + count) +
                     ") out of range for " + s.str());
  Tensor4<T> out(Shape4{s.n, count, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const T* src = x.data() + (static_cast<std::size_t>(n) * s.c + c0) * plane;
    std::copy(src, src + count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return out;
}

// Sequential left-to-right accumulation in double, so results are
// reproducible and precise enough for metric contracts.
template <typename T>
double sum(const Tensor4<T>& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]);
  return s;
}

template <typename T>
double mean(const Tensor4<T>& x) {
  return sum(x) / static_cast<double>(x.size());
}

// Mirrors an out-of-range coordinate back into [0, n) across the edges,
// bouncing as many times as needed (period 2n).
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace gunet
