#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "thinkstate/error.hpp"

namespace thinkstate {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Reference-counted handle to a dense row-major tensor. Copies of a handle
// alias the same storage; use clone() for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    s_->value.assign(shape_numel(shape), T(0));
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor scalar(T v) { return BasicTensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->value.size(); }
  std::size_t rows() const { return s_->shape.empty() ? 1 : s_->shape.front(); }
  std::size_t cols() const { return s_->shape.empty() ? 1 : s_->shape.back(); }

  std::span<T> data() { return s_->value; }
  std::span<const T> data() const { return s_->value; }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  std::span<T> row(std::size_t r) { return data().subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return data().subspan(r * cols(), cols());
  }

  T& operator[](std::size_t i) { return s_->value[i]; }
  const T& operator[](std::size_t i) const { return s_->value[i]; }
  T& at(std::size_t r, std::size_t c) { return s_->value[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return s_->value[r * cols() + c];
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    }
    return s_->value[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return s_->grad.size() == s_->value.size(); }
  std::span<const T> grad() const { return s_->grad; }
  // Handles share storage, so a const handle can still accumulate gradient.
  std::span<T> mutable_grad() const {
    s_->ensure_grad();
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  // Drops the gradient buffer so has_grad() is false until the next backward.
  void clear_grad() { s_->grad.clear(); }

  BasicTensor clone() const {
    BasicTensor out(s_->shape, s_->value, s_->requires_grad);
    return out;
  }

  // Reinterpret as a different shape with the same element count (copies data).
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), s_->value, false);
  }

  bool same_storage(const BasicTensor& other) const { return s_ == other.s_; }
  long use_count() const { return s_.use_count(); }

  TensorStorage<T>& storage() const { return *s_; }
  const std::shared_ptr<TensorStorage<T>>& storage_ptr() const { return s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;

template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DimensionError("max_abs_diff: sizes " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return max_abs_diff<T>(a.data(), b.data());
}

// Dense kernels. Every output element of the forward kernels accumulates its
// terms in a fixed order that does not depend on how many rows are processed
// in one call, so chunked and unchunked passes agree bitwise.
namespace kernels {

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    std::fill(c0, c0 + 4 * n, T(0));
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* br = b + p * n;
      const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = br[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* c0 = c + i * n;
    std::fill(c0, c0 + n, T(0));
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* br = b + p * n;
      const T x0 = a0[p];
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = br[j];
        c0[j] += x0 * bj;
      }
    }
  }
}

// da[m x k] += dc[m x n] * b[k x n]^T  (b given row-major as k x n)
template <typename T>
void gemm_grad_a(std::size_t m, std::size_t n, std::size_t k, const T* dc,
                 const T* b, T* da) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (std::size_t i = 0; i < m; ++i) {
    T* dar = da + i * k;
    const T* dcr = dc + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T g = dcr[j];
      if (g == T(0)) continue;
      const T* btr = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) dar[p] += g * btr[p];
    }
  }
}

// db[k x n] += a[m x k]^T * dc[m x n]
template <typename T>
void gemm_grad_b(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* dc, T* db) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* d0 = dc + (i + 0) * n;
    const T* d1 = dc + (i + 1) * n;
    const T* d2 = dc + (i + 2) * n;
    const T* d3 = dc + (i + 3) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a[(i + 0) * k + p], x1 = a[(i + 1) * k + p];
      const T x2 = a[(i + 2) * k + p], x3 = a[(i + 3) * k + p];
      T* dbr = db + p * n;
      for (std::size_t j = 0; j < n; ++j)
        dbr[j] += x0 * d0[j] + x1 * d1[j] + x2 * d2[j] + x3 * d3[j];
    }
  }
  for (; i < m; ++i) {
    const T* d0 = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a[i * k + p];
      if (x0 == T(0)) continue;
      T* dbr = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbr[j] += x0 * d0[j];
    }
  }
}

// Fixed-order dot product with eight partial sums.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  T tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

}  // namespace kernels
}  // namespace thinkstate
