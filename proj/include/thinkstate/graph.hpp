#pragma once

// Reverse-mode automatic differentiation over BasicTensor.
//
// A Graph records one backward closure per op whose output needs a gradient.
// Graphs are built per training step and discarded after backward(); a Graph
// constructed with record=false evaluates ops without recording anything.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "thinkstate/tensor.hpp"

namespace thinkstate {

// Precomputed rotary angles: cos/sin of position / theta^(2i/d_head).
template <typename T>
class RopeTable {
 public:
  RopeTable() = default;
  RopeTable(std::size_t max_positions, std::size_t d_head, double theta)
      : max_positions_(max_positions), half_(d_head / 2) {
    if (d_head % 2 != 0) {
      throw ConfigError("rotary embedding needs an even head size, got " +
                        std::to_string(d_head));
    }
    cos_.resize(max_positions * half_);
    sin_.resize(max_positions * half_);
    for (std::size_t p = 0; p < max_positions; ++p) {
      for (std::size_t i = 0; i < half_; ++i) {
        const double freq =
            1.0 / std::pow(theta, 2.0 * static_cast<double>(i) /
                                      static_cast<double>(d_head));
        const double angle = static_cast<double>(p) * freq;
        cos_[p * half_ + i] = static_cast<T>(std::cos(angle));
        sin_[p * half_ + i] = static_cast<T>(std::sin(angle));
      }
    }
  }

  std::size_t max_positions() const { return max_positions_; }
  std::size_t half() const { return half_; }
  const T* cos_row(std::size_t p) const { return cos_.data() + p * half_; }
  const T* sin_row(std::size_t p) const { return sin_.data() + p * half_; }

 private:
  std::size_t max_positions_ = 0;
  std::size_t half_ = 0;
  std::vector<T> cos_, sin_;
};

template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }
  const char* node_op(std::size_t i) const { return nodes_[i].op; }

  // [m x k] * [k x n] -> [m x n]
  TensorT matmul(const TensorT& a, const TensorT& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.rows()) {
      throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                           " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const bool tracked = track({&a, &b});
    TensorT out({m, n}, tracked);
    kernels::gemm(m, n, k, a.data().data(), b.data().data(), out.data().data());
    if (tracked) {
      push("matmul", [a, b, out, m, n, k]() mutable {
        if (!out.has_grad()) return;
        const T* dc = out.grad().data();
        if (a.requires_grad())
          kernels::gemm_grad_a(m, n, k, dc, b.data().data(),
                               a.mutable_grad().data());
        if (b.requires_grad())
          kernels::gemm_grad_b(m, n, k, a.data().data(), dc,
                               b.mutable_grad().data());
      });
    }
    return out;
  }

  TensorT add(const TensorT& a, const TensorT& b) {
    same_shape("add", a, b);
    const bool tracked = track({&a, &b});
    TensorT out(a.shape(), tracked);
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (tracked) {
      push("add", [a, b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        for (const TensorT* t : {&a, &b}) {
          if (!t->requires_grad()) continue;
          auto d = t->mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
      });
    }
    return out;
  }

  TensorT mul(const TensorT& a, const TensorT& b) {
    same_shape("mul", a, b);
    const bool tracked = track({&a, &b});
    TensorT out(a.shape(), tracked);
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    if (tracked) {
      push("mul", [a, b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (a.requires_grad()) {
          auto d = a.mutable_grad();
          auto y = b.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
          auto d = b.mutable_grad();
          auto x = a.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
        }
      });
    }
    return out;
  }

  TensorT scale(const TensorT& a, T s) {
    const bool tracked = track({&a});
    TensorT out(a.shape(), tracked);
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
    if (tracked) {
      push("scale", [a, out, s]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
      });
    }
    return out;
  }

  TensorT silu(const TensorT& a) {
    const bool tracked = track({&a});
    TensorT out(a.shape(), tracked);
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] / (T(1) + std::exp(-x[i]));
    if (tracked) {
      push("silu", [a, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto x = a.data();
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T sg = T(1) / (T(1) + std::exp(-x[i]));
          d[i] += g[i] * sg * (T(1) + x[i] * (T(1) - sg));
        }
      });
    }
    return out;
  }

  // Row-wise x / sqrt(mean(x^2) + eps) * gain over the last axis.
  TensorT rms_norm(const TensorT& x, const TensorT& gain, T eps) {
    if (!(eps > T(0))) throw ContractError("rms_norm: eps must be positive");
    const std::size_t d = x.cols();
    if (gain.numel() != d) {
      throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) +
                           " does not match rows of " + shape_str(x.shape()));
    }
    const std::size_t n = x.numel() / d;
    const bool tracked = track({&x, &gain});
    TensorT out(x.shape(), tracked);
    std::vector<T> inv(n);
    const T* g = gain.data().data();
    for (std::size_t r = 0; r < n; ++r) {
      const T* xr = x.data().data() + r * d;
      T* yr = out.data().data() + r * d;
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
      const T ir = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
      inv[r] = ir;
      for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] * ir * g[j];
    }
    if (tracked) {
      push("rms_norm", [x, gain, out, inv = std::move(inv), n, d]() mutable {
        if (!out.has_grad()) return;
        const T* dy = out.grad().data();
        const T* g = gain.data().data();
        T* dx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
        T* dg = gain.requires_grad() ? gain.mutable_grad().data() : nullptr;
        for (std::size_t r = 0; r < n; ++r) {
          const T* xr = x.data().data() + r * d;
          const T* dyr = dy + r * d;
          const T ir = inv[r];
          if (dg)
            for (std::size_t j = 0; j < d; ++j) dg[j] += dyr[j] * xr[j] * ir;
          if (dx) {
            T s = 0;
            for (std::size_t j = 0; j < d; ++j) s += dyr[j] * g[j] * xr[j];
            const T coef = ir * ir * ir * s / static_cast<T>(d);
            T* dxr = dx + r * d;
            for (std::size_t j = 0; j < d; ++j)
              dxr[j] += ir * dyr[j] * g[j] - xr[j] * coef;
          }
        }
      });
    }
    return out;
  }

  // Rotates adjacent feature pairs of every head. x is [len x (heads*d_head)];
  // row t is rotated by positions[t].
  TensorT rope(const TensorT& x, std::span<const std::size_t> positions,
               std::size_t n_heads, const RopeTable<T>& table) {
    const std::size_t len = x.rows();
    const std::size_t d = x.cols();
    if (positions.size() != len) {
      throw DimensionError("rope: " + std::to_string(positions.size()) +
                           " positions for " + std::to_string(len) + " rows");
    }
    if (n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0 ||
        (d / n_heads) / 2 != table.half()) {
      throw ConfigError("rope: head layout does not match rotary table");
    }
    for (auto p : positions) {
      if (p >= table.max_positions())
        throw CapacityError("rope: position " + std::to_string(p) +
                            " exceeds table size " +
                            std::to_string(table.max_positions()));
    }
    const bool tracked = track({&x});
    TensorT out(x.shape(), tracked);
    rotate(x.data().data(), out.data().data(), positions, n_heads, d, table, false);
    if (tracked) {
      std::vector<std::size_t> pos(positions.begin(), positions.end());
      push("rope", [x, out, pos = std::move(pos), n_heads, d, &table]() mutable {
        if (!out.has_grad()) return;
        std::vector<T> tmp(out.numel());
        rotate(out.grad().data(), tmp.data(), pos, n_heads, d, table, true);
        auto dx = x.mutable_grad();
        for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
      });
    }
    return out;
  }

  // Causal multi-head attention. q is [n x d]; k, v are [m x d] holding the
  // full key history. Query row i sits at key index offset + i and attends to
  // keys 0..offset+i.
  TensorT attention(const TensorT& q, const TensorT& k, const TensorT& v,
                    std::size_t n_heads, std::size_t offset) {
    const std::size_t n = q.rows(), d = q.cols(), m = k.rows();
    if (k.cols() != d || v.cols() != d || v.rows() != m) {
      throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " +
                           shape_str(k.shape()) + ", v " + shape_str(v.shape()));
    }
    if (offset + n > m) {
      throw DimensionError("attention: offset " + std::to_string(offset) +
                           " + " + std::to_string(n) + " queries exceeds " +
                           std::to_string(m) + " keys");
    }
    const std::size_t dh = d / n_heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const bool tracked = track({&q, &k, &v});
    TensorT out({n, d}, tracked);
    // probs laid out [head][query][key], each row sized m
    std::vector<T> probs(tracked ? n_heads * n * m : m);
    const T* qd = q.data().data();
    const T* kd = k.data().data();
    const T* vd = v.data().data();
    T* od = out.data().data();
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lim = offset + i + 1;
        T* p = tracked ? probs.data() + (h * n + i) * m : probs.data();
        const T* qi = qd + i * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lim; ++j) {
          p[j] = kernels::dot(qi, kd + j * d + h * dh, dh) * sc;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < lim; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        const T iz = T(1) / z;
        T* oi = od + i * d + h * dh;
        for (std::size_t j = 0; j < lim; ++j) {
          p[j] *= iz;
          kernels::axpy(p[j], vd + j * d + h * dh, oi, dh);
        }
        for (std::size_t j = lim; j < m && tracked; ++j) p[j] = 0;
      }
    }
    if (tracked) {
      push("attention", [q, k, v, out, probs = std::move(probs), n, m, d, dh,
                         n_heads, offset, sc]() mutable {
        if (!out.has_grad()) return;
        const T* dout = out.grad().data();
        const T* qd = q.data().data();
        const T* kd = k.data().data();
        const T* vd = v.data().data();
        T* dq = q.requires_grad() ? q.mutable_grad().data() : nullptr;
        T* dk = k.requires_grad() ? k.mutable_grad().data() : nullptr;
        T* dv = v.requires_grad() ? v.mutable_grad().data() : nullptr;
        std::vector<T> ds(m);
        for (std::size_t h = 0; h < n_heads; ++h) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t lim = offset + i + 1;
            const T* p = probs.data() + (h * n + i) * m;
            const T* go = dout + i * d + h * dh;
            T dot_pg = 0;
            for (std::size_t j = 0; j < lim; ++j) {
              ds[j] = kernels::dot(go, vd + j * d + h * dh, dh);
              dot_pg += p[j] * ds[j];
            }
            for (std::size_t j = 0; j < lim; ++j) {
              if (dv) kernels::axpy(p[j], go, dv + j * d + h * dh, dh);
              const T s = p[j] * (ds[j] - dot_pg) * sc;
              if (dq) kernels::axpy(s, kd + j * d + h * dh, dq + i * d + h * dh, dh);
              if (dk) kernels::axpy(s, qd + i * d + h * dh, dk + j * d + h * dh, dh);
            }
          }
        }
      });
    }
    return out;
  }

  // Gathers rows of table [V x d].
  TensorT embedding(const TensorT& table, std::span<const int> ids) {
    const std::size_t vocab = table.rows(), d = table.cols();
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab)
        throw VocabularyError("embedding: token id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    const bool tracked = track({&table});
    TensorT out({ids.size(), d}, tracked);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto src = table.row(static_cast<std::size_t>(ids[r]));
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    if (tracked) {
      std::vector<int> idv(ids.begin(), ids.end());
      push("embedding", [table, out, idv = std::move(idv), d]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto dt = table.mutable_grad();
        for (std::size_t r = 0; r < idv.size(); ++r)
          for (std::size_t j = 0; j < d; ++j)
            dt[static_cast<std::size_t>(idv[r]) * d + j] += g[r * d + j];
      });
    }
    return out;
  }

  TensorT concat_rows(const std::vector<TensorT>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t d = parts.front().cols();
    std::size_t rows = 0;
    bool tracked = false;
    for (const auto& p : parts) {
      if (p.cols() != d)
        throw DimensionError("concat_rows: column mismatch " +
                             shape_str(parts.front().shape()) + " vs " +
                             shape_str(p.shape()));
      rows += p.rows();
      tracked = tracked || (record_ && p.requires_grad());
    }
    TensorT out({rows, d}, tracked);
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
      off += p.numel();
    }
    if (tracked) {
      push("concat_rows", [parts, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        std::size_t off = 0;
        for (auto& p : parts) {
          if (p.requires_grad()) {
            auto dp = p.mutable_grad();
            for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[off + i];
          }
          off += p.numel();
        }
      });
    }
    return out;
  }

  TensorT slice_rows(const TensorT& x, std::size_t begin, std::size_t end) {
    if (begin > end || end > x.rows()) {
      throw RangeError("slice_rows: [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") out of " + shape_str(x.shape()));
    }
    const std::size_t d = x.cols();
    const bool tracked = track({&x});
    TensorT out({end - begin, d}, tracked);
    std::copy(x.data().begin() + begin * d, x.data().begin() + end * d,
              out.data().begin());
    if (tracked) {
      push("slice_rows", [x, out, begin, d]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto dx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dx[begin * d + i] += g[i];
      });
    }
    return out;
  }

  TensorT softmax_rows(const TensorT& x) {
    const std::size_t d = x.cols(), n = x.numel() / d;
    const bool tracked = track({&x});
    TensorT out(x.shape(), tracked);
    for (std::size_t r = 0; r < n; ++r) softmax_row(x.data().data() + r * d,
                                                    out.data().data() + r * d, d);
    if (tracked) {
      push("softmax_rows", [x, out, n, d]() mutable {
        if (!out.has_grad()) return;
        const T* g = out.grad().data();
        const T* y = out.data().data();
        auto dx = x.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          T s = 0;
          for (std::size_t j = 0; j < d; ++j) s += y[r * d + j] * g[r * d + j];
          for (std::size_t j = 0; j < d; ++j)
            dx[r * d + j] += y[r * d + j] * (g[r * d + j] - s);
        }
      });
    }
    return out;
  }

  // Mean over unmasked rows of -log softmax(logits)[target].
  TensorT cross_entropy(const TensorT& logits, std::span<const int> targets,
                        const std::vector<bool>& mask) {
    const std::size_t n = logits.rows(), vocab = logits.cols();
    if (targets.size() != n || mask.size() != n) {
      throw DimensionError("cross_entropy: " + std::to_string(n) +
                           " rows, " + std::to_string(targets.size()) +
                           " targets, " + std::to_string(mask.size()) +
                           " mask entries");
    }
    std::size_t count = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (!mask[r]) continue;
      if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
        throw RangeError("cross_entropy: target " + std::to_string(targets[r]) +
                         " outside [0, " + std::to_string(vocab) + ")");
      ++count;
    }
    if (count == 0) throw ContractError("cross_entropy: every position is masked");
    const bool tracked = track({&logits});
    TensorT out({1}, tracked);
    std::vector<T> probs(tracked ? n * vocab : vocab);
    T total = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (!mask[r]) continue;
      T* p = tracked ? probs.data() + r * vocab : probs.data();
      const T* lr = logits.data().data() + r * vocab;
      T mx = *std::max_element(lr, lr + vocab);
      T z = 0;
      for (std::size_t j = 0; j < vocab; ++j) z += std::exp(lr[j] - mx);
      total += (std::log(z) + mx) - lr[targets[r]];
      const T iz = T(1) / z;
      for (std::size_t j = 0; j < vocab; ++j) p[j] = std::exp(lr[j] - mx) * iz;
    }
    out[0] = total / static_cast<T>(count);
    if (tracked) {
      std::vector<int> tv(targets.begin(), targets.end());
      push("cross_entropy", [logits, out, probs = std::move(probs), tv = std::move(tv),
                             mask, n, vocab, count]() mutable {
        if (!out.has_grad()) return;
        const T g = out.grad()[0] / static_cast<T>(count);
        auto dl = logits.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          if (!mask[r]) continue;
          const T* p = probs.data() + r * vocab;
          for (std::size_t j = 0; j < vocab; ++j) {
            const T onehot = static_cast<int>(j) == tv[r] ? T(1) : T(0);
            dl[r * vocab + j] += g * (p[j] - onehot);
          }
        }
      });
    }
    return out;
  }

  TensorT sum(const TensorT& x) {
    const bool tracked = track({&x});
    TensorT out({1}, tracked);
    T s = 0;
    for (T v : x.data()) s += v;
    out[0] = s;
    if (tracked) {
      push("sum", [x, out]() mutable {
        if (!out.has_grad()) return;
        const T g = out.grad()[0];
        for (auto& d : x.mutable_grad()) d += g;
      });
    }
    return out;
  }

  TensorT stop_gradient(const TensorT& x) { return TensorT(x.shape(), x.values()); }

  // Populates grads of every tensor reachable from the scalar loss, then
  // discards the recorded graph.
  void backward(const TensorT& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got " +
                          shape_str(loss.shape()));
    }
    if (!record_) throw ContractError("backward: graph was built without recording");
    TensorT l = loss;
    if (!l.requires_grad()) {
      nodes_.clear();
      return;
    }
    l.mutable_grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    nodes_.clear();
  }

  static void softmax_row(const T* x, T* y, std::size_t d) {
    T mx = *std::max_element(x, x + d);
    T z = 0;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const T iz = T(1) / z;
    for (std::size_t j = 0; j < d; ++j) y[j] *= iz;
  }

 private:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  bool track(std::initializer_list<const TensorT*> inputs) const {
    if (!record_) return false;
    for (const TensorT* t : inputs)
      if (t->requires_grad()) return true;
    return false;
  }

  void push(const char* op, std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  static void same_shape(const char* op, const TensorT& a, const TensorT& b) {
    if (a.shape() != b.shape()) {
      throw DimensionError(std::string(op) + ": shape mismatch " +
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }

  static void rotate(const T* src, T* dst, std::span<const std::size_t> positions,
                     std::size_t n_heads, std::size_t d, const RopeTable<T>& table,
                     bool inverse) {
    const std::size_t dh = d / n_heads, half = dh / 2;
    for (std::size_t t = 0; t < positions.size(); ++t) {
      const T* c = table.cos_row(positions[t]);
      const T* s = table.sin_row(positions[t]);
      for (std::size_t h = 0; h < n_heads; ++h) {
        const T* x = src + t * d + h * dh;
        T* y = dst + t * d + h * dh;
        for (std::size_t i = 0; i < half; ++i) {
          const T sn = inverse ? -s[i] : s[i];
          const T x0 = x[2 * i], x1 = x[2 * i + 1];
          y[2 * i] = x0 * c[i] - x1 * sn;
          y[2 * i + 1] = x0 * sn + x1 * c[i];
        }
      }
    }
  }

  bool record_;
  std::vector<Node> nodes_;
};

// Applies rotary position encoding to x laid out [heads x len x d_head].
template <typename T>
BasicTensor<T> rotary_apply(const BasicTensor<T>& x, std::span<const std::size_t> positions,
                            double theta) {
  if (x.dim() != 3) throw DimensionError("rotary_apply: expected [heads x len x d_head]");
  const std::size_t heads = x.shape()[0], len = x.shape()[1], dh = x.shape()[2];
  if (dh % 2 != 0)
    throw ConfigError("rotary_apply: head size " + std::to_string(dh) + " is odd");
  if (positions.size() != len)
    throw DimensionError("rotary_apply: positions length does not match sequence");
  std::size_t maxp = 0;
  for (auto p : positions) maxp = std::max(maxp, p);
  RopeTable<T> table(maxp + 1, dh, theta);
  // regroup into [len x heads*dh], rotate, then back
  BasicTensor<T> flat({len, heads * dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < dh; ++j)
        flat.at(t, h * dh + j) = x[(h * len + t) * dh + j];
  Graph<T> g(false);
  auto rot = g.rope(flat, positions, heads, table);
  BasicTensor<T> out(x.shape());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < dh; ++j)
        out[(h * len + t) * dh + j] = rot.at(t, h * dh + j);
  return out;
}

}  // namespace thinkstate
