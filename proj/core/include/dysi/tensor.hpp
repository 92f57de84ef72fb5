// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over flat row-major buffers.
//
// Contracts that everything above this layer relies on:
//  - every reduction runs in fixed ascending index order, so results are
//    bit-reproducible for a given build and seed;
//  - scalar results of loss reductions carry an f64 shadow value so loss
//    numbers can be read at full precision without changing stored f32 math;
//  - graph construction is single-threaded per graph; forward under
//    NoGradGuard records nothing and is safe to run concurrently over
//    read-only parameters.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "dysi/errors.hpp"
#include "dysi/rng.hpp"

namespace dysi {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("dimension sizes must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::int64_t next_node_id() {
  static std::atomic<std::int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class T>
struct NodeT {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::int64_t id = -1;
  std::vector<std::shared_ptr<NodeT<T>>> parents;
  std::function<void(NodeT<T>&)> backprop;

  double shadow = 0.0;   // exact value for scalar reductions
  bool has_shadow = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  void zero_grad() { grad.assign(grad.size(), T(0)); }
};

}  // namespace detail

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
class TensorT {
 public:
  using Node = detail::NodeT<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape) {
    return from_values(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), T(0)));
  }

  static TensorT constant(Shape shape, T value) {
    return from_values(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), value));
  }

  static TensorT scalar_value(T value) { return from_values({1}, std::vector<T>{value}); }

  static TensorT from_values(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->id = detail::next_node_id();
    return t;
  }

  static TensorT parameter(Shape shape, std::vector<T> values) {
    TensorT t = from_values(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->values.size()); }

  const std::vector<T>& values() const { return node_->values; }
  // In-place mutation is only legal on leaf tensors between graph builds
  // (parameter updates, checkpoint load).
  std::vector<T>& values_mut() { return node_->values; }

  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient; run backward first");
    return node_->grad;
  }
  std::vector<T>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  std::int64_t node_id() const { return node_->id; }

  T item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor");
    return node_->values[0];
  }

  // Scalar reductions keep an f64 shadow; fall back to the stored value.
  double item_f64() const {
    if (size() != 1) throw ShapeError("item_f64() requires a single-element tensor");
    return node_->has_shadow ? node_->shadow : static_cast<double>(node_->values[0]);
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

// Links `out` to its parents and registers the backward closure, but only
// when grad recording is on and some parent needs gradients.
template <class T, class F>
void attach(TensorT<T>& out, std::initializer_list<TensorT<T>> parents, F&& backprop) {
  if (!grad_mode_flag()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p.node()->requires_grad;
  if (!any) return;
  auto node = out.node();
  node->requires_grad = true;
  for (const auto& p : parents) node->parents.push_back(p.node());
  node->backprop = std::forward<F>(backprop);
}

// ---- serial matmul kernels; C is accumulated into, never overwritten ----
// Every C element is a dot product taken in ascending k, independent of any
// outer-loop parallelization, which keeps results bit-stable.

template <class T>
void mm_nn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void mm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  // C[m,n] += A[m,k] * B[n,k]^T
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

template <class T>
void mm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  // C[k,n] += A[m,k]^T * B[m,n]
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      T* crow = c + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcasting ops
// ---------------------------------------------------------------------------

// add: b must have the same shape as a, or a shape that is a suffix of a's
// (bias rows, shared attention masks); the suffix is broadcast over the
// leading dimensions.
template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    throw ShapeError("add: rhs rank exceeds lhs rank");
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
      throw ShapeError("add: shape " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  }
  const std::size_t bn = b.values().size();
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i % bn];
  TensorT<T> result = TensorT<T>::from_values(sa, std::move(out));
  if (result.size() == 1 && a.node()->has_shadow && b.node()->has_shadow) {
    result.node()->shadow = a.node()->shadow + b.node()->shadow;
    result.node()->has_shadow = true;
  }
  detail::attach(result, {a, b}, [bn](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % bn] += self.grad[i];
    }
  });
  return result;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  detail::attach(result, {a, b}, [](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
  return result;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= factor;
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  if (result.size() == 1 && a.node()->has_shadow) {
    result.node()->shadow = static_cast<double>(factor) * a.node()->shadow;
    result.node()->has_shadow = true;
  }
  detail::attach(result, {a}, [factor](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += factor * self.grad[i];
  });
  return result;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& a) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubicCoeff = 0.044715;
  std::vector<T> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.values()[i]);
    const double t = std::tanh(kSqrt2OverPi * (x + kCubicCoeff * x * x * x));
    out[i] = static_cast<T>(0.5 * x * (1.0 + t));
  }
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  detail::attach(result, {a}, [](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = static_cast<double>(pa.values[i]);
      const double inner = kSqrt2OverPi * (x + kCubicCoeff * x * x * x);
      const double t = std::tanh(inner);
      const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kCubicCoeff * x * x);
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
      pa.grad[i] += self.grad[i] * static_cast<T>(d);
    }
  });
  return result;
}

// Inverted dropout. Draws one uniform per element in ascending index order.
template <class T>
TensorT<T> dropout(const TensorT<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(a.values().size());
  for (auto& m : mask) m = rng.uniform_double() < rate ? T(0) : keep_scale;
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  detail::attach(result, {a}, [mask = std::move(mask)](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * mask[i];
  });
  return result;
}

// Identity forward, zero backward.
template <class T>
TensorT<T> stop_gradient(const TensorT<T>& a) {
  TensorT<T> result = TensorT<T>::from_values(a.shape(), a.values());
  if (a.node()->has_shadow) {
    result.node()->shadow = a.node()->shadow;
    result.node()->has_shadow = true;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: element count mismatch for " + shape_str(shape));
  TensorT<T> result = TensorT<T>::from_values(std::move(shape), a.values());
  detail::attach(result, {a}, [](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
  return result;
}

template <class T>
TensorT<T> permute(const TensorT<T>& a, const std::vector<int>& perm) {
  const Shape& in_shape = a.shape();
  const int r = static_cast<int>(in_shape.size());
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(p)];
  }
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * in_shape[static_cast<std::size_t>(i + 1)];
  // map[flat_out] = flat_in
  const std::int64_t n = a.size();
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t flat_out = 0; flat_out < n; ++flat_out) {
    std::int64_t flat_in = 0;
    for (int i = 0; i < r; ++i)
      flat_in += idx[static_cast<std::size_t>(i)] *
                 in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    map[static_cast<std::size_t>(flat_out)] = flat_in;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = a.values()[static_cast<std::size_t>(map[static_cast<std::size_t>(i)])];
  TensorT<T> result = TensorT<T>::from_values(std::move(out_shape), std::move(out));
  detail::attach(result, {a}, [map = std::move(map)](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[map[i]] += self.grad[i];
  });
  return result;
}

// First `rows` rows of a 2-D tensor (positional embedding lookup).
template <class T>
TensorT<T> slice_rows(const TensorT<T>& a, int rows) {
  if (a.rank() != 2) throw ShapeError("slice_rows: expected rank-2 tensor");
  if (rows < 1 || rows > a.dim(0)) throw ShapeError("slice_rows: row count out of range");
  const int cols = a.dim(1);
  std::vector<T> out(a.values().begin(),
                     a.values().begin() + static_cast<std::size_t>(rows) * cols);
  TensorT<T> result = TensorT<T>::from_values({rows, cols}, std::move(out));
  detail::attach(result, {a}, [](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
  return result;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: expected rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
  detail::mm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  TensorT<T> result = TensorT<T>::from_values({m, n}, std::move(out));
  detail::attach(result, {a, b}, [m, k, n](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      detail::mm_nt_acc(self.grad.data(), pb.values.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::mm_tn_acc(pa.values.data(), self.grad.data(), pb.grad.data(), m, k, n);
    }
  });
  return result;
}

// Grouped matmul over the leading dimension: [G,M,K] x [G,K,N] -> [G,M,N],
// or [G,M,K] x [G,N,K] with transpose_b.
template <class T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3) throw ShapeError("bmm: expected rank-3 tensors");
  if (a.dim(0) != b.dim(0)) throw ShapeError("bmm: group counts differ");
  const int g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int bk = transpose_b ? b.dim(2) : b.dim(1);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  if (bk != k)
    throw ShapeError("bmm: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(g) * m * n, T(0));
  const std::size_t a_step = static_cast<std::size_t>(m) * k;
  const std::size_t b_step = static_cast<std::size_t>(b.dim(1)) * b.dim(2);
  const std::size_t c_step = static_cast<std::size_t>(m) * n;
  for (int gi = 0; gi < g; ++gi) {
    const T* ap = a.values().data() + gi * a_step;
    const T* bp = b.values().data() + gi * b_step;
    T* cp = out.data() + gi * c_step;
    if (transpose_b)
      detail::mm_nt_acc(ap, bp, cp, m, k, n);
    else
      detail::mm_nn_acc(ap, bp, cp, m, k, n);
  }
  TensorT<T> result = TensorT<T>::from_values({g, m, n}, std::move(out));
  detail::attach(result, {a, b},
                 [g, m, k, n, transpose_b, a_step, b_step, c_step](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int gi = 0; gi < g; ++gi) {
      const T* dc = self.grad.data() + gi * c_step;
      const T* av = pa.values.data() + gi * a_step;
      const T* bv = pb.values.data() + gi * b_step;
      if (pa.requires_grad) {
        pa.ensure_grad();
        T* da = pa.grad.data() + gi * a_step;
        if (transpose_b)
          detail::mm_nn_acc(dc, bv, da, m, n, k);  // dA = dC * B
        else
          detail::mm_nt_acc(dc, bv, da, m, n, k);  // dA = dC * B^T
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        T* db = pb.grad.data() + gi * b_step;
        if (transpose_b)
          detail::mm_tn_acc(dc, av, db, m, n, k);  // dB = dC^T * A
        else
          detail::mm_tn_acc(av, dc, db, m, k, n);  // dB = A^T * dC
      }
    }
  });
  return result;
}

// Row gather from an embedding table: [V,D] + N ids -> [N,D].
template <class T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const std::vector<std::int32_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank-2");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  std::vector<T> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const std::int32_t id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v)
      throw IndexError("token id " + std::to_string(id) + " out of vocabulary range " +
                       std::to_string(v));
    const T* src = table.values().data() + static_cast<std::size_t>(id) * d;
    T* dst = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  TensorT<T> result = TensorT<T>::from_values({n, d}, std::move(out));
  detail::attach(result, {table}, [ids, d](detail::NodeT<T>& self) {
    auto& pt = *self.parents[0];
    pt.ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* dst = pt.grad.data() + static_cast<std::size_t>(ids[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void softmax_rows_forward(const T* in, T* out, std::int64_t rows, int cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = in + r * cols;
    T* y = out + r * cols;
    T max_v = x[0];
    for (int j = 1; j < cols; ++j) max_v = x[j] > max_v ? x[j] : max_v;
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(static_cast<double>(x[j] - max_v));
      y[j] = static_cast<T>(e);
      denom += e;
    }
    const T inv = static_cast<T>(1.0 / denom);
    for (int j = 0; j < cols; ++j) y[j] *= inv;
  }
}

}  // namespace detail

// Softmax over the last dimension, max-subtracted.
template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
  if (a.rank() < 1) throw ShapeError("softmax: tensor must have rank >= 1");
  const int cols = a.dim(a.rank() - 1);
  const std::int64_t rows = a.size() / cols;
  std::vector<T> out(a.values().size());
  detail::softmax_rows_forward(a.values().data(), out.data(), rows, cols);
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  detail::attach(result, {a}, [rows, cols](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.values.data() + r * cols;
      const T* dy = self.grad.data() + r * cols;
      T* dx = pa.grad.data() + r * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (int j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - static_cast<T>(dot));
    }
  });
  return result;
}

// Softmax along an arbitrary axis (the model only ever needs the last axis;
// general axes are routed through a permute pair).
template <class T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
  const int r = a.rank();
  if (axis < 0 || axis >= r)
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(r));
  if (axis == r - 1) return softmax_lastdim(a);
  std::vector<int> perm(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::swap(perm[static_cast<std::size_t>(axis)], perm[static_cast<std::size_t>(r - 1)]);
  return permute(softmax_lastdim(permute(a, perm)), perm);
}

// Numerically direct log-softmax over the last dimension (never log(softmax)).
template <class T>
TensorT<T> log_softmax_lastdim(const TensorT<T>& a) {
  if (a.rank() < 1) throw ShapeError("log_softmax: tensor must have rank >= 1");
  const int cols = a.dim(a.rank() - 1);
  const std::int64_t rows = a.size() / cols;
  std::vector<T> out(a.values().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * cols;
    T* y = out.data() + r * cols;
    T max_v = x[0];
    for (int j = 1; j < cols; ++j) max_v = x[j] > max_v ? x[j] : max_v;
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) denom += std::exp(static_cast<double>(x[j] - max_v));
    const T log_denom = static_cast<T>(std::log(denom));
    for (int j = 0; j < cols; ++j) y[j] = x[j] - max_v - log_denom;
  }
  TensorT<T> result = TensorT<T>::from_values(a.shape(), std::move(out));
  detail::attach(result, {a}, [rows, cols](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.values.data() + r * cols;
      const T* dy = self.grad.data() + r * cols;
      T* dx = pa.grad.data() + r * cols;
      double total = 0.0;
      for (int j = 0; j < cols; ++j) total += static_cast<double>(dy[j]);
      for (int j = 0; j < cols; ++j)
        dx[j] += dy[j] - static_cast<T>(std::exp(static_cast<double>(y[j])) * total);
    }
  });
  return result;
}

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: tensor must have rank >= 1");
  const int cols = x.dim(x.rank() - 1);
  if (gain.size() != cols || bias.size() != cols)
    throw ShapeError("layer_norm: gain/bias must match the last dimension");
  const std::int64_t rows = x.size() / cols;
  std::vector<T> out(x.values().size());
  std::vector<T> inv_sigma(static_cast<std::size_t>(rows));
  std::vector<T> normalized(x.values().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xv = x.values().data() + r * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += static_cast<double>(xv[j]);
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = static_cast<double>(xv[j]) - mean;
      var += d * d;
    }
    var /= cols;
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_sigma[static_cast<std::size_t>(r)] = inv;
    T* nrm = normalized.data() + r * cols;
    T* y = out.data() + r * cols;
    for (int j = 0; j < cols; ++j) {
      nrm[j] = static_cast<T>((static_cast<double>(xv[j]) - mean)) * inv;
      y[j] = nrm[j] * gain.values()[static_cast<std::size_t>(j)] +
             bias.values()[static_cast<std::size_t>(j)];
    }
  }
  TensorT<T> result = TensorT<T>::from_values(x.shape(), std::move(out));
  detail::attach(result, {x, gain, bias},
                 [rows, cols, inv_sigma = std::move(inv_sigma),
                  normalized = std::move(normalized)](detail::NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    if (px.requires_grad) px.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data() + r * cols;
      const T* nrm = normalized.data() + r * cols;
      if (pg.requires_grad)
        for (int j = 0; j < cols; ++j) pg.grad[static_cast<std::size_t>(j)] += dy[j] * nrm[j];
      if (pb.requires_grad)
        for (int j = 0; j < cols; ++j) pb.grad[static_cast<std::size_t>(j)] += dy[j];
      if (px.requires_grad) {
        double mean_dn = 0.0, mean_dn_nrm = 0.0;
        for (int j = 0; j < cols; ++j) {
          const double dn = static_cast<double>(dy[j]) * pg.values[static_cast<std::size_t>(j)];
          mean_dn += dn;
          mean_dn_nrm += dn * nrm[j];
        }
        mean_dn /= cols;
        mean_dn_nrm /= cols;
        T* dx = px.grad.data() + r * cols;
        const double inv = static_cast<double>(inv_sigma[static_cast<std::size_t>(r)]);
        for (int j = 0; j < cols; ++j) {
          const double dn = static_cast<double>(dy[j]) * pg.values[static_cast<std::size_t>(j)];
          dx[j] += static_cast<T>(inv * (dn - mean_dn - nrm[j] * mean_dn_nrm));
        }
      }
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Reductions and losses (f64-accumulated, shadow-carrying scalars)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
  double total = 0.0;
  for (const T v : a.values()) total += static_cast<double>(v);
  TensorT<T> result = TensorT<T>::scalar_value(static_cast<T>(total));
  result.node()->shadow = total;
  result.node()->has_shadow = true;
  detail::attach(result, {a}, [](detail::NodeT<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    const T g = self.grad[0];
    for (auto& gv : pa.grad) gv += g;
  });
  return result;
}

// Label-smoothed negative log-likelihood over [N,V] log-probability rows,
// averaged over rows with nonzero mask weight. With eps == 0 this takes the
// plain-NLL branch so the result is bit-equal to -log p(target).
template <class T>
TensorT<T> label_smoothed_nll_mean(const TensorT<T>& log_probs,
                                   const std::vector<std::int32_t>& targets,
                                   const std::vector<float>& mask, double eps) {
  if (log_probs.rank() != 2) throw ShapeError("label_smoothed_nll: expected [N,V] log-probs");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must be in [0,1)");
  const int n = log_probs.dim(0), v = log_probs.dim(1);
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw ShapeError("label_smoothed_nll: targets/mask length mismatch");
  double count = 0.0;
  for (float m : mask) count += m;
  if (count <= 0.0) throw InputError("label_smoothed_nll: no unmasked positions");
  double total = 0.0;
  const double smooth = v > 1 ? eps / (v - 1) : 0.0;
  for (int i = 0; i < n; ++i) {
    const std::int32_t t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= v)
      throw IndexError("target id " + std::to_string(t) + " out of range " + std::to_string(v));
    if (mask[static_cast<std::size_t>(i)] == 0.0f) continue;
    const T* row = log_probs.values().data() + static_cast<std::size_t>(i) * v;
    const double m = mask[static_cast<std::size_t>(i)];
    if (eps == 0.0) {
      total -= m * static_cast<double>(row[t]);
    } else {
      double row_sum = 0.0;
      for (int w = 0; w < v; ++w) row_sum += static_cast<double>(row[w]);
      const double tgt = static_cast<double>(row[t]);
      total -= m * ((1.0 - eps) * tgt + smooth * (row_sum - tgt));
    }
  }
  const double loss = total / count;
  TensorT<T> result = TensorT<T>::scalar_value(static_cast<T>(loss));
  result.node()->shadow = loss;
  result.node()->has_shadow = true;
  detail::attach(result, {log_probs},
                 [targets, mask, eps, smooth, count, v](detail::NodeT<T>& self) {
    auto& pl = *self.parents[0];
    pl.ensure_grad();
    const double g = static_cast<double>(self.grad[0]) / count;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (mask[i] == 0.0f) continue;
      const double m = mask[i];
      T* row = pl.grad.data() + i * static_cast<std::size_t>(v);
      if (eps == 0.0) {
        row[targets[i]] -= static_cast<T>(g * m);
      } else {
        for (int w = 0; w < v; ++w) row[w] -= static_cast<T>(g * m * smooth);
        row[targets[i]] -= static_cast<T>(g * m * (1.0 - eps - smooth));
      }
    }
  });
  return result;
}

// Single-row form: -[(1-eps) log p(t) + eps/(V-1) sum_{w != t} log p(w)].
// Validates that the input is a normalized log-distribution.
template <class T>
TensorT<T> label_smoothed_nll(const TensorT<T>& log_probs, std::int32_t target, double eps) {
  if (log_probs.rank() != 1) throw ShapeError("label_smoothed_nll: expected a [V] row");
  double mass = 0.0;
  for (const T lp : log_probs.values()) mass += std::exp(static_cast<double>(lp));
  if (std::abs(mass - 1.0) > 1e-4)
    throw InputError("label_smoothed_nll: input is not a normalized log-distribution");
  TensorT<T> rows = reshape(log_probs, {1, log_probs.dim(0)});
  return label_smoothed_nll_mean(rows, {target}, {1.0f}, eps);
}

// Masked token-mean KL( p || q ) with p given as probabilities and q as
// log-probabilities; 0 log 0 is treated as 0. Gradients flow to both sides
// unless the caller detached one (the expert side is produced under NoGrad).
template <class T>
TensorT<T> kl_masked_mean(const TensorT<T>& p, const TensorT<T>& log_q,
                          const std::vector<float>& mask) {
  if (p.shape() != log_q.shape())
    throw ShapeError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " +
                     shape_str(log_q.shape()));
  if (p.rank() != 2) throw ShapeError("kl_masked_mean: expected [N,V] tensors");
  const int n = p.dim(0), v = p.dim(1);
  if (static_cast<int>(mask.size()) != n) throw ShapeError("kl_masked_mean: mask length mismatch");
  double count = 0.0;
  for (float m : mask) count += m;
  if (count <= 0.0) throw InputError("kl_masked_mean: no unmasked positions");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)] == 0.0f) continue;
    const double m = mask[static_cast<std::size_t>(i)];
    const T* pr = p.values().data() + static_cast<std::size_t>(i) * v;
    const T* lq = log_q.values().data() + static_cast<std::size_t>(i) * v;
    double row = 0.0;
    for (int w = 0; w < v; ++w) {
      const double pv = static_cast<double>(pr[w]);
      // log in T precision so KL(p || log p) cancels exactly when the caller
      // derived log p from the same buffer.
      if (pv > 0.0)
        row += pv * (static_cast<double>(std::log(pr[w])) - static_cast<double>(lq[w]));
    }
    total += m * row;
  }
  const double loss = total / count;
  TensorT<T> result = TensorT<T>::scalar_value(static_cast<T>(loss));
  result.node()->shadow = loss;
  result.node()->has_shadow = true;
  detail::attach(result, {p, log_q}, [mask, count, v](detail::NodeT<T>& self) {
    auto& pp = *self.parents[0];
    auto& pq = *self.parents[1];
    const double g = static_cast<double>(self.grad[0]) / count;
    if (pq.requires_grad) {
      pq.ensure_grad();
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        const double gm = g * mask[i];
        const T* pr = pp.values.data() + i * static_cast<std::size_t>(v);
        T* dq = pq.grad.data() + i * static_cast<std::size_t>(v);
        for (int w = 0; w < v; ++w) dq[w] -= static_cast<T>(gm * static_cast<double>(pr[w]));
      }
    }
    if (pp.requires_grad) {
      pp.ensure_grad();
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        const double gm = g * mask[i];
        const T* pr = pp.values.data() + i * static_cast<std::size_t>(v);
        const T* lq = pq.values.data() + i * static_cast<std::size_t>(v);
        T* dp = pp.grad.data() + i * static_cast<std::size_t>(v);
        for (int w = 0; w < v; ++w) {
          if (pr[w] > T(0))
            dp[w] += static_cast<T>(
                gm * (static_cast<double>(std::log(pr[w])) + 1.0 - static_cast<double>(lq[w])));
        }
      }
    }
  });
  return result;
}

// Whole-tensor form: sum_w p(w) (ln p(w) - log q(w)). Validates both inputs.
template <class T>
TensorT<T> kl_divergence(const TensorT<T>& p, const TensorT<T>& log_q) {
  if (p.shape() != log_q.shape())
    throw ShapeError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " +
                     shape_str(log_q.shape()));
  double p_mass = 0.0, q_mass = 0.0;
  for (const T v : p.values()) {
    if (v < T(0)) throw InputError("kl_divergence: p has negative entries");
    p_mass += static_cast<double>(v);
  }
  for (const T v : log_q.values()) q_mass += std::exp(static_cast<double>(v));
  if (std::abs(p_mass - 1.0) > 1e-4) throw InputError("kl_divergence: p does not sum to 1");
  if (std::abs(q_mass - 1.0) > 1e-4)
    throw InputError("kl_divergence: log_q is not a normalized log-distribution");
  const int n = static_cast<int>(p.size());
  TensorT<T> p2 = reshape(p, {1, n});
  TensorT<T> q2 = reshape(log_q, {1, n});
  return kl_masked_mean(p2, q2, {1.0f});
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse accumulation from a scalar loss. Gradients of every reachable node
// are reset first, so each call reports exactly d loss / d node.
template <class T>
void backward(const TensorT<T>& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar");
  auto root = loss.node();
  std::vector<detail::NodeT<T>*> order;
  std::unordered_set<detail::NodeT<T>*> seen;
  std::vector<detail::NodeT<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    detail::NodeT<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::NodeT<T>* a, const detail::NodeT<T>* b) { return a->id > b->id; });
  for (auto* n : order) {
    n->ensure_grad();
    n->zero_grad();
  }
  root->grad[0] = T(1);
  for (auto* n : order) {
    if (n->backprop) n->backprop(*n);
  }
}

template <class T>
bool all_finite(const TensorT<T>& t) {
  for (const T v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

using Tensor = TensorT<float>;

}  // namespace dysi
