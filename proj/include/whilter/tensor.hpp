#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// Every op returns a new Tensor. When gradient recording is on and any input
// requires a gradient, the result keeps shared references to its inputs and a
// closure that pushes the output gradient back to them. Calling backward() on a
// scalar walks that graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "whilter/error.hpp"
#include "whilter/rng.hpp"

namespace whilter {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local bool grad_enabled = true;

template <std::floating_point T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <std::floating_point T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->data.assign(shape_numel(shape), T{0});
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " needs " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : impl_->shape.back(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item on " + shape_str(shape()));
    return impl_->data[0];
  }
  T at(std::size_t i) const { return impl_->data.at(i); }
  T at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; allocated (zeros) on first access.
  std::span<T> grad() { return impl_->ensure_grad(); }
  std::span<const T> grad() const { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  const std::string& name() const { return impl_->name; }
  void set_name(std::string name) { impl_->name = std::move(name); }

  /// True if every value is finite.
  bool all_finite() const {
    return std::all_of(impl_->data.begin(), impl_->data.end(),
                       [](T v) { return std::isfinite(v); });
  }

  /// Deep copy of the values; the copy is a fresh leaf.
  Tensor detach() const { return from(shape(), impl_->data, false); }

  /// Reverse pass from a single-element tensor.
  void backward() {
    if (numel() != 1) throw std::logic_error("backward() needs a scalar, got " + shape_str(shape()));
    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Impl* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    impl_->ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Impl* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  Impl& impl() const { return *impl_; }
  const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<Impl> impl_;
};

namespace detail {

template <std::floating_point T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(TensorImpl<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
  if (!grad_enabled) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return out;
  auto& impl = out.impl();
  impl.requires_grad = true;
  for (const auto* in : inputs) {
    if (in->defined()) impl.parents.push_back(in->impl_ptr());
  }
  impl.backward = std::move(backward);
  return out;
}

template <std::floating_point T>
std::vector<T>* grad_sink(const std::shared_ptr<TensorImpl<T>>& p) {
  return p && p->requires_grad ? &p->ensure_grad() : nullptr;
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <std::floating_point T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::TensorImpl<T>& self) {
    for (auto& p : self.parents) {
      if (auto* g = detail::grad_sink(p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::TensorImpl<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents.size() > 1 ? self.parents[1] : self.parents[0];
    // a*a records the same parent once; both factors still contribute.
    if (self.parents.size() == 1 || pa == pb) {
      if (auto* g = detail::grad_sink(pa)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += T{2} * pa->data[i] * self.grad[i];
      }
      return;
    }
    if (auto* g = detail::grad_sink(pa)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += pb->data[i] * self.grad[i];
    }
    if (auto* g = detail::grad_sink(pb)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += pa->data[i] * self.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, [factor](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    }
  });
}

namespace detail {

template <std::floating_point T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
  return make_result<T>(a.shape(), std::move(out), {&a}, [df](TensorImpl<T>& self) {
    auto& p = self.parents[0];
    if (auto* g = grad_sink(p)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += df(p->data[i], self.data[i]) * self.grad[i];
    }
  });
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

/// Exact (erf-based) GELU.
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      a, [](T x) { return T(0.5) * x * (T{1} + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T{1} + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return T{1} / (T{1} + std::exp(-x)); }, [](T, T y) { return y * (T{1} - y); });
}

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

/// Same values under a new shape with the same element count.
template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {&a}, [](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  return detail::make_result<T>({}, {acc}, {&a}, [](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

/// Mean over rows (the time axis) of a [T x d] matrix, giving [1 x d].
template <std::floating_point T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank2(a, "mean_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw std::invalid_argument("mean_rows: empty axis");
  std::vector<T> out(c, T{0});
  auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
  const T inv = T{1} / static_cast<T>(r);
  for (auto& v : out) v *= inv;
  return detail::make_result<T>({1, c}, std::move(out), {&a}, [r, c, inv](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products

/// [m x k] * [k x n]
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  std::vector<T> out(m * n, T{0});
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::TensorImpl<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (auto* g = detail::grad_sink(pa)) detail::gemm_nt(m, n, k, self.grad.data(), pb->data.data(), g->data());
    if (auto* g = detail::grad_sink(pb)) detail::gemm_tn(k, m, n, pa->data.data(), self.grad.data(), g->data());
  });
}

/// [m x k] * [n x k]^T
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw std::invalid_argument("matmul_nt: " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  std::vector<T> out(m * n, T{0});
  detail::gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::TensorImpl<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (auto* g = detail::grad_sink(pa)) detail::gemm_nn(m, n, k, self.grad.data(), pb->data.data(), g->data());
    if (auto* g = detail::grad_sink(pb)) detail::gemm_tn(n, m, k, self.grad.data(), pa->data.data(), g->data());
  });
}

/// [k x m]^T * [k x n]
template <std::floating_point T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul_tn");
  detail::require_rank2(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul_tn: " + shape_str(a.shape()) + "^T * " + shape_str(b.shape()));
  std::vector<T> out(m * n, T{0});
  detail::gemm_tn(m, k, n, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::TensorImpl<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (auto* g = detail::grad_sink(pa)) detail::gemm_nt(k, n, m, pb->data.data(), self.grad.data(), g->data());
    if (auto* g = detail::grad_sink(pb)) detail::gemm_nn(k, m, n, pa->data.data(), self.grad.data(), g->data());
  });
}

/// x [rows x in] * W[out x in]^T + b[out]. `bias` may be undefined.
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(weight, "linear");
  const std::size_t m = x.rows(), k = x.cols(), n = weight.rows();
  if (weight.cols() != k) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != n) throw std::invalid_argument("linear: bias size mismatch");
  std::vector<T> out(m * n, T{0});
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  }
  detail::gemm_nt(m, k, n, x.data().data(), weight.data().data(), out.data());
  return detail::make_result<T>({m, n}, std::move(out), {&x, &weight, &bias},
                                [m, k, n](detail::TensorImpl<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (auto* g = detail::grad_sink(px)) detail::gemm_nn(m, n, k, self.grad.data(), pw->data.data(), g->data());
    if (auto* g = detail::grad_sink(pw)) detail::gemm_tn(n, m, k, self.grad.data(), px->data.data(), g->data());
    if (self.parents.size() > 2) {
      if (auto* g = detail::grad_sink(self.parents[2])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[i * n + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Shift-invariant softmax of a vector or matrix along `axis`.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
    throw std::invalid_argument("softmax: unsupported axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
  }
  std::size_t groups, len, stride, group_step;
  if (x.rank() == 1) {
    groups = 1, len = x.dim(0), stride = 1, group_step = 0;
  } else if (axis == 1) {
    groups = x.dim(0), len = x.dim(1), stride = 1, group_step = x.dim(1);
  } else {
    groups = x.dim(1), len = x.dim(0), stride = x.dim(1), group_step = 1;
  }
  if (len == 0) throw std::invalid_argument("softmax: empty axis");
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * group_step;
    T mx = xd[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xd[base + i * stride]);
    T total{0};
    for (std::size_t i = 0; i < len; ++i) {
      const T e = std::exp(xd[base + i * stride] - mx);
      out[base + i * stride] = e;
      total += e;
    }
    const T inv = T{1} / total;
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] *= inv;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [groups, len, stride, group_step](detail::TensorImpl<T>& self) {
    auto* g = detail::grad_sink(self.parents[0]);
    if (!g) return;
    for (std::size_t gr = 0; gr < groups; ++gr) {
      const std::size_t base = gr * group_step;
      T dot{0};
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = base + i * stride;
        dot += self.grad[idx] * self.data[idx];
      }
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = base + i * stride;
        (*g)[idx] += self.data[idx] * (self.grad[idx] - dot);
      }
    }
  });
}

/// Per-row layer normalization of [rows x d] with learned gain and bias.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t r = x.rows(), d = x.cols();
  if (d == 0) throw std::invalid_argument("layer_norm: d must be >= 1");
  if (gain.numel() != d || bias.numel() != d) throw std::invalid_argument("layer_norm: parameter size mismatch");
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> out(r * d);
  std::vector<T> xhat(r * d);
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xd.data() + i * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = gd[j] * xhat[i * d + j] + bd[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::TensorImpl<T>& self) {
        auto& pg = self.parents[1];
        if (auto* g = detail::grad_sink(pg)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (auto* g = detail::grad_sink(self.parents[2])) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[i * d + j];
        }
        if (auto* g = detail::grad_sink(self.parents[0])) {
          std::vector<T> dxhat(d);
          for (std::size_t i = 0; i < r; ++i) {
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = self.grad[i * d + j] * pg->data[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * d + j];
            }
            mean_d /= static_cast<T>(d);
            mean_dx /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              (*g)[i * d + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
            }
          }
        }
      });
}

/// Inverted dropout: scales kept units by 1/(1-p) in training, identity otherwise.
template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->uniform() < p ? T{0} : keep_scale;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += mask[i] * self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Column slicing (used for attention heads)

template <std::floating_point T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (start + len > c) throw std::invalid_argument("slice_cols: out of range");
  std::vector<T> out(r * len);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xd.begin() + i * c + start, len, out.begin() + i * len);
  return detail::make_result<T>({r, len}, std::move(out), {&x}, [r, c, start, len](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) (*g)[i * c + start + j] += self.grad[i * len + j];
    }
  });
}

template <std::floating_point T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    c += p.cols();
  }
  std::vector<T> out(r * c);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p.cols();
    auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pd.begin() + i * pc, pc, out.begin() + i * c + off);
    off += pc;
  }
  Tensor<T> result = Tensor<T>::from({r, c}, std::move(out));
  if (!detail::grad_enabled) return result;
  bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor<T>& p) { return p.requires_grad(); });
  if (!any) return result;
  auto& impl = result.impl();
  impl.requires_grad = true;
  for (const auto& p : parts) impl.parents.push_back(p.impl_ptr());
  impl.backward = [r, c, offsets = std::move(offsets)](detail::TensorImpl<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (auto* g = detail::grad_sink(p)) {
        const std::size_t pc = p->shape.back();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) (*g)[i * pc + j] += self.grad[i * c + offsets[k] + j];
      }
    }
  };
  return result;
}

// ---------------------------------------------------------------------------
// Task-specific fused ops

/// out[t,d] = sum_l weights[l] * stack[l,t,d] for a constant [L x T x D]
/// stack. Only `weights` can receive a gradient.
template <std::floating_point T>
Tensor<T> weighted_layer_sum(std::span<const float> stack, std::size_t layers, std::size_t frames,
                             std::size_t dim, const Tensor<T>& weights) {
  if (weights.numel() != layers) {
    throw std::invalid_argument("weighted_layer_sum: " + std::to_string(weights.numel()) + " weights for " +
                                std::to_string(layers) + " layers");
  }
  const std::size_t plane = frames * dim;
  if (stack.size() != layers * plane) throw std::invalid_argument("weighted_layer_sum: stack size mismatch");
  std::vector<T> out(plane, T{0});
  auto wd = weights.data();
  for (std::size_t l = 0; l < layers; ++l) {
    const T w = wd[l];
    const float* src = stack.data() + l * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] += w * static_cast<T>(src[i]);
  }
  return detail::make_result<T>({frames, dim}, std::move(out), {&weights},
                                [stack, layers, plane](detail::TensorImpl<T>& self) {
    if (auto* g = detail::grad_sink(self.parents[0])) {
      for (std::size_t l = 0; l < layers; ++l) {
        const float* src = stack.data() + l * plane;
        T acc{0};
        for (std::size_t i = 0; i < plane; ++i) acc += self.grad[i] * static_cast<T>(src[i]);
        (*g)[l] += acc;
      }
    }
  });
}

/// Mean binary cross-entropy over all elements of `logits`, evaluated on
/// sigmoid probabilities clamped to [eps, 1 - eps]. Where the clamp is
/// active the gradient is zero; elsewhere it is (p - y) / N.
template <std::floating_point T>
Tensor<T> binary_cross_entropy(const Tensor<T>& logits, std::span<const T> targets, T eps = T(1e-7)) {
  const std::size_t n = logits.numel();
  if (targets.size() != n) throw std::invalid_argument("binary_cross_entropy: target size mismatch");
  if (n == 0) throw std::invalid_argument("binary_cross_entropy: empty input");
  std::vector<T> probs(n);
  std::vector<bool> clamped(n);
  T total{0};
  auto ld = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    T p = T{1} / (T{1} + std::exp(-ld[i]));
    clamped[i] = p < eps || p > T{1} - eps;
    p = std::clamp(p, eps, T{1} - eps);
    probs[i] = p;
    total -= targets[i] * std::log(p) + (T{1} - targets[i]) * std::log(T{1} - p);
  }
  const T inv_n = T{1} / static_cast<T>(n);
  std::vector<T> y(targets.begin(), targets.end());
  return detail::make_result<T>(
      {}, {total * inv_n}, {&logits},
      [probs = std::move(probs), clamped = std::move(clamped), y = std::move(y), inv_n](detail::TensorImpl<T>& self) {
        if (auto* g = detail::grad_sink(self.parents[0])) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            if (!clamped[i]) (*g)[i] += self.grad[0] * (probs[i] - y[i]) * inv_n;
          }
        }
      });
}

}  // namespace whilter
