#pragma once

// Dense row-major tensors with a reverse-mode autodiff tape.
//
// A Tensor is a shared handle onto a node. Operations on tensors that require
// gradients record their inputs and a backward rule on the output node; the
// recorded graph is flattened into a Tape (topological order) by backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hammer/errors.hpp"

namespace hammer {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    return make(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    return make(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    if (data.size() != n) {
      throw DimensionError(detail::concat("buffer of ", data.size(), " scalars does not match shape ",
                                         shape_str(shape)));
    }
    return make(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return make(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape.front(); }
  std::size_t cols() const { return rank() < 2 ? (rank() == 1 ? node_->shape[0] : 1) : node_->shape[1]; }

  std::span<const T> data() const { return node_->data; }
  /// Direct buffer access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on a tensor with more than one element");
    return node_->data[0];
  }
  std::vector<T> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  /// Gradient buffer; zeros if no backward pass reached this tensor.
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T{0}); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  static std::size_t checked_numel(const Shape& shape) {
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    return shape_numel(shape);
  }

  static Tensor make(Shape shape, std::vector<T> data, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  std::shared_ptr<Node> node_;
};

/// Graph flattened in topological order: every node appears after its inputs.
template <class T>
class Tape {
 public:
  using Node = TensorNode<T>;

  static Tape record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(root.node_ptr(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        auto parent = top.first->parents[top.second++];
        if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
      } else {
        tape.nodes_.push_back(std::move(top.first));
        stack.pop_back();
      }
    }
    return tape;
  }

  std::span<const std::shared_ptr<Node>> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates the root gradient (last node) back through every recorded op.
  void run_backward() const {
    if (nodes_.empty()) return;
    for (const auto& n : nodes_) {
      if (!n->is_leaf()) n->grad.assign(n->data.size(), T{0});
    }
    Node& root = *nodes_.back();
    root.ensure_grad();
    root.grad[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

/// Accumulates d(loss)/d(x) into every leaf reachable from `loss`.
/// Leaf gradients accumulate across calls; intermediate ones are reset.
template <class T>
Tape<T> backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not on the tape");
  auto tape = Tape<T>::record(loss);
  tape.run_backward();
  return tape;
}

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Builds an op output; records the backward rule only when some input needs gradients.
template <class T, class Fn>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward_fn) {
  check_finite(data, op);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) track = track || in->requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node_ptr());
    node->backward_fn = std::forward<Fn>(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <class T>
inline bool wants_grad(const std::shared_ptr<TensorNode<T>>& n) {
  if (!n->requires_grad) return false;
  n->ensure_grad();
  return true;
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_str(t.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T{0});
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      if (aip == T{0}) continue;
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T* G = self.grad.data();
    if (detail::wants_grad(pa)) {
      const T* Bd = pb->data.data();
      T* GA = pa->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = Bd + p * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (detail::wants_grad(pb)) {
      const T* Ad = pa->data.data();
      T* GB = pb->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = Ad[i * k + p];
          if (aip == T{0}) continue;
          T* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return detail::make_result<T>("transpose", {n, m}, std::move(out), {&a}, [m, n](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j * m + i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), a.to_vector(), {&a}, [](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <class T, class Fwd, class Dx>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Dx dx) {
  std::vector<T> out(a.numel());
  const auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(src[i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a}, [dx](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!wants_grad(p)) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * dx(p->data[i], self.data[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    for (auto& p : self.parents) {
      if (!detail::wants_grad(p)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    if (detail::wants_grad(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
    if (detail::wants_grad(self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[1]->grad[i] -= self.grad[i];
  });
}

/// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (detail::wants_grad(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    if (detail::wants_grad(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary<T>("scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

/// Logistic sigmoid; the output is kept strictly inside (0, 1) even where it
/// would round to an endpoint in T.
template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / T{2};
  return detail::unary<T>(
      "sigmoid", a,
      [lo, hi](T x) {
        const T y = x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
        return std::clamp(y, lo, hi);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  for (const T x : a.data()) {
    if (!(x > T{0})) throw NumericError("log of a non-positive value");
  }
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// x^e for x >= 0.
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& a, T e) {
  return detail::unary<T>(
      "pow", a, [e](T x) { return std::pow(x, e); },
      [e](T x, T) { return x == T{0} ? (e == T{1} ? T{1} : T{0}) : e * std::pow(x, e - T{1}); });
}

/// Clamp to [lo, hi]; gradient passes only where the input is strictly inside.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasting

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  double s = 0.0;  // wide accumulator: results depend less on element order
  for (const T x : a.data()) s += static_cast<double>(x);
  return detail::make_result<T>("sum", {}, std::vector<T>{static_cast<T>(s)}, {&a}, [](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    for (auto& g : p->grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

/// m x n -> 1 x n column means.
template <class T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank2(a, "mean_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) acc[j] += static_cast<double>(a[i * n + j]);
  std::vector<T> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<T>(acc[j] / static_cast<double>(m));
  return detail::make_result<T>("mean_rows", {1, n}, std::move(out), {&a}, [m, n](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    const T inv = T{1} / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j] * inv;
  });
}

/// Tiles a 1 x n row (or length-n vector) into m x n; backward sums columns.
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& v, std::size_t m) {
  if (m == 0) throw ContractError("repeat_rows: row count must be positive");
  if (v.rank() > 2 || (v.rank() == 2 && v.dim(0) != 1)) {
    throw DimensionError("repeat_rows expects a single row, got " + shape_str(v.shape()));
  }
  const std::size_t n = v.numel();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * n);
  return detail::make_result<T>("repeat_rows", {m, n}, std::move(out), {&v}, [m, n](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p->grad[j] += self.grad[i * n + j];
  });
}

/// Adds a length-n bias to every row of an m x n matrix.
template <class T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_rank2(a, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  std::vector<T> out(a.to_vector());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return detail::make_result<T>("add_row", {m, n}, std::move(out), {&a, &bias}, [m, n](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (detail::wants_grad(pa))
      for (std::size_t i = 0; i < m * n; ++i) pa->grad[i] += self.grad[i];
    if (detail::wants_grad(pb))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb->grad[j] += self.grad[i * n + j];
  });
}

/// Row-wise concatenation [a || b].
template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1), n = p + q;
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * p, p, out.begin() + i * n);
    std::copy_n(b.data().begin() + i * q, q, out.begin() + i * n + p);
  }
  return detail::make_result<T>("concat_cols", {m, n}, std::move(out), {&a, &b},
                                [m, p, q, n](TensorNode<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  if (detail::wants_grad(pa))
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < p; ++j) pa->grad[i * p + j] += self.grad[i * n + j];
                                  if (detail::wants_grad(pb))
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < q; ++j)
                                        pb->grad[i * q + j] += self.grad[i * n + p + j];
                                });
}

// ---------------------------------------------------------------------------
// Indexing

/// out[i] = a[index[i]]; backward scatter-adds.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> index) {
  detail::require_rank2(a, "gather_rows");
  const std::size_t rows = a.dim(0), n = a.dim(1);
  if (index.empty()) throw ContractError("gather_rows: empty index list");
  std::vector<T> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ContractError(detail::concat("gather_rows: index ", index[i], " out of range for ", rows, " rows"));
    }
    std::copy_n(a.data().begin() + index[i] * n, n, out.begin() + i * n);
  }
  const std::size_t m = index.size();
  return detail::make_result<T>("gather_rows", {m, n}, std::move(out), {&a},
                                [idx = std::move(index), n](TensorNode<T>& self) {
                                  auto& p = self.parents[0];
                                  if (!detail::wants_grad(p)) return;
                                  for (std::size_t i = 0; i < idx.size(); ++i)
                                    for (std::size_t j = 0; j < n; ++j) p->grad[idx[i] * n + j] += self.grad[i * n + j];
                                });
}

template <class T>
Tensor<T> row(const Tensor<T>& a, std::size_t i) {
  return gather_rows(a, std::vector<std::size_t>{i});
}

/// Column-wise max over row segments [offsets[g], offsets[g+1]). Ties route the
/// gradient to the first maximal row.
template <class T>
Tensor<T> segment_max(const Tensor<T>& a, std::span<const std::size_t> offsets) {
  detail::require_rank2(a, "segment_max");
  if (offsets.size() < 2 || offsets.back() != a.dim(0)) {
    throw ContractError("segment_max: offsets must cover every row");
  }
  const std::size_t groups = offsets.size() - 1, n = a.dim(1);
  std::vector<T> out(groups * n);
  std::vector<std::size_t> argmax(groups * n);
  for (std::size_t g = 0; g < groups; ++g) {
    if (offsets[g + 1] <= offsets[g]) throw ContractError("segment_max: empty segment");
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = offsets[g];
      T v = a[best * n + j];
      for (std::size_t r = offsets[g] + 1; r < offsets[g + 1]; ++r) {
        if (a[r * n + j] > v) {
          v = a[r * n + j];
          best = r;
        }
      }
      out[g * n + j] = v;
      argmax[g * n + j] = best;
    }
  }
  return detail::make_result<T>("segment_max", {groups, n}, std::move(out), {&a},
                                [am = std::move(argmax), n](TensorNode<T>& self) {
                                  auto& p = self.parents[0];
                                  if (!detail::wants_grad(p)) return;
                                  for (std::size_t k = 0; k < am.size(); ++k) p->grad[am[k] * n + k % n] += self.grad[k];
                                });
}

/// out[i] = sum_j weight[i][j] * a[index[i][j]] with constant weights
/// (row-major m x k index/weight tables).
template <class T>
Tensor<T> weighted_gather(const Tensor<T>& a, std::vector<std::size_t> index, std::vector<T> weight,
                          std::size_t k) {
  detail::require_rank2(a, "weighted_gather");
  if (k == 0 || index.size() != weight.size() || index.size() % k != 0 || index.empty()) {
    throw ContractError("weighted_gather: malformed index/weight tables");
  }
  const std::size_t m = index.size() / k, n = a.dim(1), rows = a.dim(0);
  std::vector<T> out(m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t src = index[i * k + t];
      if (src >= rows) throw ContractError("weighted_gather: index out of range");
      const T w = weight[i * k + t];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += w * a[src * n + j];
    }
  }
  return detail::make_result<T>(
      "weighted_gather", {m, n}, std::move(out), {&a},
      [idx = std::move(index), w = std::move(weight), m, n, k](TensorNode<T>& self) {
        auto& p = self.parents[0];
        if (!detail::wants_grad(p)) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < n; ++j) p->grad[idx[i * k + t] * n + j] += w[i * k + t] * self.grad[i * n + j];
      });
}

// ---------------------------------------------------------------------------
// Softmax family

/// Softmax over the last dimension, stabilised by max subtraction.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  detail::check_finite(x.node()->data, "softmax input");
  const std::size_t n = x.rank() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T s{0};
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {&x}, [rows, n](TensorNode<T>& self) {
    auto& p = self.parents[0];
    if (!detail::wants_grad(p)) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) p->grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

/// Mean softmax cross-entropy of m x K logits against integer targets.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  detail::check_finite(logits.node()->data, "cross_entropy input");
  const std::size_t K = logits.rank() == 0 ? 1 : logits.shape().back();
  const std::size_t m = logits.numel() / K;
  if (targets.size() != m) throw DimensionError("cross_entropy: one target per logit row required");
  std::vector<T> probs(logits.numel());
  T loss{0};
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= K) throw ContractError("cross_entropy: target outside vocabulary");
    const T* z = logits.data().data() + r * K;
    const T mx = *std::max_element(z, z + K);
    T s{0};
    for (std::size_t j = 0; j < K; ++j) {
      probs[r * K + j] = std::exp(z[j] - mx);
      s += probs[r * K + j];
    }
    for (std::size_t j = 0; j < K; ++j) probs[r * K + j] /= s;
    loss += std::log(s) + mx - z[targets[r]];
  }
  loss /= static_cast<T>(m);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return detail::make_result<T>("cross_entropy", {}, std::vector<T>{loss}, {&logits},
                                [pr = std::move(probs), tg = std::move(tg), m, K](TensorNode<T>& self) {
                                  auto& p = self.parents[0];
                                  if (!detail::wants_grad(p)) return;
                                  const T g = self.grad[0] / static_cast<T>(m);
                                  for (std::size_t r = 0; r < m; ++r)
                                    for (std::size_t j = 0; j < K; ++j)
                                      p->grad[r * K + j] += g * (pr[r * K + j] - (j == tg[r] ? T{1} : T{0}));
                                });
}

/// softmax(q k^T / sqrt(d)) v with d the query width.
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  detail::require_rank2(q, "attention");
  detail::require_rank2(k, "attention");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " vs key " + shape_str(k.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " vs value " + shape_str(v.shape()));
  }
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(q.dim(1)));
  auto scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax_lastdim(scores), v);
}

/// Casts values between scalar types; the result is a fresh leaf.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(out));
}

}  // namespace hammer
